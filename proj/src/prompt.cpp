#include "dcpl/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <omp.h>
#include <sstream>

#include "dcpl/errors.hpp"

namespace dcpl::prompt {

namespace {

void check_vector(const ad::Tensor& t, std::size_t d, const char* what) {
    if (t.rank() != 1 || t.dim(0) != d)
        throw DimensionError(std::string(what) + ": expected [" + std::to_string(d) + "], got " + ad::shape_str(t.shape()));
}

std::size_t position_of(std::span<const std::size_t> classes, std::size_t label) {
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end())
        throw PreconditionError("sample with label " + std::to_string(label) + " is outside the training classes");
    return static_cast<std::size_t>(it - classes.begin());
}

// Image-side feature under the variant: x, x_d, or x_d with its perturbation.
ad::Tensor image_side(const PromptLearner& l, const Features& f, Mode mode, Rng& rng) {
    const Variant& v = l.config.variant;
    ad::Tensor x_d = v.uses_vc() ? fuse_visual(f.x, control_forward(l.vc, f.r_b)) : f.x;
    switch (v.kind) {
        case VariantKind::Dcpl: return add_adaptive_noise(x_d, f.x, l.config.noise, mode, rng);
        case VariantKind::Dropout: return apply_dropout(x_d, v.rate, mode, rng);
        case VariantKind::Mutation: return apply_mutation(x_d, v.rate, mode, rng);
        default: return x_d;
    }
}

ad::Tensor text_side(const PromptLearner& l, const FrozenModels& m, const Features& f, std::span<const std::size_t> classes) {
    const ad::Tensor ctx = l.config.variant.uses_lc() ? shift_context(l.ctx, control_forward(l.lc, f.r_b)) : l.ctx;
    return build_prompts(ctx, *m.clip, classes);
}

}  // namespace

std::string Variant::name() const {
    std::ostringstream os;
    switch (kind) {
        case VariantKind::Dcpl: return "dcpl";
        case VariantKind::CoopBase: return "coop";
        case VariantKind::VcOnly: return "vc_only";
        case VariantKind::LcOnly: return "lc_only";
        case VariantKind::Dropout: os << "dropout:" << rate; return os.str();
        case VariantKind::Mutation: os << "mutation:" << rate; return os.str();
    }
    return "dcpl";
}

Variant Variant::parse(const std::string& text) {
    Variant v;
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    if (head == "dcpl") v.kind = VariantKind::Dcpl;
    else if (head == "coop") v.kind = VariantKind::CoopBase;
    else if (head == "vc_only") v.kind = VariantKind::VcOnly;
    else if (head == "lc_only") v.kind = VariantKind::LcOnly;
    else if (head == "dropout") v.kind = VariantKind::Dropout;
    else if (head == "mutation") v.kind = VariantKind::Mutation;
    else throw ConfigError("unknown variant '" + text + "' (expected dcpl, coop, vc_only, lc_only, dropout:R or mutation:R)");
    const bool rated = v.kind == VariantKind::Dropout || v.kind == VariantKind::Mutation;
    if (rated != (colon != std::string::npos)) throw ConfigError("variant '" + text + "': only dropout and mutation take a rate");
    if (rated) {
        try {
            std::size_t used = 0;
            v.rate = std::stod(text.substr(colon + 1), &used);
            if (used != text.size() - colon - 1) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ConfigError("variant '" + text + "': rate is not a number");
        }
    }
    v.validate();
    return v;
}

void Variant::validate() const {
    if (kind == VariantKind::Dropout && !(rate >= 0.0 && rate < 1.0))
        throw ConfigError("dropout rate " + std::to_string(rate) + " outside [0, 1)");
    if (kind == VariantKind::Mutation && !(rate >= 0.0 && rate <= 1.0))
        throw ConfigError("mutation rate " + std::to_string(rate) + " outside [0, 1]");
}

nn::ParamList PromptLearner::parameters() const {
    nn::ParamList out{{"ctx", ctx}};
    if (config.variant.uses_lc()) lc.collect("lc", out);
    if (config.variant.uses_vc()) vc.collect("vc", out);
    return out;
}

nn::ParamList PromptLearner::all_parameters() const {
    nn::ParamList out{{"ctx", ctx}};
    lc.collect("lc", out);
    vc.collect("vc", out);
    return out;
}

PromptLearner make_learner(const LearnerConfig& config, const clip::DualEncoder& clip_model, std::size_t d_r, Rng& rng) {
    config.variant.validate();
    if (config.n_ctx == 0) throw ConfigError("at least one context token is required");
    if (config.n_ctx + 1 > clip_model.text.max_len())
        throw ConfigError(std::to_string(config.n_ctx) + " context tokens do not fit the text context length " +
                          std::to_string(clip_model.text.max_len()));
    PromptLearner l;
    l.config = config;
    const std::size_t d_p = clip_model.config.width, d_t = clip_model.config.embed_dim;
    const std::size_t hidden = config.hidden ? config.hidden : (d_r + 1) / 2;
    if (config.n_ctx == clip::Vocabulary::kPrefixLen)
        l.ctx = ad::Tensor::from({config.n_ctx, d_p}, clip::prefix_embeddings(clip_model).to_vector(), true);
    else
        l.ctx = nn::init_normal(rng, {config.n_ctx, d_p});
    l.ctx.set_requires_grad(true);
    l.lc = nn::make_mlp(d_r, hidden, d_p, rng, true);
    l.vc = nn::make_mlp(d_r, hidden, d_t, rng, true);
    return l;
}

Features extract_features(const FrozenModels& models, const ImageSample& image) {
    ad::NoGradGuard guard;
    Features f;
    f.x = clip::encode_image(models.clip->visual, image);
    f.r_b = lsdm::encode_domain(*models.lsdm, image);
    f.label = image.label;
    f.id = image.id;
    return f;
}

std::vector<Features> extract_features(const FrozenModels& models, std::span<const ImageSample> images) {
    std::vector<Features> out(images.size());
#pragma omp parallel for schedule(static) if (images.size() > 16 && !omp_in_parallel())
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = extract_features(models, images[i]);
    return out;
}

ad::Tensor control_forward(const nn::Mlp& net, const ad::Tensor& r_b) {
    check_vector(r_b, net.first.in_dim(), "control net input");
    return net.forward(r_b);
}

ad::Tensor shift_context(const ad::Tensor& ctx, const ad::Tensor& d_l) {
    if (ctx.rank() != 2) throw DimensionError("context must be [M_ctx×d_p], got " + ad::shape_str(ctx.shape()));
    check_vector(d_l, ctx.dim(1), "language bias");
    return ad::add(ctx, d_l);
}

ad::Tensor fuse_visual(const ad::Tensor& x, const ad::Tensor& d_v) {
    check_vector(d_v, x.numel(), "visual bias");
    check_vector(x, d_v.numel(), "image embedding");
    return ad::add(x, d_v);
}

ad::Tensor add_adaptive_noise(const ad::Tensor& x_d, const ad::Tensor& x, const NoiseConfig& cfg, Mode mode, Rng& rng,
                              const ad::Tensor* forced_z) {
    check_vector(x, x_d.numel(), "noise reference embedding");
    if (!cfg.enabled || (mode == Mode::Eval && !cfg.apply_at_eval)) return x_d;
    double sigma = 0.0;
    for (double v : x.data()) sigma += v;
    sigma /= static_cast<double>(x.numel());
    std::vector<double> noise(x_d.numel());
    if (forced_z) {
        check_vector(*forced_z, x_d.numel(), "forced noise");
        for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = sigma * (*forced_z)[i];
    } else {
        for (auto& v : noise) v = sigma * rng.normal();
    }
    return ad::add(x_d, ad::Tensor::from(x_d.shape(), std::move(noise)));
}

ad::Tensor apply_dropout(const ad::Tensor& x_d, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate " + std::to_string(rate) + " outside [0, 1)");
    if (mode == Mode::Eval || rate == 0.0) return x_d;
    std::vector<double> keep(x_d.numel());
    for (auto& k : keep) k = rng.bernoulli(rate) ? 0.0 : 1.0 / (1.0 - rate);
    return ad::mul(x_d, ad::Tensor::from(x_d.shape(), std::move(keep)));
}

ad::Tensor apply_mutation(const ad::Tensor& x_d, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("mutation rate " + std::to_string(rate) + " outside [0, 1]");
    if (mode == Mode::Eval || rate == 0.0) return x_d;
    std::vector<double> delta(x_d.numel(), 0.0);
    const auto v = x_d.data();
    for (std::size_t i = 0; i < delta.size(); ++i)
        if (rng.bernoulli(rate)) delta[i] = 0.1 * std::abs(v[i]) * rng.normal();
    return ad::add(x_d, ad::Tensor::from(x_d.shape(), std::move(delta)));
}

ad::Tensor build_prompts(const ad::Tensor& shifted_ctx, const clip::DualEncoder& clip_model, std::span<const std::size_t> classes) {
    if (classes.size() < 2) throw PreconditionError("prompts need at least 2 classes");
    std::vector<ad::Tensor> omegas;
    omegas.reserve(classes.size());
    for (auto c : classes)
        omegas.push_back(clip::encode_text(clip_model.text, ad::concat_rows({shifted_ctx, clip::class_token_embedding(clip_model, c)})));
    return ad::concat_rows(omegas);
}

ad::Tensor variant_logits(const PromptLearner& learner, const FrozenModels& models, const Features& f,
                          std::span<const std::size_t> classes, Mode mode, Rng& rng) {
    const ad::Tensor x_hat = image_side(learner, f, mode, rng);
    return clip::similarity_logits(x_hat, text_side(learner, models, f, classes), models.clip->log_tau);
}

ad::Tensor dcpl_probs(const PromptLearner& learner, const FrozenModels& models, const Features& f,
                      std::span<const std::size_t> classes, Mode mode, Rng& rng) {
    return ad::softmax(variant_logits(learner, models, f, classes, mode, rng));
}

nn::ParamList frozen_parameters(const FrozenModels& models) {
    nn::ParamList out = models.clip->parameters();
    models.lsdm->collect("lsdm", out);
    return out;
}

StepResult train_step(PromptLearner& learner, const FrozenModels& models, std::span<const Features* const> batch,
                      std::span<const std::size_t> classes, double lr, Rng& rng, GradientAudit* audit) {
    if (batch.empty()) throw PreconditionError("empty training batch");
    std::vector<std::size_t> labels;
    for (const Features* f : batch) labels.push_back(position_of(classes, f->label));

    // Without the language branch the prompts do not depend on the image, so
    // one text pass serves the whole batch.
    std::optional<ad::Tensor> shared_prompts;
    if (!learner.config.variant.uses_lc()) shared_prompts = build_prompts(learner.ctx, *models.clip, classes);
    std::vector<ad::Tensor> rows;
    for (const Features* f : batch) {
        const ad::Tensor x_hat = image_side(learner, *f, Mode::Train, rng);
        const ad::Tensor w = shared_prompts ? *shared_prompts : text_side(learner, models, *f, classes);
        rows.push_back(ad::reshape(clip::similarity_logits(x_hat, w, models.clip->log_tau), {1, classes.size()}));
    }
    ad::Tensor loss = ad::softmax_cross_entropy_rows(ad::concat_rows(rows), labels);
    StepResult result;
    result.loss = loss.item();
    if (!std::isfinite(result.loss)) throw TrainingError("prompt-learning loss is not finite");
    ad::backward(loss);
    if (audit) {
        for (const Features* f : batch) {
            audit->labels.push_back(f->label);
            audit->sample_ids.push_back(f->id);
        }
        for (const auto& p : frozen_parameters(models)) audit->frozen_with_grad += p.tensor.has_grad();
        ++audit->steps;
    }
    const nn::ParamList params = learner.parameters();
    std::vector<ad::Tensor> tensors;
    for (const auto& p : params) {
        tensors.push_back(p.tensor);
        result.updated_values += p.tensor.numel();
    }
    ad::sgd_step(tensors, lr);
    for (const auto& p : params)
        for (double v : p.tensor.data())
            if (!std::isfinite(v)) throw TrainingError("update of '" + p.name + "' produced non-finite values; lower the learning rate");
    return result;
}

std::vector<std::size_t> predict(const PromptLearner& learner, const FrozenModels& models, std::span<const Features> images,
                                 std::span<const std::size_t> classes, Rng& rng) {
    ad::NoGradGuard guard;
    std::optional<ad::Tensor> shared_prompts;
    if (!learner.config.variant.uses_lc()) shared_prompts = build_prompts(learner.ctx, *models.clip, classes);
    std::vector<std::size_t> out;
    out.reserve(images.size());
    for (const auto& f : images) {
        const ad::Tensor x_hat = image_side(learner, f, Mode::Eval, rng);
        const ad::Tensor w = shared_prompts ? *shared_prompts : text_side(learner, models, f, classes);
        const ad::Tensor logits = clip::similarity_logits(x_hat, w, models.clip->log_tau);
        const auto l = logits.data();
        out.push_back(static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin()));
    }
    return out;
}

}  // namespace dcpl::prompt
