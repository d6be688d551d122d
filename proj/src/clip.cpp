#include "dcpl/clip.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "dcpl/errors.hpp"

namespace dcpl::clip {

namespace {

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

void clamp_log_tau(ad::Tensor& log_tau) {
    auto v = log_tau.mutable_data();
    v[0] = std::clamp(v[0], std::log(kMinTau), std::log(kMaxTau));
}

}  // namespace

ad::Tensor VisualEncoder::forward(const ad::Tensor& patches) const {
    if (patches.rank() != 2 || patches.dim(0) + 1 != position.dim(0) || patches.dim(1) != patch_embed.in_dim())
        throw DimensionError("visual encoder got patches " + ad::shape_str(patches.shape()));
    ad::Tensor tokens = ad::concat_rows({class_token, patch_embed.forward(patches)});
    tokens = ad::add(tokens, position);
    tokens = nn::run_blocks(blocks, tokens);
    return proj.forward(ln_post.forward(ad::row(tokens, 0)));
}

void VisualEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
    patch_embed.collect(prefix + ".patch_embed", out);
    out.push_back({prefix + ".class_token", class_token});
    out.push_back({prefix + ".position", position});
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    ln_post.collect(prefix + ".ln_post", out);
    proj.collect(prefix + ".proj", out);
}

ad::Tensor TextEncoder::forward(const ad::Tensor& embeddings) const {
    if (embeddings.rank() != 2 || embeddings.dim(1) != position.dim(1))
        throw DimensionError("text encoder got embeddings " + ad::shape_str(embeddings.shape()));
    const std::size_t seq = embeddings.dim(0);
    if (seq > max_len())
        throw DimensionError("text length " + std::to_string(seq) + " exceeds context length " + std::to_string(max_len()));
    const auto rows = iota(seq);
    ad::Tensor h = ad::add(embeddings, seq == max_len() ? position : ad::gather_rows(position, rows));
    h = nn::run_blocks(blocks, h);
    return proj.forward(ln_final.forward(ad::row(h, seq - 1)));
}

void TextEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
    tokens.collect(prefix + ".tokens", out);
    out.push_back({prefix + ".position", position});
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    ln_final.collect(prefix + ".ln_final", out);
    proj.collect(prefix + ".proj", out);
}

double DualEncoder::tau() const { return std::exp(log_tau.item()); }

nn::ParamList DualEncoder::parameters() const {
    nn::ParamList out;
    visual.collect("visual", out);
    text.collect("text", out);
    out.push_back({"log_tau", log_tau});
    return out;
}

DualEncoder make_dual_encoder(const ClipConfig& c, Rng& rng) {
    if (c.init_tau < kMinTau || c.init_tau > kMaxTau) throw ConfigError("initial temperature outside [0.01, 100]");
    if (c.max_text_len < Vocabulary::kPrefixLen + 1) throw ConfigError("text context too short for the prompt template");
    DualEncoder m;
    m.config = c;
    const std::size_t pdim = c.patch * c.patch * 3;
    m.visual.patch = c.patch;
    m.visual.patch_embed = nn::make_linear(pdim, c.width, rng);
    m.visual.class_token = nn::init_normal(rng, {c.width});
    m.visual.position = nn::init_normal(rng, {c.patch_count() + 1, c.width});
    for (std::size_t i = 0; i < c.layers; ++i) m.visual.blocks.push_back(nn::make_block(c.width, c.heads, c.mlp_hidden, rng));
    m.visual.ln_post = nn::make_layer_norm(c.width);
    m.visual.proj = nn::make_linear(c.width, c.embed_dim, rng);

    m.text.tokens = nn::make_embedding(Vocabulary::size(c.num_classes), c.width, rng);
    m.text.position = nn::init_normal(rng, {c.max_text_len, c.width});
    for (std::size_t i = 0; i < c.layers; ++i) m.text.blocks.push_back(nn::make_block(c.width, c.heads, c.mlp_hidden, rng));
    m.text.ln_final = nn::make_layer_norm(c.width);
    m.text.proj = nn::make_linear(c.width, c.embed_dim, rng);

    m.log_tau = ad::Tensor::scalar(std::log(c.init_tau), true);
    return m;
}

ad::Tensor encode_image(const VisualEncoder& enc, const ImageSample& image) {
    return enc.forward(patchify(image, enc.patch));
}

ad::Tensor encode_image(const VisualEncoder& enc, const ad::Tensor& pixels) {
    return enc.forward(patchify(pixels, enc.patch));
}

ad::Tensor encode_text(const TextEncoder& enc, const ad::Tensor& token_embeddings) { return enc.forward(token_embeddings); }

std::vector<std::size_t> template_tokens(std::size_t class_index) {
    return {Vocabulary::kA, Vocabulary::kPhoto, Vocabulary::kOf, Vocabulary::kA, Vocabulary::class_token(class_index)};
}

ad::Tensor prefix_embeddings(const DualEncoder& model) {
    const std::size_t ids[] = {Vocabulary::kA, Vocabulary::kPhoto, Vocabulary::kOf, Vocabulary::kA};
    return model.text.tokens.lookup(std::span<const std::size_t>(ids));
}

ad::Tensor caption_embeddings(const DualEncoder& model, std::span<const std::size_t> prefix, std::size_t class_index) {
    if (class_index >= model.config.num_classes) throw IndexError("class " + std::to_string(class_index) + " not in vocabulary");
    std::vector<std::size_t> ids(prefix.begin(), prefix.end());
    for (auto id : ids)
        if (id >= Vocabulary::kWords) throw IndexError("caption prefix token " + std::to_string(id) + " is not a word");
    ids.push_back(Vocabulary::class_token(class_index));
    return model.text.tokens.lookup(std::span<const std::size_t>(ids));
}

ad::Tensor template_embeddings(const DualEncoder& model, std::size_t class_index) {
    if (class_index >= model.config.num_classes) throw IndexError("class " + std::to_string(class_index) + " not in vocabulary");
    const auto ids = template_tokens(class_index);
    return model.text.tokens.lookup(std::span<const std::size_t>(ids));
}

ad::Tensor class_token_embedding(const DualEncoder& model, std::size_t class_index) {
    if (class_index >= model.config.num_classes) throw IndexError("class " + std::to_string(class_index) + " not in vocabulary");
    return model.text.tokens.lookup(Vocabulary::class_token(class_index));
}

std::vector<ad::Tensor> template_class_embeddings(const DualEncoder& model, std::span<const std::size_t> classes) {
    std::vector<ad::Tensor> out;
    out.reserve(classes.size());
    for (auto c : classes) out.push_back(encode_text(model.text, template_embeddings(model, c)));
    return out;
}

ad::Tensor similarity_logits(const ad::Tensor& x, const ad::Tensor& class_embeddings, const ad::Tensor& log_tau) {
    if (x.rank() != 1 || class_embeddings.rank() != 2 || class_embeddings.dim(1) != x.dim(0))
        throw DimensionError("similarity_logits: image " + ad::shape_str(x.shape()) + " vs classes " +
                             ad::shape_str(class_embeddings.shape()));
    ad::Tensor cos = ad::matmul(ad::normalize(class_embeddings), ad::normalize(x));
    return ad::mul(cos, ad::exp(ad::scale(log_tau, -1.0)));
}

ad::Tensor zero_shot_probs(const DualEncoder& model, const ad::Tensor& x, const std::vector<ad::Tensor>& class_embeddings) {
    if (class_embeddings.size() < 2) throw PreconditionError("zero-shot classification needs at least 2 classes");
    return ad::softmax(similarity_logits(x, ad::concat_rows(class_embeddings), model.log_tau));
}

ad::Tensor contrastive_loss(const ad::Tensor& image_embeddings, const ad::Tensor& text_embeddings, const ad::Tensor& log_tau) {
    if (image_embeddings.rank() != 2 || image_embeddings.shape() != text_embeddings.shape())
        throw DimensionError("contrastive_loss: " + ad::shape_str(image_embeddings.shape()) + " vs " +
                             ad::shape_str(text_embeddings.shape()));
    const std::size_t b = image_embeddings.dim(0);
    if (b < 2) throw ConfigError("contrastive batch needs at least 2 pairs");
    ad::Tensor sims = ad::matmul(ad::normalize(image_embeddings), ad::transpose(ad::normalize(text_embeddings)));
    ad::Tensor logits = ad::mul(sims, ad::exp(ad::scale(log_tau, -1.0)));
    const auto labels = iota(b);
    ad::Tensor i2t = ad::softmax_cross_entropy_rows(logits, labels);
    ad::Tensor t2i = ad::softmax_cross_entropy_rows(ad::transpose(logits), labels);
    return ad::scale(ad::add(i2t, t2i), 0.5);
}

ad::Tensor contrastive_loss(const DualEncoder& model, std::span<const CaptionedImage* const> pairs) {
    std::vector<ad::Tensor> xs, ws;
    for (const CaptionedImage* p : pairs) {
        xs.push_back(encode_image(model.visual, p->image));
        ws.push_back(encode_text(model.text, p->prefix.empty() ? template_embeddings(model, p->image.label)
                                                               : caption_embeddings(model, p->prefix, p->image.label)));
    }
    return contrastive_loss(ad::concat_rows(xs), ad::concat_rows(ws), model.log_tau);
}

PretrainReport pretrain_clip(DualEncoder& model, std::span<const ImageSample> corpus, const PretrainOptions& options, Rng& rng) {
    std::vector<CaptionedImage> pairs;
    pairs.reserve(corpus.size());
    for (const auto& img : corpus) pairs.push_back({img, {}});
    return pretrain_clip(model, pairs, options, rng);
}

PretrainReport pretrain_clip(DualEncoder& model, std::span<const CaptionedImage> corpus, const PretrainOptions& options, Rng& rng) {
    PretrainReport report;
    const nn::ParamList params = model.parameters();
    if (options.epochs > 0) {
        std::map<std::size_t, std::vector<const CaptionedImage*>> by_class;
        for (const auto& p : corpus) by_class[p.image.label].push_back(&p);
        if (by_class.size() < 2) throw DataError("pretraining corpus covers fewer than 2 classes");
        std::size_t rounds = corpus.size();
        for (auto& [c, v] : by_class) rounds = std::min(rounds, v.size());

        nn::unfreeze(params);
        nn::Adam opt(nn::trainable(params), options.lr, 0.9, 0.98, 1e-8);
        for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
            for (auto& [c, v] : by_class) rng.shuffle(v);
            double total = 0.0;
            for (std::size_t r = 0; r < rounds; ++r) {
                std::vector<const CaptionedImage*> batch;
                for (auto& [c, v] : by_class) batch.push_back(v[r]);
                rng.shuffle(batch);
                ad::Tensor loss = contrastive_loss(model, batch);
                const double value = loss.item();
                if (!std::isfinite(value))
                    throw TrainingError("contrastive loss became non-finite at epoch " + std::to_string(epoch));
                total += value;
                ad::backward(loss);
                opt.step();
                clamp_log_tau(model.log_tau);
            }
            report.epoch_loss.push_back(total / static_cast<double>(rounds));
        }
    }
    nn::freeze(params);
    return report;
}

double zero_shot_accuracy(const DualEncoder& model, std::span<const ImageSample> images, std::span<const std::size_t> classes) {
    if (classes.empty()) throw ConfigError("zero-shot evaluation over an empty class subset");
    ad::NoGradGuard guard;
    const auto omegas = template_class_embeddings(model, classes);
    const ad::Tensor stacked = ad::concat_rows(omegas);
    std::size_t correct = 0, total = 0;
    for (const auto& img : images) {
        auto it = std::find(classes.begin(), classes.end(), img.label);
        if (it == classes.end()) continue;
        const ad::Tensor logits = similarity_logits(encode_image(model.visual, img), stacked, model.log_tau);
        const auto l = logits.data();
        const auto pred = static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin());
        correct += (pred == static_cast<std::size_t>(it - classes.begin()));
        ++total;
    }
    if (total == 0) throw DataError("no images belong to the evaluated classes");
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace dcpl::clip
