#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcpl/clip.hpp"
#include "dcpl/lsdm.hpp"
#include "dcpl/nn.hpp"
#include "dcpl/rng.hpp"

// Domain-controlled prompt learning: shared context tokens, a language and a
// visual control net turning the domain embedding R_b into biases, adaptive
// noise on the fused image feature, and the baseline/ablation variants.
namespace dcpl::prompt {

enum class VariantKind { Dcpl, CoopBase, VcOnly, LcOnly, Dropout, Mutation };

struct Variant {
    VariantKind kind = VariantKind::Dcpl;
    double rate = 0.0;  // dropout / mutation probability

    bool uses_lc() const { return kind != VariantKind::CoopBase && kind != VariantKind::VcOnly; }
    bool uses_vc() const { return kind != VariantKind::CoopBase && kind != VariantKind::LcOnly; }
    // Adaptive noise belongs to the full method only; dropout and mutation
    // replace it.
    bool uses_noise() const { return kind == VariantKind::Dcpl; }

    // "dcpl", "coop", "vc_only", "lc_only", "dropout:0.3", "mutation:0.05".
    std::string name() const;
    static Variant parse(const std::string& text);
    void validate() const;
};

struct NoiseConfig {
    bool enabled = true;
    bool apply_at_eval = false;
};

struct LearnerConfig {
    std::size_t n_ctx = 4;
    std::size_t hidden = 0;  // 0 → ceil(d_r / 2)
    Variant variant;
    NoiseConfig noise;
};

enum class Mode { Train, Eval };

struct PromptLearner {
    LearnerConfig config;
    ad::Tensor ctx;  // [M_ctx×d_p]
    nn::Mlp lc;      // d_r → hidden → d_p
    nn::Mlp vc;      // d_r → hidden → d_t

    // Everything the variant optimises: the context, plus whichever control
    // nets it uses.
    nn::ParamList parameters() const;
    // Context and both nets regardless of the variant (for checkpoints).
    nn::ParamList all_parameters() const;
};

// Context starts at the "a photo of a" embeddings when the prefix length
// matches M_ctx, else N(0, 0.02²). Second control-net layers start at zero.
PromptLearner make_learner(const LearnerConfig& config, const clip::DualEncoder& clip_model, std::size_t d_r, Rng& rng);

struct FrozenModels {
    const clip::DualEncoder* clip = nullptr;
    const lsdm::LsdmEncoder* lsdm = nullptr;
};

// Per-image frozen-encoder outputs; computed once because both encoders are
// fixed during prompt learning.
struct Features {
    ad::Tensor x;    // [d_t]
    ad::Tensor r_b;  // [d_r]
    std::size_t label = 0;
    std::uint64_t id = 0;
};

Features extract_features(const FrozenModels& models, const ImageSample& image);
std::vector<Features> extract_features(const FrozenModels& models, std::span<const ImageSample> images);

ad::Tensor control_forward(const nn::Mlp& net, const ad::Tensor& r_b);
// Adds the same bias row to every context token.
ad::Tensor shift_context(const ad::Tensor& ctx, const ad::Tensor& d_l);
ad::Tensor fuse_visual(const ad::Tensor& x, const ad::Tensor& d_v);

// σ_m = mean(x) of the unfused embedding, held constant; x̂_d = x_d + σ_m·z.
// `forced_z` replaces the Gaussian draw.
ad::Tensor add_adaptive_noise(const ad::Tensor& x_d, const ad::Tensor& x, const NoiseConfig& cfg, Mode mode, Rng& rng,
                              const ad::Tensor* forced_z = nullptr);

// Inverted dropout on each component (train only).
ad::Tensor apply_dropout(const ad::Tensor& x_d, double rate, Mode mode, Rng& rng);
// With probability `rate` per component, redraw c from N(c, (0.1·|c|)²) (train only).
ad::Tensor apply_mutation(const ad::Tensor& x_d, double rate, Mode mode, Rng& rng);

// ω_i for every class: text encoding of [shifted context…, class token].
// Returned stacked as [C×d_t].
ad::Tensor build_prompts(const ad::Tensor& shifted_ctx, const clip::DualEncoder& clip_model, std::span<const std::size_t> classes);

// Similarity logits over `classes` for one image under the learner's variant.
ad::Tensor variant_logits(const PromptLearner& learner, const FrozenModels& models, const Features& f,
                          std::span<const std::size_t> classes, Mode mode, Rng& rng);
ad::Tensor dcpl_probs(const PromptLearner& learner, const FrozenModels& models, const Features& f,
                      std::span<const std::size_t> classes, Mode mode, Rng& rng);

// Label and id of every sample that entered a loss, and a count of frozen
// tensors found holding a gradient, for the purity and gradient audits.
struct GradientAudit {
    std::vector<std::size_t> labels;
    std::vector<std::uint64_t> sample_ids;
    std::size_t steps = 0;
    std::size_t frozen_with_grad = 0;  // frozen-encoder tensors seen holding a gradient
};

struct StepResult {
    double loss = 0.0;
    std::size_t updated_values = 0;
};

// Mean cross-entropy over the batch (labels are positions in `classes`),
// backward, SGD over the learner's parameters only.
StepResult train_step(PromptLearner& learner, const FrozenModels& models, std::span<const Features* const> batch,
                      std::span<const std::size_t> classes, double lr, Rng& rng, GradientAudit* audit = nullptr);

// Frozen-encoder parameters that must never see a gradient.
nn::ParamList frozen_parameters(const FrozenModels& models);

// Top-1 prediction (position in `classes`) for every image; evaluation mode.
std::vector<std::size_t> predict(const PromptLearner& learner, const FrozenModels& models, std::span<const Features> images,
                                 std::span<const std::size_t> classes, Rng& rng);

}  // namespace dcpl::prompt
