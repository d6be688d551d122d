#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dcpl/image.hpp"
#include "dcpl/nn.hpp"
#include "dcpl/rng.hpp"

// Toy frozen dual encoder: a ViT-style image branch and a transformer text
// branch projected into one shared embedding space, scored by
// temperature-scaled cosine similarity.
namespace dcpl::clip {

struct ClipConfig {
    std::size_t image_size = 16;
    std::size_t patch = 4;
    std::size_t width = 32;       // token width d_p of both branches
    std::size_t embed_dim = 16;   // shared embedding dim d_t
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t mlp_hidden = 64;
    std::size_t num_classes = 8;  // one vocabulary token per class
    std::size_t max_text_len = 8;
    double init_tau = 0.07;

    std::size_t patch_count() const { return (image_size / patch) * (image_size / patch); }
};

// Token ids: the caption words, then one token per class. Pretraining
// captions are "a photo of a {class}" or, for styled web images, the same
// four-slot prefix with style words in it ("a gray textured photo {class}").
struct Vocabulary {
    static constexpr std::size_t kA = 0, kPhoto = 1, kOf = 2;
    static constexpr std::size_t kGray = 3, kFaded = 4, kTextured = 5, kBright = 6, kDark = 7;
    static constexpr std::size_t kWords = 8;
    static constexpr std::size_t kPrefixLen = 4;
    static constexpr std::size_t class_token(std::size_t c) { return kWords + c; }
    static constexpr std::size_t size(std::size_t num_classes) { return kWords + num_classes; }
};

// Pretraining pair: an image and the prefix of its caption (empty → "a photo of a").
struct CaptionedImage {
    ImageSample image;
    std::vector<std::size_t> prefix;
};

struct VisualEncoder {
    std::size_t patch = 4;
    nn::Linear patch_embed;      // 3p² → d_p
    ad::Tensor class_token;      // [d_p]
    ad::Tensor position;         // [(M_patch+1)×d_p]
    std::vector<nn::TransformerBlock> blocks;
    nn::LayerNorm ln_post;
    nn::Linear proj;             // d_p → d_t

    // patches: [M_patch×3p²] → [d_t], read from the class-token position.
    ad::Tensor forward(const ad::Tensor& patches) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;
};

struct TextEncoder {
    nn::EmbeddingTable tokens;
    ad::Tensor position;         // [max_len×d_p]
    std::vector<nn::TransformerBlock> blocks;
    nn::LayerNorm ln_final;
    nn::Linear proj;             // d_p → d_t

    std::size_t max_len() const { return position.dim(0); }
    // embeddings: [seq×d_p] → [d_t], read from the final position.
    ad::Tensor forward(const ad::Tensor& embeddings) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;
};

struct DualEncoder {
    ClipConfig config;
    VisualEncoder visual;
    TextEncoder text;
    ad::Tensor log_tau;          // [1]; τ = exp(log_tau)

    double tau() const;
    nn::ParamList parameters() const;
};

DualEncoder make_dual_encoder(const ClipConfig& config, Rng& rng);

ad::Tensor encode_image(const VisualEncoder& enc, const ImageSample& image);
// Differentiable in the pixels; used to push gradients through the frozen branch.
ad::Tensor encode_image(const VisualEncoder& enc, const ad::Tensor& pixels);
ad::Tensor encode_text(const TextEncoder& enc, const ad::Tensor& token_embeddings);

// "a photo of a {class}" as token ids / token embeddings [5×d_p].
std::vector<std::size_t> template_tokens(std::size_t class_index);
// Embeddings of the "a photo of a" prefix alone [4×d_p].
ad::Tensor prefix_embeddings(const DualEncoder& model);
// Token embeddings of prefix + class token.
ad::Tensor caption_embeddings(const DualEncoder& model, std::span<const std::size_t> prefix, std::size_t class_index);
ad::Tensor template_embeddings(const DualEncoder& model, std::size_t class_index);
ad::Tensor class_token_embedding(const DualEncoder& model, std::size_t class_index);
// ω for the hand-crafted prompt of each class.
std::vector<ad::Tensor> template_class_embeddings(const DualEncoder& model, std::span<const std::size_t> classes);

// cos(x, ω_i)/τ for every row ω_i of `class_embeddings` ([C×d_t]).
ad::Tensor similarity_logits(const ad::Tensor& x, const ad::Tensor& class_embeddings, const ad::Tensor& log_tau);
// softmax over similarity_logits.
ad::Tensor zero_shot_probs(const DualEncoder& model, const ad::Tensor& x, const std::vector<ad::Tensor>& class_embeddings);

// Symmetric InfoNCE over the B×B similarity/τ matrix between matched rows
// of image_embeddings and text_embeddings (both [B×d_t], pairing = identity).
ad::Tensor contrastive_loss(const ad::Tensor& image_embeddings, const ad::Tensor& text_embeddings, const ad::Tensor& log_tau);
ad::Tensor contrastive_loss(const DualEncoder& model, std::span<const CaptionedImage* const> pairs);

inline constexpr double kMinTau = 0.01;
inline constexpr double kMaxTau = 100.0;

struct PretrainOptions {
    std::size_t epochs = 40;
    double lr = 3e-3;
};

struct PretrainReport {
    std::vector<double> epoch_loss;
};

// Contrastive pretraining with Adam, then freezes every parameter. Batches
// hold one image per class so the identity pairing never pairs an image
// with another image's (identical) caption.
PretrainReport pretrain_clip(DualEncoder& model, std::span<const CaptionedImage> corpus, const PretrainOptions& options, Rng& rng);
// Every image captioned with the plain template.
PretrainReport pretrain_clip(DualEncoder& model, std::span<const ImageSample> corpus, const PretrainOptions& options, Rng& rng);

// Top-1 accuracy (percent) of hand-crafted-prompt zero-shot classification
// among `classes`.
double zero_shot_accuracy(const DualEncoder& model, std::span<const ImageSample> images, std::span<const std::size_t> classes);

}  // namespace dcpl::clip
