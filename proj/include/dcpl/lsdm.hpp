#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "dcpl/image.hpp"
#include "dcpl/nn.hpp"
#include "dcpl/rng.hpp"

// Surrogate domain foundation model: a small ViT encoder pretrained as a
// masked autoencoder on one domain family. Its mean-pooled, projected patch
// tokens are the domain embedding R_b.
namespace dcpl::lsdm {

struct LsdmConfig {
    std::size_t image_size = 16;
    std::size_t patch = 4;
    std::size_t width = 32;
    std::size_t embed_dim = 24;  // d_r
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t mlp_hidden = 64;
    std::size_t decoder_layers = 1;
    double mask_ratio = 0.75;

    std::size_t patch_count() const { return (image_size / patch) * (image_size / patch); }
    std::size_t patch_dim() const { return patch * patch * 3; }
};

struct LsdmEncoder {
    std::size_t patch = 4;
    nn::Linear patch_embed;
    ad::Tensor position;  // [M_patch×width]
    std::vector<nn::TransformerBlock> blocks;
    nn::LayerNorm ln_post;
    nn::Linear proj;      // width → d_r

    std::size_t embed_dim() const { return proj.out_dim(); }
    // Token outputs for the given patch rows only ([n×3p²] with their indices).
    ad::Tensor encode_tokens(const ad::Tensor& patches, std::span<const std::size_t> indices) const;
    // All patches → mean-pooled projection [d_r].
    ad::Tensor forward(const ad::Tensor& patches) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;
};

// Light MAE decoder: visible tokens scattered back among mask tokens, one
// block, linear head back to pixel patches.
struct MaeDecoder {
    ad::Tensor mask_token;  // [width]
    ad::Tensor position;    // [M_patch×width]
    std::vector<nn::TransformerBlock> blocks;
    nn::LayerNorm ln;
    nn::Linear head;        // width → 3p²

    ad::Tensor forward(const ad::Tensor& visible_tokens, std::span<const std::size_t> visible,
                       std::span<const std::size_t> masked) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;
};

struct MaskedAutoencoder {
    LsdmConfig config;
    LsdmEncoder encoder;
    MaeDecoder decoder;

    nn::ParamList parameters() const;
};

MaskedAutoencoder make_mae(const LsdmConfig& config, Rng& rng);

struct PatchMask {
    std::vector<std::size_t> visible;  // ascending
    std::vector<std::size_t> masked;   // ascending
};

// Exactly round(ratio·M) patches masked, chosen by a shuffle of rng.
PatchMask mask_patches(std::size_t patch_count, double ratio, Rng& rng);

// Mean over masked patches of the summed squared error of that patch.
ad::Tensor mae_loss(const ad::Tensor& prediction, const ad::Tensor& target, std::span<const std::size_t> masked);

// One masked reconstruction of one image.
ad::Tensor mae_step_loss(const MaskedAutoencoder& model, const ImageSample& image, Rng& rng);

struct PretrainOptions {
    std::size_t epochs = 8;
    double lr = 2e-3;
};

struct PretrainReport {
    std::vector<double> epoch_loss;
};

// MAE pretraining with Adam, one image per step; freezes everything afterwards.
PretrainReport pretrain_lsdm(MaskedAutoencoder& model, std::span<const ImageSample> corpus, const PretrainOptions& options,
                             Rng& rng);

ad::Tensor encode_domain(const LsdmEncoder& enc, const ImageSample& image);
ad::Tensor encode_domain(const LsdmEncoder& enc, const ad::Tensor& pixels);

// Precomputed embeddings, all integers little-endian:
//   magic "DCPL" | version u32 | n u32 | d u32 | float32 × n·d (row-major) | u64 id × n
inline constexpr std::uint32_t kEmbeddingVersion = 1;

struct EmbeddingFile {
    std::size_t dim = 0;
    std::vector<float> rows;  // n×dim
    std::vector<std::uint64_t> ids;

    std::size_t count() const { return ids.size(); }
    std::span<const float> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
    // Row i widened back to a tensor.
    ad::Tensor tensor(std::size_t i) const;
};

void write_embeddings(std::ostream& os, const EmbeddingFile& file);
EmbeddingFile read_embeddings(std::istream& is);
void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);
EmbeddingFile read_embeddings(const std::filesystem::path& path);

EmbeddingFile embed_images(const LsdmEncoder& enc, std::span<const ImageSample> images);

}  // namespace dcpl::lsdm
