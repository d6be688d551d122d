#include "dcpl/lsdm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "binary_io.hpp"
#include "dcpl/errors.hpp"

namespace dcpl::lsdm {

ad::Tensor LsdmEncoder::encode_tokens(const ad::Tensor& patches, std::span<const std::size_t> indices) const {
    if (patches.rank() != 2 || patches.dim(0) != indices.size() || patches.dim(1) != patch_embed.in_dim())
        throw DimensionError("lsdm encoder got patches " + ad::shape_str(patches.shape()));
    ad::Tensor h = ad::add(patch_embed.forward(patches), ad::gather_rows(position, indices));
    return nn::run_blocks(blocks, h);
}

ad::Tensor LsdmEncoder::forward(const ad::Tensor& patches) const {
    if (patches.rank() != 2 || patches.dim(0) != position.dim(0))
        throw DimensionError("lsdm encoder got patches " + ad::shape_str(patches.shape()));
    std::vector<std::size_t> all(patches.dim(0));
    std::iota(all.begin(), all.end(), std::size_t{0});
    ad::Tensor h = ln_post.forward(encode_tokens(patches, all));
    ad::Tensor pooled = ad::matmul(ad::Tensor::full({1, h.dim(0)}, 1.0 / static_cast<double>(h.dim(0))), h);
    return proj.forward(ad::reshape(pooled, {h.dim(1)}));
}

void LsdmEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
    patch_embed.collect(prefix + ".patch_embed", out);
    out.push_back({prefix + ".position", position});
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    ln_post.collect(prefix + ".ln_post", out);
    proj.collect(prefix + ".proj", out);
}

ad::Tensor MaeDecoder::forward(const ad::Tensor& visible_tokens, std::span<const std::size_t> visible,
                               std::span<const std::size_t> masked) const {
    const std::size_t m = visible.size() + masked.size();
    std::vector<ad::Tensor> parts{visible_tokens};
    for (std::size_t i = 0; i < masked.size(); ++i) parts.push_back(mask_token);
    // Row order of `parts` is visible then masked; invert it back to patch order.
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < visible.size(); ++i) order[visible[i]] = i;
    for (std::size_t i = 0; i < masked.size(); ++i) order[masked[i]] = visible.size() + i;
    ad::Tensor h = ad::add(ad::gather_rows(ad::concat_rows(parts), order), position);
    h = nn::run_blocks(blocks, h);
    return head.forward(ln.forward(h));
}

void MaeDecoder::collect(const std::string& prefix, nn::ParamList& out) const {
    out.push_back({prefix + ".mask_token", mask_token});
    out.push_back({prefix + ".position", position});
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    ln.collect(prefix + ".ln", out);
    head.collect(prefix + ".head", out);
}

nn::ParamList MaskedAutoencoder::parameters() const {
    nn::ParamList out;
    encoder.collect("encoder", out);
    decoder.collect("decoder", out);
    return out;
}

MaskedAutoencoder make_mae(const LsdmConfig& c, Rng& rng) {
    if (c.patch == 0 || c.image_size % c.patch != 0) throw ConfigError("lsdm image size must be a multiple of the patch size");
    if (!(c.mask_ratio > 0.0 && c.mask_ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
    MaskedAutoencoder m;
    m.config = c;
    const std::size_t mp = c.patch_count();
    m.encoder.patch = c.patch;
    m.encoder.patch_embed = nn::make_linear(c.patch_dim(), c.width, rng);
    m.encoder.position = nn::init_normal(rng, {mp, c.width});
    for (std::size_t i = 0; i < c.layers; ++i) m.encoder.blocks.push_back(nn::make_block(c.width, c.heads, c.mlp_hidden, rng));
    m.encoder.ln_post = nn::make_layer_norm(c.width);
    // The readout projection is never touched by the reconstruction loss, so
    // it stays a fixed random map; unit-gain scaling keeps R_b at O(1).
    m.encoder.proj = nn::make_linear(c.width, c.embed_dim, rng);
    m.encoder.proj.weight = nn::init_normal(rng, {c.embed_dim, c.width}, 1.0 / std::sqrt(static_cast<double>(c.width)));

    m.decoder.mask_token = nn::init_normal(rng, {c.width});
    m.decoder.position = nn::init_normal(rng, {mp, c.width});
    for (std::size_t i = 0; i < c.decoder_layers; ++i)
        m.decoder.blocks.push_back(nn::make_block(c.width, c.heads, c.mlp_hidden, rng));
    m.decoder.ln = nn::make_layer_norm(c.width);
    m.decoder.head = nn::make_linear(c.width, c.patch_dim(), rng);
    return m;
}

PatchMask mask_patches(std::size_t patch_count, double ratio, Rng& rng) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio " + std::to_string(ratio) + " outside (0, 1)");
    const auto n_masked = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(patch_count)));
    std::vector<std::size_t> perm(patch_count);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    PatchMask mask;
    mask.masked.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_masked));
    mask.visible.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_masked), perm.end());
    std::sort(mask.masked.begin(), mask.masked.end());
    std::sort(mask.visible.begin(), mask.visible.end());
    return mask;
}

ad::Tensor mae_loss(const ad::Tensor& prediction, const ad::Tensor& target, std::span<const std::size_t> masked) {
    if (prediction.shape() != target.shape() || prediction.rank() != 2)
        throw DimensionError("mae_loss: prediction " + ad::shape_str(prediction.shape()) + " vs target " +
                             ad::shape_str(target.shape()));
    if (masked.empty()) throw ConfigError("mae_loss needs at least one masked patch");
    ad::Tensor diff = ad::sub(ad::gather_rows(prediction, masked), ad::gather_rows(target, masked));
    return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(masked.size()));
}

ad::Tensor mae_step_loss(const MaskedAutoencoder& model, const ImageSample& image, Rng& rng) {
    const ad::Tensor patches = patchify(image, model.config.patch);
    const PatchMask mask = mask_patches(patches.dim(0), model.config.mask_ratio, rng);
    const ad::Tensor tokens = model.encoder.encode_tokens(ad::gather_rows(patches, mask.visible), mask.visible);
    const ad::Tensor recon = model.decoder.forward(tokens, mask.visible, mask.masked);
    return mae_loss(recon, patches, mask.masked);
}

PretrainReport pretrain_lsdm(MaskedAutoencoder& model, std::span<const ImageSample> corpus, const PretrainOptions& options,
                             Rng& rng) {
    PretrainReport report;
    const nn::ParamList params = model.parameters();
    if (options.epochs > 0) {
        if (corpus.empty()) throw DataError("empty lsdm pretraining corpus");
        nn::unfreeze(params);
        nn::Adam opt(nn::trainable(params), options.lr, 0.9, 0.95);
        std::vector<std::size_t> order(corpus.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
            rng.shuffle(order);
            double total = 0.0;
            for (std::size_t i : order) {
                ad::Tensor loss = mae_step_loss(model, corpus[i], rng);
                const double v = loss.item();
                if (!std::isfinite(v)) throw TrainingError("mae loss became non-finite at epoch " + std::to_string(epoch));
                total += v;
                ad::backward(loss);
                opt.step();
            }
            report.epoch_loss.push_back(total / static_cast<double>(corpus.size()));
        }
    }
    nn::freeze(params);
    return report;
}

ad::Tensor encode_domain(const LsdmEncoder& enc, const ImageSample& image) { return enc.forward(patchify(image, enc.patch)); }

ad::Tensor encode_domain(const LsdmEncoder& enc, const ad::Tensor& pixels) { return enc.forward(patchify(pixels, enc.patch)); }

ad::Tensor EmbeddingFile::tensor(std::size_t i) const {
    if (i >= count()) throw IndexError("embedding row " + std::to_string(i) + " of " + std::to_string(count()));
    const auto r = row(i);
    return ad::Tensor::vector(std::vector<double>(r.begin(), r.end()));
}

void write_embeddings(std::ostream& os, const EmbeddingFile& f) {
    if (f.dim == 0 || f.rows.size() != f.ids.size() * f.dim)
        throw DimensionError("embedding rows (" + std::to_string(f.rows.size()) + " values) do not match " +
                             std::to_string(f.ids.size()) + " ids × dim " + std::to_string(f.dim));
    os.write("DCPL", 4);
    io::put<std::uint32_t>(os, kEmbeddingVersion);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.ids.size()));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.dim));
    for (float v : f.rows) io::put<float>(os, v);
    for (auto id : f.ids) io::put<std::uint64_t>(os, id);
}

EmbeddingFile read_embeddings(std::istream& is) {
    io::expect_magic(is, "DCPL");
    const auto version = io::get<std::uint32_t>(is, "version");
    if (version != kEmbeddingVersion) throw FormatError("unsupported version " + std::to_string(version));
    const auto n = io::get<std::uint32_t>(is, "count");
    const auto d = io::get<std::uint32_t>(is, "dim");
    if (d == 0) throw FormatError("dim is zero");
    EmbeddingFile f;
    f.dim = d;
    f.rows.resize(static_cast<std::size_t>(n) * d);
    for (auto& v : f.rows) v = io::get<float>(is, "payload");
    f.ids.resize(n);
    for (auto& id : f.ids) id = io::get<std::uint64_t>(is, "ids");
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after ids (length mismatch)");
    return f;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_embeddings(os, f);
    if (!os) throw DataError("write failed: " + path.string());
}

EmbeddingFile read_embeddings(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    return read_embeddings(is);
}

EmbeddingFile embed_images(const LsdmEncoder& enc, std::span<const ImageSample> images) {
    ad::NoGradGuard guard;
    EmbeddingFile f;
    f.dim = enc.embed_dim();
    for (const auto& img : images) {
        const ad::Tensor r = encode_domain(enc, img);
        for (double v : r.data()) f.rows.push_back(static_cast<float>(v));
        f.ids.push_back(img.id);
    }
    return f;
}

}  // namespace dcpl::lsdm
