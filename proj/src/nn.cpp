#include "dcpl/nn.hpp"

#include <cmath>

#include "dcpl/errors.hpp"

namespace dcpl::nn {

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
    first.collect(prefix + ".0", out);
    second.collect(prefix + ".1", out);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gain", gain});
    out.push_back({prefix + ".bias", bias});
}

ad::Tensor MultiHeadAttention::forward(const ad::Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != query.in_dim())
        throw DimensionError("attention input " + ad::shape_str(x.shape()) + " for model dim " +
                             std::to_string(query.in_dim()));
    const std::size_t d = query.out_dim();
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    ad::Tensor q = query.forward(x), k = key.forward(x), v = value.forward(x);
    std::vector<ad::Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t b = h * dh, e = b + dh;
        ad::Tensor qh = heads == 1 ? q : ad::slice_cols(q, b, e);
        ad::Tensor kh = heads == 1 ? k : ad::slice_cols(k, b, e);
        ad::Tensor vh = heads == 1 ? v : ad::slice_cols(v, b, e);
        ad::Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
        outs.push_back(ad::matmul(ad::softmax(scores), vh));
    }
    ad::Tensor joined = heads == 1 ? outs[0] : ad::concat_cols(outs);
    return output.forward(joined);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
    query.collect(prefix + ".q", out);
    key.collect(prefix + ".k", out);
    value.collect(prefix + ".v", out);
    output.collect(prefix + ".o", out);
}

ad::Tensor TransformerBlock::forward(const ad::Tensor& x) const {
    if (x.rank() != 2) throw DimensionError("transformer block expects [seq×d], got " + ad::shape_str(x.shape()));
    ad::Tensor y = ad::add(x, attn.forward(ln1.forward(x)));
    return ad::add(y, mlp.forward(ln2.forward(y)));
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) const {
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    mlp.collect(prefix + ".mlp", out);
}

ad::Tensor EmbeddingTable::lookup(std::size_t token) const {
    if (token >= vocab()) throw IndexError("token " + std::to_string(token) + " outside vocabulary of " + std::to_string(vocab()));
    return ad::row(table, token);
}

ad::Tensor EmbeddingTable::lookup(std::span<const std::size_t> tokens) const {
    for (auto t : tokens)
        if (t >= vocab()) throw IndexError("token " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab()));
    return ad::gather_rows(table, tokens);
}

void EmbeddingTable::collect(const std::string& prefix, ParamList& out) const { out.push_back({prefix + ".table", table}); }

ad::Tensor init_normal(Rng& rng, ad::Shape shape, double std) {
    ad::Tensor t = ad::sample_gaussian(rng, shape);
    for (auto& v : t.mutable_data()) v *= std;
    t.set_requires_grad(true);
    return t;
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool zero_weight) {
    Linear l;
    l.weight = zero_weight ? ad::Tensor::zeros({out, in}, true) : init_normal(rng, {out, in});
    l.bias = ad::Tensor::zeros({out}, true);
    return l;
}

Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, bool zero_second) {
    Mlp m;
    m.first = make_linear(in, hidden, rng);
    m.second = make_linear(hidden, out, rng, zero_second);
    return m;
}

LayerNorm make_layer_norm(std::size_t d) { return {ad::Tensor::full({d}, 1.0, true), ad::Tensor::zeros({d}, true)}; }

MultiHeadAttention make_attention(std::size_t d, std::size_t heads, Rng& rng) {
    if (heads == 0 || d % heads != 0)
        throw ConfigError("model dim " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
    MultiHeadAttention a;
    a.query = make_linear(d, d, rng);
    a.key = make_linear(d, d, rng);
    a.value = make_linear(d, d, rng);
    a.output = make_linear(d, d, rng);
    a.heads = heads;
    return a;
}

TransformerBlock make_block(std::size_t d, std::size_t heads, std::size_t mlp_hidden, Rng& rng) {
    TransformerBlock b;
    b.ln1 = make_layer_norm(d);
    b.attn = make_attention(d, heads, rng);
    b.ln2 = make_layer_norm(d);
    b.mlp = make_mlp(d, mlp_hidden, d, rng);
    return b;
}

EmbeddingTable make_embedding(std::size_t vocab, std::size_t d, Rng& rng) { return {init_normal(rng, {vocab, d})}; }

ad::Tensor run_blocks(const std::vector<TransformerBlock>& blocks, ad::Tensor x) {
    for (const auto& b : blocks) x = b.forward(x);
    return x;
}

void freeze(const ParamList& params) {
    for (const auto& p : params) {
        ad::Tensor t = p.tensor;
        t.set_requires_grad(false);
    }
}

void unfreeze(const ParamList& params) {
    for (const auto& p : params) {
        ad::Tensor t = p.tensor;
        t.set_requires_grad(true);
    }
}

std::vector<ad::Tensor> trainable(const ParamList& params) {
    std::vector<ad::Tensor> out;
    for (const auto& p : params)
        if (p.tensor.requires_grad()) out.push_back(p.tensor);
    return out;
}

std::size_t count_values(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

Adam::Adam(std::vector<ad::Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        if (!p.has_grad()) continue;
        auto w = p.mutable_data();
        const auto g = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
            v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
        }
        p.clear_grad();
    }
}

}  // namespace dcpl::nn
