#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dcpl/ops.hpp"
#include "dcpl/rng.hpp"
#include "dcpl/tensor.hpp"

namespace dcpl::nn {

// Standard deviation for all freshly initialised weight matrices.
inline constexpr double kInitStd = 0.02;

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

struct Linear {
    ad::Tensor weight;  // [out×in]
    ad::Tensor bias;    // [out]

    std::size_t in_dim() const { return weight.dim(1); }
    std::size_t out_dim() const { return weight.dim(0); }
    bool frozen() const { return !weight.requires_grad(); }
    ad::Tensor forward(const ad::Tensor& x) const { return ad::affine(x, weight, bias); }
    void collect(const std::string& prefix, ParamList& out) const;
};

// Linear-ReLU-Linear.
struct Mlp {
    Linear first;
    Linear second;

    ad::Tensor forward(const ad::Tensor& x) const { return second.forward(ad::relu(first.forward(x))); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
    ad::Tensor gain;
    ad::Tensor bias;

    ad::Tensor forward(const ad::Tensor& x) const { return ad::layer_norm(x, gain, bias); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct MultiHeadAttention {
    Linear query, key, value, output;
    std::size_t heads = 1;

    // x: [seq×d] → [seq×d]; softmax(QKᵀ/√(d/h))V per head, concatenated, projected.
    ad::Tensor forward(const ad::Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

// Pre-norm block: y = x + attn(ln1(x)); out = y + mlp(ln2(y)).
struct TransformerBlock {
    LayerNorm ln1;
    MultiHeadAttention attn;
    LayerNorm ln2;
    Mlp mlp;

    ad::Tensor forward(const ad::Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct EmbeddingTable {
    ad::Tensor table;  // [vocab×d]

    std::size_t vocab() const { return table.dim(0); }
    std::size_t dim() const { return table.dim(1); }
    ad::Tensor lookup(std::size_t token) const;                      // [d]
    ad::Tensor lookup(std::span<const std::size_t> tokens) const;    // [n×d]
    void collect(const std::string& prefix, ParamList& out) const;
};

// Initialisers: weights ~ N(0, kInitStd²), biases zero, layer-norm gain one.
ad::Tensor init_normal(Rng& rng, ad::Shape shape, double std = kInitStd);
Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool zero_weight = false);
Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, bool zero_second = false);
LayerNorm make_layer_norm(std::size_t d);
MultiHeadAttention make_attention(std::size_t d, std::size_t heads, Rng& rng);
TransformerBlock make_block(std::size_t d, std::size_t heads, std::size_t mlp_hidden, Rng& rng);
EmbeddingTable make_embedding(std::size_t vocab, std::size_t d, Rng& rng);

ad::Tensor run_blocks(const std::vector<TransformerBlock>& blocks, ad::Tensor x);

// Freezing removes parameters from the trainable set; it does not cut the
// graph, so gradients still flow through frozen layers to upstream inputs.
void freeze(const ParamList& params);
void unfreeze(const ParamList& params);
std::vector<ad::Tensor> trainable(const ParamList& params);
std::size_t count_values(const ParamList& params);

// Adam with bias correction; used for encoder pretraining only.
class Adam {
public:
    Adam(std::vector<ad::Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    // Parameters without a gradient this step are skipped. Clears gradients.
    void step();
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<ad::Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace dcpl::nn
