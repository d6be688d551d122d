#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dcpl/rng.hpp"
#include "dcpl/tensor.hpp"

// Differentiable operations over Tensor. Rank-2 tensors are row-major
// [rows×cols]; where an op accepts "rank 1 or rank 2" the rank-2 form applies
// the rank-1 rule to every row independently.
namespace dcpl::ad {

// [m×k]·[k×n] → [m×n]; [m×k]·[k] → [m]; [k]·[k×n] → [n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x·Wᵀ + bias for x of shape [in] or [rows×in], W of shape [out×in].
// `bias` may be undefined.
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Elementwise binary ops. `b` must have a's shape, be a single-element
// tensor (broadcast everywhere), or, for rank-2 `a`, be a vector of a's
// column count (broadcast over rows).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);

Tensor relu(const Tensor& a);  // subgradient 0 at the kink
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// Max-subtracted softmax over a vector, or over each row.
Tensor softmax(const Tensor& logits);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);

// Norm floor below which a vector counts as degenerate.
inline constexpr double kNormEpsilon = 1e-12;

Tensor cosine_similarity(const Tensor& a, const Tensor& b);
// a/‖a‖ for a vector, or per row.
Tensor normalize(const Tensor& a);

inline constexpr double kLayerNormEpsilon = 1e-5;
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);

// −log(probs[label]) for an already-normalised distribution.
Tensor cross_entropy(const Tensor& probs, std::size_t label);
// −log softmax(logits)[label], computed in one stable pass.
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label);
// Mean of the per-row fused loss over [rows×classes] logits.
Tensor softmax_cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels);

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Stacks vectors (each one row) and matrices (their rows) into one matrix.
Tensor concat_rows(const std::vector<Tensor>& parts);
// Joins vectors end to end.
Tensor concat(const std::vector<Tensor>& parts);
Tensor row(const Tensor& a, std::size_t i);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& a, Shape shape);
// out.flat[j] = a.flat[source[j]]; backward scatters.
Tensor gather(const Tensor& a, std::span<const std::size_t> source, Shape shape);

// i.i.d. N(0, 1) leaf tensor.
Tensor sample_gaussian(Rng& rng, const Shape& shape);

// p ← p − lr·∇p, then clears the gradient. Every tensor must hold a gradient.
void sgd_step(std::span<Tensor> params, double lr);

}  // namespace dcpl::ad
