#include "dcpl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dcpl/errors.hpp"
#include "dcpl/kernels.hpp"

namespace dcpl::ad {

namespace {

// Gradient sink for input i, or nullptr when that input is frozen.
double* sink(Node& self, std::size_t i) {
    Node& in = *self.inputs[i];
    return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

std::string pair_str(const Tensor& a, const Tensor& b) { return shape_str(a.shape()) + " and " + shape_str(b.shape()); }

void require_rank(const Tensor& a, std::size_t lo, std::size_t hi, const char* op) {
    if (a.rank() < lo || a.rank() > hi)
        throw DimensionError(std::string(op) + " does not accept shape " + shape_str(a.shape()));
}

// Rows/cols view of a rank-1 (one row) or rank-2 tensor.
struct RowView {
    std::size_t rows, cols;
};
RowView rows_of(const Tensor& a) {
    if (a.rank() == 1) return {1, a.dim(0)};
    return {a.dim(0), a.dim(1)};
}

enum class Broadcast { Same, Scalar, Row };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (b.numel() == 1) return Broadcast::Scalar;
    if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) return Broadcast::Row;
    throw DimensionError(std::string(op) + ": incompatible shapes " + pair_str(a, b));
}

std::size_t bindex(Broadcast mode, std::size_t i, std::size_t cols) {
    switch (mode) {
        case Broadcast::Same: return i;
        case Broadcast::Scalar: return 0;
        case Broadcast::Row: return i % cols;
    }
    return i;
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    const Broadcast mode = broadcast_mode(a, b, name);
    const std::size_t n = a.numel();
    const std::size_t cols = a.rank() == 2 ? a.dim(1) : n;
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double y = bv[bindex(mode, i, cols)];
        switch (op) {
            case BinOp::Add: out[i] = av[i] + y; break;
            case BinOp::Sub: out[i] = av[i] - y; break;
            case BinOp::Mul: out[i] = av[i] * y; break;
        }
    }
    return make_result(a.shape(), std::move(out), {a, b},
                       [mode, op, n, cols](Node& self) {
                           const auto& g = self.grad;
                           const auto& x = self.inputs[0]->value;
                           const auto& y = self.inputs[1]->value;
                           if (double* ga = sink(self, 0)) {
                               for (std::size_t i = 0; i < n; ++i)
                                   ga[i] += op == BinOp::Mul ? g[i] * y[bindex(mode, i, cols)] : g[i];
                           }
                           if (double* gb = sink(self, 1)) {
                               for (std::size_t i = 0; i < n; ++i) {
                                   const std::size_t j = bindex(mode, i, cols);
                                   switch (op) {
                                       case BinOp::Add: gb[j] += g[i]; break;
                                       case BinOp::Sub: gb[j] -= g[i]; break;
                                       case BinOp::Mul: gb[j] += g[i] * x[i]; break;
                                   }
                               }
                           }
                       },
                       name);
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx, const char* name) {
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    return make_result(a.shape(), std::move(out), {a},
                       [dfdx](Node& self) {
                           double* ga = sink(self, 0);
                           const auto& x = self.inputs[0]->value;
                           for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * dfdx(x[i], self.value[i]);
                       },
                       name);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    std::size_t m, k, n;
    Shape out_shape;
    if (a.rank() == 2 && b.rank() == 2) {
        m = a.dim(0), k = a.dim(1), n = b.dim(1);
        if (b.dim(0) != k) throw DimensionError("matmul: inner dimensions differ for " + pair_str(a, b));
        out_shape = {m, n};
    } else if (a.rank() == 2 && b.rank() == 1) {
        m = a.dim(0), k = a.dim(1), n = 1;
        if (b.dim(0) != k) throw DimensionError("matmul: inner dimensions differ for " + pair_str(a, b));
        out_shape = {m};
    } else if (a.rank() == 1 && b.rank() == 2) {
        m = 1, k = a.dim(0), n = b.dim(1);
        if (b.dim(0) != k) throw DimensionError("matmul: inner dimensions differ for " + pair_str(a, b));
        out_shape = {n};
    } else {
        throw DimensionError("matmul: unsupported ranks " + pair_str(a, b));
    }
    std::vector<double> out(m * n);
    kernels::gemm(a.data(), b.data(), out, m, k, n);
    return make_result(std::move(out_shape), std::move(out), {a, b},
                       [m, k, n](Node& self) {
                           const auto& x = self.inputs[0]->value;
                           const auto& y = self.inputs[1]->value;
                           if (double* ga = sink(self, 0))
                               kernels::gemm_nt(self.grad, y, {ga, m * k}, m, n, k, true);
                           if (double* gb = sink(self, 1))
                               kernels::gemm_tn(x, self.grad, {gb, k * n}, k, m, n, true);
                       },
                       "matmul");
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    const auto av = a.data();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    return make_result({c, r}, std::move(out), {a},
                       [r, c](Node& self) {
                           double* ga = sink(self, 0);
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
                       },
                       "transpose");
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 1, 2, "affine");
    require_rank(weight, 2, 2, "affine weight");
    const auto [rows, in] = rows_of(x);
    const std::size_t out_dim = weight.dim(0);
    if (weight.dim(1) != in) throw DimensionError("affine: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim))
        throw DimensionError("affine: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(weight.shape()));
    std::vector<double> out(rows * out_dim);
    kernels::gemm_nt(x.data(), weight.data(), out, rows, in, out_dim);
    if (has_bias) {
        const auto bv = bias.data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_dim; ++o) out[r * out_dim + o] += bv[o];
    }
    Shape shape = x.rank() == 1 ? Shape{out_dim} : Shape{rows, out_dim};
    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result(std::move(shape), std::move(out), std::move(inputs),
                       [rows = rows, in = in, out_dim, has_bias](Node& self) {
                           const auto& g = self.grad;
                           if (double* gx = sink(self, 0))
                               kernels::gemm(g, self.inputs[1]->value, {gx, rows * in}, rows, out_dim, in, true);
                           if (double* gw = sink(self, 1))
                               kernels::gemm_tn(g, self.inputs[0]->value, {gw, out_dim * in}, out_dim, rows, in, true);
                           if (has_bias) {
                               if (double* gb = sink(self, 2))
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
                           }
                       },
                       "affine");
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor add(const Tensor& a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; }, "add_const");
}

Tensor scale(const Tensor& a, double c) {
    return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; }, "scale");
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; },
                 "relu");
}

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
    for (double v : a.data())
        if (!(v > 0.0)) throw DegenerateInputError("log of non-positive value " + std::to_string(v));
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; }, "log");
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 1, 2, "softmax");
    const auto [rows, cols] = rows_of(logits);
    const auto lv = logits.data();
    std::vector<double> out(lv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* l = lv.data() + r * cols;
        double* y = out.data() + r * cols;
        const double mx = *std::max_element(l, l + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += (y[j] = std::exp(l[j] - mx));
        for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
    }
    return make_result(logits.shape(), std::move(out), {logits},
                       [rows = rows, cols = cols](Node& self) {
                           double* ga = sink(self, 0);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* y = self.value.data() + r * cols;
                               const double* g = self.grad.data() + r * cols;
                               double dot = 0.0;
                               for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
                               for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += y[j] * (g[j] - dot);
                           }
                       },
                       "softmax");
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({1}, {s}, {a},
                       [](Node& self) {
                           double* ga = sink(self, 0);
                           const double g = self.grad[0];
                           for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) ga[i] += g;
                       },
                       "sum");
}

Tensor mean(const Tensor& a) {
    if (!a.defined() || a.numel() == 0) throw PreconditionError("mean of an empty tensor");
    const double n = static_cast<double>(a.numel());
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({1}, {s / n}, {a},
                       [n](Node& self) {
                           double* ga = sink(self, 0);
                           const double g = self.grad[0] / n;
                           for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) ga[i] += g;
                       },
                       "mean");
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || a.shape() != b.shape()) throw DimensionError("cosine_similarity: " + pair_str(a, b));
    const auto av = a.data();
    const auto bv = b.data();
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        dot += av[i] * bv[i];
        na += av[i] * av[i];
        nb += bv[i] * bv[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na <= kNormEpsilon || nb <= kNormEpsilon)
        throw DegenerateInputError("cosine_similarity of a near-zero vector");
    const double c = dot / (na * nb);
    return make_result({1}, {c}, {a, b},
                       [na, nb, c](Node& self) {
                           const double g = self.grad[0];
                           const auto& x = self.inputs[0]->value;
                           const auto& y = self.inputs[1]->value;
                           if (double* ga = sink(self, 0))
                               for (std::size_t i = 0; i < x.size(); ++i)
                                   ga[i] += g * (y[i] / (na * nb) - c * x[i] / (na * na));
                           if (double* gb = sink(self, 1))
                               for (std::size_t i = 0; i < y.size(); ++i)
                                   gb[i] += g * (x[i] / (na * nb) - c * y[i] / (nb * nb));
                       },
                       "cosine_similarity");
}

Tensor normalize(const Tensor& a) {
    require_rank(a, 1, 2, "normalize");
    const auto [rows, cols] = rows_of(a);
    const auto av = a.data();
    std::vector<double> out(av.size());
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += av[r * cols + j] * av[r * cols + j];
        const double nrm = std::sqrt(s);
        if (nrm <= kNormEpsilon) throw DegenerateInputError("normalize: row " + std::to_string(r) + " has near-zero norm");
        norms[r] = nrm;
        for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = av[r * cols + j] / nrm;
    }
    return make_result(a.shape(), std::move(out), {a},
                       [rows = rows, cols = cols, norms = std::move(norms)](Node& self) {
                           double* ga = sink(self, 0);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* y = self.value.data() + r * cols;
                               const double* g = self.grad.data() + r * cols;
                               double dot = 0.0;
                               for (std::size_t j = 0; j < cols; ++j) dot += y[j] * g[j];
                               for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += (g[j] - y[j] * dot) / norms[r];
                           }
                       },
                       "normalize");
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
    require_rank(a, 1, 2, "layer_norm");
    const auto [rows, d] = rows_of(a);
    if (d < 2) throw PreconditionError("layer_norm needs at least 2 features");
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw DimensionError("layer_norm: input " + shape_str(a.shape()) + ", gain " + shape_str(gain.shape()) +
                             ", bias " + shape_str(bias.shape()));
    const auto av = a.data();
    const auto gv = gain.data();
    const auto bv = bias.data();
    std::vector<double> out(av.size()), xhat(av.size()), inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(d);
        inv[r] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (x[j] - mu) * inv[r];
            out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
        }
    }
    return make_result(a.shape(), std::move(out), {a, gain, bias},
                       [rows = rows, d = d, xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
                           const auto& g = self.grad;
                           const auto& gv = self.inputs[1]->value;
                           double* ga = sink(self, 0);
                           double* gg = sink(self, 1);
                           double* gb = sink(self, 2);
                           const double dn = static_cast<double>(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const std::size_t o = r * d;
                               if (ga) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gx = g[o + j] * gv[j];
                                       m1 += gx;
                                       m2 += gx * xhat[o + j];
                                   }
                                   m1 /= dn;
                                   m2 /= dn;
                                   for (std::size_t j = 0; j < d; ++j)
                                       ga[o + j] += inv[r] * (g[o + j] * gv[j] - m1 - xhat[o + j] * m2);
                               }
                               if (gg)
                                   for (std::size_t j = 0; j < d; ++j) gg[j] += g[o + j] * xhat[o + j];
                               if (gb)
                                   for (std::size_t j = 0; j < d; ++j) gb[j] += g[o + j];
                           }
                       },
                       "layer_norm");
}

Tensor cross_entropy(const Tensor& probs, std::size_t label) {
    require_rank(probs, 1, 1, "cross_entropy");
    if (label >= probs.numel())
        throw IndexError("label " + std::to_string(label) + " outside " + std::to_string(probs.numel()) + " classes");
    const double p = probs[label];
    if (!(p > 0.0)) throw DegenerateInputError("cross_entropy: probability of the label is zero");
    return make_result({1}, {-std::log(p)}, {probs},
                       [label, p](Node& self) { sink(self, 0)[label] -= self.grad[0] / p; }, "cross_entropy");
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label) {
    require_rank(logits, 1, 1, "softmax_cross_entropy");
    const std::size_t labels[] = {label};
    Tensor as_row = reshape(logits, {1, logits.numel()});
    Tensor loss = softmax_cross_entropy_rows(as_row, labels);
    return loss;
}

Tensor softmax_cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels) {
    require_rank(logits, 2, 2, "softmax_cross_entropy_rows");
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    if (labels.size() != rows)
        throw DimensionError("softmax_cross_entropy_rows: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(rows) + " rows");
    const auto lv = logits.data();
    std::vector<double> probs(lv.size());
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (labels[r] >= cols)
            throw IndexError("label " + std::to_string(labels[r]) + " outside " + std::to_string(cols) + " classes");
        const double* l = lv.data() + r * cols;
        const double mx = *std::max_element(l, l + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += (probs[r * cols + j] = std::exp(l[j] - mx));
        for (std::size_t j = 0; j < cols; ++j) probs[r * cols + j] /= z;
        total += -(l[labels[r]] - mx - std::log(z));
    }
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return make_result({1}, {total / static_cast<double>(rows)}, {logits},
                       [rows, cols, probs = std::move(probs), lab = std::move(lab)](Node& self) {
                           double* ga = sink(self, 0);
                           const double g = self.grad[0] / static_cast<double>(rows);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < cols; ++j)
                                   ga[r * cols + j] += g * (probs[r * cols + j] - (j == lab[r] ? 1.0 : 0.0));
                       },
                       "softmax_cross_entropy");
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    require_rank(a, 2, 2, "slice_cols");
    const std::size_t r = a.dim(0), c = a.dim(1);
    if (begin >= end || end > c)
        throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(a.shape()));
    const std::size_t w = end - begin;
    const auto av = a.data();
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(av.data() + i * c + begin, w, out.data() + i * w);
    return make_result({r, w}, std::move(out), {a},
                       [r, c, w, begin](Node& self) {
                           double* ga = sink(self, 0);
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += self.grad[i * w + j];
                       },
                       "slice_cols");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw PreconditionError("concat_cols of nothing");
    const std::size_t r = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
    std::size_t c = 0;
    std::vector<std::size_t> widths;
    for (auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != r) throw DimensionError("concat_cols: mismatched part " + shape_str(p.shape()));
        widths.push_back(p.dim(1));
        c += p.dim(1);
    }
    std::vector<double> out(r * c);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pv = parts[k].data();
        for (std::size_t i = 0; i < r; ++i) std::copy_n(pv.data() + i * widths[k], widths[k], out.data() + i * c + off);
        off += widths[k];
    }
    return make_result({r, c}, std::move(out), parts,
                       [r, c, widths = std::move(widths)](Node& self) {
                           std::size_t off = 0;
                           for (std::size_t k = 0; k < widths.size(); ++k) {
                               if (double* gp = sink(self, k))
                                   for (std::size_t i = 0; i < r; ++i)
                                       for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += self.grad[i * c + off + j];
                               off += widths[k];
                           }
                       },
                       "concat_cols");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw PreconditionError("concat_rows of nothing");
    const std::size_t c = rows_of(parts[0]).cols;
    std::size_t rows = 0;
    std::vector<std::size_t> sizes;
    for (auto& p : parts) {
        require_rank(p, 1, 2, "concat_rows");
        const auto v = rows_of(p);
        if (v.cols != c) throw DimensionError("concat_rows: part " + shape_str(p.shape()) + " vs width " + std::to_string(c));
        rows += v.rows;
        sizes.push_back(p.numel());
    }
    std::vector<double> out;
    out.reserve(rows * c);
    for (auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result({rows, c}, std::move(out), parts,
                       [sizes = std::move(sizes)](Node& self) {
                           std::size_t off = 0;
                           for (std::size_t k = 0; k < sizes.size(); ++k) {
                               if (double* gp = sink(self, k))
                                   for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += self.grad[off + i];
                               off += sizes[k];
                           }
                       },
                       "concat_rows");
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw PreconditionError("concat of nothing");
    std::vector<double> out;
    std::vector<std::size_t> sizes;
    for (auto& p : parts) {
        if (p.rank() != 1) throw DimensionError("concat expects vectors, got " + shape_str(p.shape()));
        out.insert(out.end(), p.data().begin(), p.data().end());
        sizes.push_back(p.numel());
    }
    const std::size_t n = out.size();
    return make_result({n}, std::move(out), parts,
                       [sizes = std::move(sizes)](Node& self) {
                           std::size_t off = 0;
                           for (std::size_t k = 0; k < sizes.size(); ++k) {
                               if (double* gp = sink(self, k))
                                   for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += self.grad[off + i];
                               off += sizes[k];
                           }
                       },
                       "concat");
}

Tensor row(const Tensor& a, std::size_t i) {
    require_rank(a, 2, 2, "row");
    if (i >= a.dim(0)) throw IndexError("row " + std::to_string(i) + " of " + shape_str(a.shape()));
    const std::size_t c = a.dim(1);
    std::vector<double> out(a.data().begin() + i * c, a.data().begin() + (i + 1) * c);
    return make_result({c}, std::move(out), {a},
                       [i, c](Node& self) {
                           double* ga = sink(self, 0);
                           for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j];
                       },
                       "row");
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
    require_rank(a, 2, 2, "gather_rows");
    if (rows.empty()) throw PreconditionError("gather_rows with no rows");
    const std::size_t c = a.dim(1);
    std::vector<double> out(rows.size() * c);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= a.dim(0)) throw IndexError("row " + std::to_string(rows[k]) + " of " + shape_str(a.shape()));
        std::copy_n(a.data().data() + rows[k] * c, c, out.data() + k * c);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result({rows.size(), c}, std::move(out), {a},
                       [c, idx = std::move(idx)](Node& self) {
                           double* ga = sink(self, 0);
                           for (std::size_t k = 0; k < idx.size(); ++k)
                               for (std::size_t j = 0; j < c; ++j) ga[idx[k] * c + j] += self.grad[k * c + j];
                       },
                       "gather_rows");
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.numel())
        throw DimensionError("reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), {a},
                       [](Node& self) {
                           double* ga = sink(self, 0);
                           for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
                       },
                       "reshape");
}

Tensor gather(const Tensor& a, std::span<const std::size_t> source, Shape shape) {
    if (numel(shape) != source.size())
        throw DimensionError("gather: " + std::to_string(source.size()) + " indices for shape " + shape_str(shape));
    const auto av = a.data();
    std::vector<double> out(source.size());
    for (std::size_t j = 0; j < source.size(); ++j) {
        if (source[j] >= av.size()) throw IndexError("gather index " + std::to_string(source[j]));
        out[j] = av[source[j]];
    }
    std::vector<std::size_t> src(source.begin(), source.end());
    return make_result(std::move(shape), std::move(out), {a},
                       [src = std::move(src)](Node& self) {
                           double* ga = sink(self, 0);
                           for (std::size_t j = 0; j < src.size(); ++j) ga[src[j]] += self.grad[j];
                       },
                       "gather");
}

Tensor sample_gaussian(Rng& rng, const Shape& shape) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor::from(shape, std::move(v));
}

void sgd_step(std::span<Tensor> params, double lr) {
    for (auto& p : params)
        if (!p.has_grad()) throw PreconditionError("sgd_step: parameter " + shape_str(p.shape()) + " has no gradient");
    for (auto& p : params) {
        auto v = p.mutable_data();
        const auto g = p.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        p.clear_grad();
    }
}

}  // namespace dcpl::ad
