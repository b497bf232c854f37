#include "ddt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

namespace ddt::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Gradient sink of a parent, or nullptr when that parent is a constant.
double* sink(detail::Node& self, std::size_t i) {
    auto& p = *self.parents[i];
    return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

const std::vector<double>& in(const detail::Node& self, std::size_t i) { return self.parents[i]->value; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df, const char* op) {
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = f(x[i]);
    }
    return make_result(a.shape(), std::move(out), {a},
                       [df](detail::Node& self) {
                           double* g = sink(self, 0);
                           const auto& xv = in(self, 0);
                           for (std::size_t i = 0; i < xv.size(); ++i) {
                               g[i] += self.grad[i] * df(xv[i], self.value[i]);
                           }
                       },
                       op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return make_result(a.shape(), std::move(out), {a, b},
                       [](detail::Node& self) {
                           for (std::size_t k = 0; k < 2; ++k) {
                               if (double* g = sink(self, k)) {
                                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                       g[i] += self.grad[i];
                                   }
                               }
                           }
                       },
                       "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] - y[i];
    }
    return make_result(a.shape(), std::move(out), {a, b},
                       [](detail::Node& self) {
                           if (double* g = sink(self, 0)) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   g[i] += self.grad[i];
                               }
                           }
                           if (double* g = sink(self, 1)) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   g[i] -= self.grad[i];
                               }
                           }
                       },
                       "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return make_result(a.shape(), std::move(out), {a, b},
                       [](detail::Node& self) {
                           const auto& xv = in(self, 0);
                           const auto& yv = in(self, 1);
                           if (double* g = sink(self, 0)) {
                               for (std::size_t i = 0; i < xv.size(); ++i) {
                                   g[i] += self.grad[i] * yv[i];
                               }
                           }
                           if (double* g = sink(self, 1)) {
                               for (std::size_t i = 0; i < xv.size(); ++i) {
                                   g[i] += self.grad[i] * xv[i];
                               }
                           }
                       },
                       "mul");
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; }, "scale");
}

Tensor square(const Tensor& a) {
    return unary(
        a, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; }, "square");
}

Tensor add_tiled(const Tensor& x, const Tensor& y) {
    const std::size_t n = x.numel();
    const std::size_t m = y.numel();
    if (m == 0 || n % m != 0) {
        throw std::invalid_argument("add_tiled: " + shape_string(y.shape()) + " does not tile " +
                                    shape_string(x.shape()));
    }
    const auto xv = x.data();
    const auto yv = y.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = xv[i] + yv[i % m];
    }
    return make_result(x.shape(), std::move(out), {x, y},
                       [m](detail::Node& self) {
                           if (double* g = sink(self, 0)) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   g[i] += self.grad[i];
                               }
                           }
                           if (double* g = sink(self, 1)) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   g[i % m] += self.grad[i];
                               }
                           }
                       },
                       "add_tiled");
}

namespace {

struct Expansion {
    std::size_t rows;      // rows of the expanded operand
    std::size_t cols;
    std::size_t repeat;    // rows of x per row of the compact operand
};

Expansion expansion(const Tensor& x, const Tensor& y, const char* op) {
    const std::size_t cols = last_dim(x);
    if (last_dim(y) != cols) {
        throw std::invalid_argument(std::string(op) + ": last dimension mismatch " + shape_string(x.shape()) +
                                    " vs " + shape_string(y.shape()));
    }
    const std::size_t rows = x.numel() / cols;
    const std::size_t yrows = y.numel() / cols;
    if (yrows == 0 || rows % yrows != 0) {
        throw std::invalid_argument(std::string(op) + ": " + shape_string(y.shape()) + " cannot expand over " +
                                    shape_string(x.shape()));
    }
    return {rows, cols, rows / yrows};
}

}  // namespace

Tensor add_expand(const Tensor& x, const Tensor& y) {
    const auto e = expansion(x, y, "add_expand");
    const auto xv = x.data();
    const auto yv = y.data();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < e.rows; ++r) {
        const double* yr = yv.data() + (r / e.repeat) * e.cols;
        for (std::size_t c = 0; c < e.cols; ++c) {
            out[r * e.cols + c] = xv[r * e.cols + c] + yr[c];
        }
    }
    return make_result(x.shape(), std::move(out), {x, y},
                       [e](detail::Node& self) {
                           if (double* g = sink(self, 0)) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   g[i] += self.grad[i];
                               }
                           }
                           if (double* g = sink(self, 1)) {
                               for (std::size_t r = 0; r < e.rows; ++r) {
                                   double* gr = g + (r / e.repeat) * e.cols;
                                   for (std::size_t c = 0; c < e.cols; ++c) {
                                       gr[c] += self.grad[r * e.cols + c];
                                   }
                               }
                           }
                       },
                       "add_expand");
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) {
        total += v;
    }
    return make_result({1}, {total}, {a},
                       [](detail::Node& self) {
                           double* g = sink(self, 0);
                           const double go = self.grad[0];
                           for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) {
                               g[i] += go;
                           }
                       },
                       "sum");
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    double total = 0.0;
    for (double v : a.data()) {
        total += v;
    }
    return make_result({1}, {total / n}, {a},
                       [n](detail::Node& self) {
                           double* g = sink(self, 0);
                           const double go = self.grad[0] / n;
                           for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) {
                               g[i] += go;
                           }
                       },
                       "mean");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                                    shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0);
    const std::size_t k = a.dim(1);
    const std::size_t n = b.dim(1);
    std::vector<double> out(m * n);
    MapMat(out.data(), m, n).noalias() =
        ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
    return make_result({m, n}, std::move(out), {a, b},
                       [m, k, n](detail::Node& self) {
                           ConstMapMat go(self.grad.data(), m, n);
                           if (double* g = sink(self, 0)) {
                               MapMat(g, m, k).noalias() += go * ConstMapMat(in(self, 1).data(), k, n).transpose();
                           }
                           if (double* g = sink(self, 1)) {
                               MapMat(g, k, n).noalias() += ConstMapMat(in(self, 0).data(), m, k).transpose() * go;
                           }
                       },
                       "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (w.rank() != 2 || last_dim(x) != w.dim(0)) {
        throw std::invalid_argument("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                                    shape_string(w.shape()));
    }
    const std::size_t k = w.dim(0);
    const std::size_t n = w.dim(1);
    const std::size_t rows = x.numel() / k;
    Shape out_shape = x.shape();
    out_shape.back() = n;
    Tensor flat = x.rank() == 2 ? x : x.reshape({rows, k});
    Tensor y = matmul(flat, w);
    if (bias.defined()) {
        if (bias.numel() != n) {
            throw std::invalid_argument("linear: bias " + shape_string(bias.shape()) + " for output width " +
                                        std::to_string(n));
        }
        y = add_tiled(y, bias);
    }
    return out_shape.size() == 2 ? y : y.reshape(out_shape);
}

Tensor silu(const Tensor& a) {
    return unary(
        a, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        },
        "silu");
}

Tensor gelu_tanh(const Tensor& a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    return unary(
        a,
        [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
        [](double v, double) {
            const double u = c * (v + k * v * v * v);
            const double th = std::tanh(u);
            const double du = c * (1.0 + 3.0 * k * v * v);
            return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
        },
        "gelu_tanh");
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; }, "tanh");
}

namespace {

// Shared forward/backward for affine-free row normalizations. For layer norm
// the row mean is removed first; rms norm divides by the root mean square.
Tensor row_norm(const Tensor& x, double eps, bool center, const char* op) {
    const std::size_t d = last_dim(x);
    const std::size_t rows = x.numel() / d;
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mu = 0.0;
        if (center) {
            for (std::size_t c = 0; c < d; ++c) {
                mu += xr[c];
            }
            mu /= static_cast<double>(d);
        }
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            var += (xr[c] - mu) * (xr[c] - mu);
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            out[r * d + c] = (xr[c] - mu) * is;
        }
    }
    return make_result(x.shape(), std::move(out), {x},
                       [d, rows, center, inv_std = std::move(inv_std)](detail::Node& self) {
                           double* g = sink(self, 0);
                           const double dd = static_cast<double>(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* y = self.value.data() + r * d;
                               const double* gy = self.grad.data() + r * d;
                               double mean_g = 0.0;
                               double mean_gy = 0.0;
                               for (std::size_t c = 0; c < d; ++c) {
                                   mean_g += gy[c];
                                   mean_gy += gy[c] * y[c];
                               }
                               mean_g = center ? mean_g / dd : 0.0;
                               mean_gy /= dd;
                               for (std::size_t c = 0; c < d; ++c) {
                                   g[r * d + c] += inv_std[r] * (gy[c] - mean_g - y[c] * mean_gy);
                               }
                           }
                       },
                       op);
}

}  // namespace

Tensor layer_norm(const Tensor& x, double eps) { return row_norm(x, eps, true, "layer_norm"); }
Tensor rms_norm(const Tensor& x, double eps) { return row_norm(x, eps, false, "rms_norm"); }

Tensor normalize(const Tensor& x, NormKind kind, double eps) {
    return kind == NormKind::layer ? layer_norm(x, eps) : rms_norm(x, eps);
}

Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scale_t) {
    require_same_shape(shift, scale_t, "modulate");
    const auto e = expansion(x, shift, "modulate");
    const auto xv = x.data();
    const auto sh = shift.data();
    const auto sc = scale_t.data();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < e.rows; ++r) {
        const std::size_t cr = (r / e.repeat) * e.cols;
        for (std::size_t c = 0; c < e.cols; ++c) {
            out[r * e.cols + c] = xv[r * e.cols + c] * (1.0 + sc[cr + c]) + sh[cr + c];
        }
    }
    return make_result(x.shape(), std::move(out), {x, shift, scale_t},
                       [e](detail::Node& self) {
                           const auto& xv2 = in(self, 0);
                           const auto& sc2 = in(self, 2);
                           double* gx = sink(self, 0);
                           double* gsh = sink(self, 1);
                           double* gsc = sink(self, 2);
                           for (std::size_t r = 0; r < e.rows; ++r) {
                               const std::size_t cr = (r / e.repeat) * e.cols;
                               for (std::size_t c = 0; c < e.cols; ++c) {
                                   const double go = self.grad[r * e.cols + c];
                                   if (gx) gx[r * e.cols + c] += go * (1.0 + sc2[cr + c]);
                                   if (gsh) gsh[cr + c] += go;
                                   if (gsc) gsc[cr + c] += go * xv2[r * e.cols + c];
                               }
                           }
                       },
                       "modulate");
}

Tensor gated_add(const Tensor& x, const Tensor& gate, const Tensor& y) {
    require_same_shape(x, y, "gated_add");
    const auto e = expansion(x, gate, "gated_add");
    const auto xv = x.data();
    const auto gv = gate.data();
    const auto yv = y.data();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < e.rows; ++r) {
        const std::size_t cr = (r / e.repeat) * e.cols;
        for (std::size_t c = 0; c < e.cols; ++c) {
            out[r * e.cols + c] = xv[r * e.cols + c] + gv[cr + c] * yv[r * e.cols + c];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gate, y},
                       [e](detail::Node& self) {
                           const auto& gv2 = in(self, 1);
                           const auto& yv2 = in(self, 2);
                           double* gx = sink(self, 0);
                           double* gg = sink(self, 1);
                           double* gy = sink(self, 2);
                           for (std::size_t r = 0; r < e.rows; ++r) {
                               const std::size_t cr = (r / e.repeat) * e.cols;
                               for (std::size_t c = 0; c < e.cols; ++c) {
                                   const double go = self.grad[r * e.cols + c];
                                   if (gx) gx[r * e.cols + c] += go;
                                   if (gg) gg[cr + c] += go * yv2[r * e.cols + c];
                                   if (gy) gy[r * e.cols + c] += go * gv2[cr + c];
                               }
                           }
                       },
                       "gated_add");
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
    const std::size_t cols = last_dim(x);
    if (len == 0 || start + len > cols) {
        throw std::invalid_argument("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                                    ") out of range for " + shape_string(x.shape()));
    }
    const std::size_t rows = x.numel() / cols;
    const auto xv = x.data();
    std::vector<double> out(rows * len);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < len; ++c) {
            out[r * len + c] = xv[r * cols + start + c];
        }
    }
    Shape shape = x.shape();
    shape.back() = len;
    return make_result(std::move(shape), std::move(out), {x},
                       [rows, cols, start, len](detail::Node& self) {
                           double* g = sink(self, 0);
                           for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t c = 0; c < len; ++c) {
                                   g[r * cols + start + c] += self.grad[r * len + c];
                               }
                           }
                       },
                       "slice_cols");
}

Tensor embedding(const Tensor& table, std::span<const int> indices) {
    if (table.rank() != 2) {
        throw std::invalid_argument("embedding: table must be rank 2");
    }
    const std::size_t vocab = table.dim(0);
    const std::size_t d = table.dim(1);
    std::vector<std::size_t> rows(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= vocab) {
            throw std::out_of_range("embedding index " + std::to_string(indices[i]) + " outside [0, " +
                                    std::to_string(vocab) + ")");
        }
        rows[i] = static_cast<std::size_t>(indices[i]);
    }
    const auto tv = table.data();
    std::vector<double> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(tv.data() + rows[i] * d, d, out.data() + i * d);
    }
    return make_result({rows.size(), d}, std::move(out), {table},
                       [rows, d](detail::Node& self) {
                           double* g = sink(self, 0);
                           for (std::size_t i = 0; i < rows.size(); ++i) {
                               for (std::size_t c = 0; c < d; ++c) {
                                   g[rows[i] * d + c] += self.grad[i * d + c];
                               }
                           }
                       },
                       "embedding");
}

Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape) {
    if (shape_numel(out_shape) != index.size()) {
        throw std::invalid_argument("gather: index length does not match output shape " + shape_string(out_shape));
    }
    const auto xv = x.data();
    std::vector<double> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= xv.size()) {
            throw std::out_of_range("gather: index out of range");
        }
        out[i] = xv[index[i]];
    }
    return make_result(std::move(out_shape), std::move(out), {x},
                       [index = std::move(index)](detail::Node& self) {
                           double* g = sink(self, 0);
                           for (std::size_t i = 0; i < index.size(); ++i) {
                               g[index[i]] += self.grad[i];
                           }
                       },
                       "gather");
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "cosine_rows");
    const std::size_t d = last_dim(a);
    const std::size_t rows = a.numel() / d;
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(rows, 0.0);
    std::vector<double> na(rows), nb(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double x = av[r * d + c];
            const double y = bv[r * d + c];
            dot += x * y;
            aa += x * x;
            bb += y * y;
        }
        na[r] = std::sqrt(aa);
        nb[r] = std::sqrt(bb);
        if (na[r] > 0.0 && nb[r] > 0.0) {
            out[r] = std::clamp(dot / (na[r] * nb[r]), -1.0, 1.0);
        }
    }
    Shape shape = a.shape();
    shape.pop_back();
    if (shape.empty()) {
        shape = {1};
    }
    return make_result(std::move(shape), std::move(out), {a, b},
                       [d, rows, na = std::move(na), nb = std::move(nb)](detail::Node& self) {
                           const auto& av2 = in(self, 0);
                           const auto& bv2 = in(self, 1);
                           double* ga = sink(self, 0);
                           double* gb = sink(self, 1);
                           for (std::size_t r = 0; r < rows; ++r) {
                               if (!(na[r] > 0.0 && nb[r] > 0.0)) {
                                   continue;
                               }
                               const double go = self.grad[r];
                               const double cs = self.value[r];
                               for (std::size_t c = 0; c < d; ++c) {
                                   const double x = av2[r * d + c];
                                   const double y = bv2[r * d + c];
                                   if (ga) ga[r * d + c] += go * (y / (na[r] * nb[r]) - cs * x / (na[r] * na[r]));
                                   if (gb) gb[r * d + c] += go * (x / (na[r] * nb[r]) - cs * y / (nb[r] * nb[r]));
                               }
                           }
                       },
                       "cosine_rows");
}

}  // namespace ddt::ops
