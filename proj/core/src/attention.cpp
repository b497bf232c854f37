#include <cmath>
#include <string>

#include <Eigen/Core>

#include "ddt/ops.hpp"

namespace ddt::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void rotate(RowMat& m, const RotaryTable& rt, bool inverse) {
    const std::size_t pairs = rt.head_dim / 2;
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        for (std::size_t p = 0; p < pairs; ++p) {
            const double c = rt.cos[t * pairs + p];
            const double s = inverse ? -rt.sin[t * pairs + p] : rt.sin[t * pairs + p];
            const double a = m(t, 2 * p);
            const double b = m(t, 2 * p + 1);
            m(t, 2 * p) = a * c - b * s;
            m(t, 2 * p + 1) = a * s + b * c;
        }
    }
}

}  // namespace

RotaryTable RotaryTable::grid_2d(std::size_t grid_h, std::size_t grid_w, std::size_t head_dim, double base) {
    if (head_dim % 4 != 0) {
        throw std::invalid_argument("2-D rotary encoding needs head_dim divisible by 4, got " +
                                    std::to_string(head_dim));
    }
    RotaryTable rt;
    rt.tokens = grid_h * grid_w;
    rt.head_dim = head_dim;
    const std::size_t pairs = head_dim / 2;
    const std::size_t per_axis = pairs / 2;
    rt.cos.resize(rt.tokens * pairs);
    rt.sin.resize(rt.tokens * pairs);
    for (std::size_t r = 0; r < grid_h; ++r) {
        for (std::size_t c = 0; c < grid_w; ++c) {
            const std::size_t tok = r * grid_w + c;
            for (std::size_t p = 0; p < pairs; ++p) {
                const std::size_t k = p % per_axis;
                const double pos = static_cast<double>(p < per_axis ? r : c);
                const double freq = std::pow(base, -static_cast<double>(k) / static_cast<double>(per_axis));
                rt.cos[tok * pairs + p] = std::cos(pos * freq);
                rt.sin[tok * pairs + p] = std::sin(pos * freq);
            }
        }
    }
    return rt;
}

Tensor attention(const Tensor& qkv, std::size_t batch, std::size_t tokens, std::size_t heads,
                 const RotaryTable* rotary) {
    if (qkv.rank() != 2 || qkv.dim(0) != batch * tokens || qkv.dim(1) % (3 * heads) != 0) {
        throw std::invalid_argument("attention: qkv " + shape_string(qkv.shape()) + " incompatible with batch " +
                                    std::to_string(batch) + ", tokens " + std::to_string(tokens) + ", heads " +
                                    std::to_string(heads));
    }
    const std::size_t width = qkv.dim(1) / 3;
    const std::size_t hd = width / heads;
    const bool use_rope = rotary != nullptr && !rotary->empty();
    if (use_rope && (rotary->tokens != tokens || rotary->head_dim != hd)) {
        throw std::invalid_argument("attention: rotary table does not match token grid");
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto x = qkv.data();
    const std::size_t stride = 3 * width;

    std::vector<double> out(batch * tokens * width);
    const std::size_t block = tokens * tokens;
    std::vector<double> probs(batch * heads * block);
    std::vector<double> q_rot(batch * heads * tokens * hd);
    std::vector<double> k_rot(batch * heads * tokens * hd);

    RowMat q(tokens, hd), k(tokens, hd), v(tokens, hd), s(tokens, tokens);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < tokens; ++t) {
                const double* row = x.data() + (b * tokens + t) * stride + h * hd;
                for (std::size_t d = 0; d < hd; ++d) {
                    q(t, d) = row[d];
                    k(t, d) = row[width + d];
                    v(t, d) = row[2 * width + d];
                }
            }
            if (use_rope) {
                rotate(q, *rotary, false);
                rotate(k, *rotary, false);
            }
            s.noalias() = (q * k.transpose()) * inv_sqrt;
            for (std::size_t t = 0; t < tokens; ++t) {
                const double mx = s.row(t).maxCoeff();
                double z = 0.0;
                for (std::size_t u = 0; u < tokens; ++u) {
                    s(t, u) = std::exp(s(t, u) - mx);
                    z += s(t, u);
                }
                s.row(t) /= z;
            }
            const std::size_t bh = b * heads + h;
            Eigen::Map<RowMat>(probs.data() + bh * block, tokens, tokens) = s;
            Eigen::Map<RowMat>(q_rot.data() + bh * tokens * hd, tokens, hd) = q;
            Eigen::Map<RowMat>(k_rot.data() + bh * tokens * hd, tokens, hd) = k;
            RowMat o = s * v;
            for (std::size_t t = 0; t < tokens; ++t) {
                double* orow = out.data() + (b * tokens + t) * width + h * hd;
                for (std::size_t d = 0; d < hd; ++d) {
                    orow[d] = o(t, d);
                }
            }
        }
    }

    RotaryTable rt = use_rope ? *rotary : RotaryTable{};
    return make_result(
        {batch * tokens, width}, std::move(out), {qkv},
        [=, probs = std::move(probs), q_rot = std::move(q_rot), k_rot = std::move(k_rot),
         rt = std::move(rt)](detail::Node& self) {
            double* g = self.parents[0]->grad_buffer().data();
            const auto& xin = self.parents[0]->value;
            RowMat go(tokens, hd), vv(tokens, hd), dp(tokens, tokens);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t bh = b * heads + h;
                    Eigen::Map<const RowMat> p(probs.data() + bh * block, tokens, tokens);
                    Eigen::Map<const RowMat> qr(q_rot.data() + bh * tokens * hd, tokens, hd);
                    Eigen::Map<const RowMat> kr(k_rot.data() + bh * tokens * hd, tokens, hd);
                    for (std::size_t t = 0; t < tokens; ++t) {
                        const double* grow = self.grad.data() + (b * tokens + t) * width + h * hd;
                        const double* row = xin.data() + (b * tokens + t) * stride + h * hd;
                        for (std::size_t d = 0; d < hd; ++d) {
                            go(t, d) = grow[d];
                            vv(t, d) = row[2 * width + d];
                        }
                    }
                    RowMat dv = p.transpose() * go;
                    dp.noalias() = go * vv.transpose();
                    for (std::size_t t = 0; t < tokens; ++t) {
                        const double dot = dp.row(t).dot(p.row(t));
                        for (std::size_t u = 0; u < tokens; ++u) {
                            dp(t, u) = p(t, u) * (dp(t, u) - dot) * inv_sqrt;
                        }
                    }
                    RowMat dq = dp * kr;
                    RowMat dk = dp.transpose() * qr;
                    if (use_rope) {
                        rotate(dq, rt, true);
                        rotate(dk, rt, true);
                    }
                    for (std::size_t t = 0; t < tokens; ++t) {
                        double* grow = g + (b * tokens + t) * stride + h * hd;
                        for (std::size_t d = 0; d < hd; ++d) {
                            grow[d] += dq(t, d);
                            grow[width + d] += dk(t, d);
                            grow[2 * width + d] += dv(t, d);
                        }
                    }
                }
            }
        },
        "attention");
}

}  // namespace ddt::ops
