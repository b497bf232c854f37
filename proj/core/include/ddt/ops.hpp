#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ddt/tensor.hpp"

// Differentiable tensor operations. Every op here has a hand-written backward
// that is checked against central finite differences in the unit tests.
namespace ddt::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);

/// out[i] = x[i] + y[i % y.numel()]; biases and position tables.
Tensor add_tiled(const Tensor& x, const Tensor& y);

/// x viewed as [R, C], y as [Ry, C] with R % Ry == 0: row r of x receives row
/// r / (R / Ry) of y. Broadcasts per-sample conditioning over tokens.
Tensor add_expand(const Tensor& x, const Tensor& y);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [..., K] * w [K, N] (+ bias [N]) -> [..., N].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

Tensor silu(const Tensor& a);
Tensor gelu_tanh(const Tensor& a);
Tensor tanh(const Tensor& a);

enum class NormKind { layer, rms };

/// Affine-free normalization over the last dimension.
Tensor layer_norm(const Tensor& x, double eps = 1e-6);
Tensor rms_norm(const Tensor& x, double eps = 1e-6);
Tensor normalize(const Tensor& x, NormKind kind, double eps = 1e-6);

/// x [R, D] * (1 + scale) + shift with scale/shift [Rc, D] expanded over rows.
Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scale);

/// x + gate * y with gate [Rc, D] expanded over the rows of x and y [R, D].
Tensor gated_add(const Tensor& x, const Tensor& gate, const Tensor& y);

/// Columns [start, start + len) of a [R, C] tensor.
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);

/// Rows of table [V, D] selected by indices -> [n, D].
Tensor embedding(const Tensor& table, std::span<const int> indices);

/// out.flat[i] = x.flat[index[i]]; the backward pass scatter-adds.
Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape);

/// Per-row cosine similarity of two [R, D] tensors -> [R]. Rows where either
/// side has zero norm yield 0 with zero gradient.
Tensor cosine_rows(const Tensor& a, const Tensor& b);

/// Rotary tables for 2-D token grids: angles per (token, frequency pair).
struct RotaryTable {
    std::size_t tokens = 0;
    std::size_t head_dim = 0;
    std::vector<double> cos;  // [tokens, head_dim / 2]
    std::vector<double> sin;

    static RotaryTable grid_2d(std::size_t grid_h, std::size_t grid_w, std::size_t head_dim,
                               double base = 10000.0);
    bool empty() const { return tokens == 0; }
};

/// Multi-head scaled dot-product attention over qkv [B*T, 3*D] packed as
/// (q | k | v), returning [B*T, D]. Optional rotary encoding on q and k.
Tensor attention(const Tensor& qkv, std::size_t batch, std::size_t tokens, std::size_t heads,
                 const RotaryTable* rotary = nullptr);

}  // namespace ddt::ops
