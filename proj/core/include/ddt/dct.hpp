#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ddt/tensor.hpp"

namespace ddt {

/// Orthonormal type-II DCT basis, row k holds basis vector u_k (row-major n x n).
const std::vector<double>& dct_matrix(std::size_t n);

/// Orthonormal DCT-II of a vector. Direct O(n^2) product.
std::vector<double> dct_ortho(std::span<const double> v);
/// Inverse (type-III) transform; the transpose of dct_ortho.
std::vector<double> idct_ortho(std::span<const double> coeffs);

Tensor dct_ortho(const Tensor& v);
Tensor idct_ortho(const Tensor& coeffs);

/// Separable 2-D orthonormal DCT of a row-major h x w image.
std::vector<double> dct2d(std::span<const double> image, std::size_t h, std::size_t w);
std::vector<double> idct2d(std::span<const double> coeffs, std::size_t h, std::size_t w);

}  // namespace ddt
