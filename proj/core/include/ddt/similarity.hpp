#pragma once

#include <span>

#include "ddt/tensor.hpp"

namespace ddt {

struct CosineResult {
    double value = 0.0;
    /// Set when either argument has zero norm; value is then 0.
    bool degenerate = false;
};

/// dot(a, b) / (|a| |b|), clamped to [-1, 1]. Shapes must match.
CosineResult cosine_similarity(std::span<const double> a, std::span<const double> b);
CosineResult cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace ddt
