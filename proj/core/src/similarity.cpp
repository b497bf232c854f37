#include "ddt/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ddt {

CosineResult cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("cosine_similarity: length mismatch");
    }
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        return {0.0, true};
    }
    return {std::clamp(dot / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0), false};
}

CosineResult cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("cosine_similarity: shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
    return cosine_similarity(a.data(), b.data());
}

}  // namespace ddt
