#include "ddt/dct.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace ddt {

const std::vector<double>& dct_matrix(std::size_t n) {
    if (n == 0) {
        throw std::invalid_argument("DCT of an empty vector");
    }
    static std::mutex mu;
    static std::map<std::size_t, std::vector<double>> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) {
        return it->second;
    }
    std::vector<double> m(n * n);
    const double nn = static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double norm = k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn);
        for (std::size_t i = 0; i < n; ++i) {
            m[k * n + i] = norm * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) *
                                           static_cast<double>(k) / nn);
        }
    }
    return cache.emplace(n, std::move(m)).first->second;
}

std::vector<double> dct_ortho(std::span<const double> v) {
    const std::size_t n = v.size();
    const auto& m = dct_matrix(n);
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += m[k * n + i] * v[i];
        }
        out[k] = acc;
    }
    return out;
}

std::vector<double> idct_ortho(std::span<const double> coeffs) {
    const std::size_t n = coeffs.size();
    const auto& m = dct_matrix(n);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            acc += m[k * n + i] * coeffs[k];
        }
        out[i] = acc;
    }
    return out;
}

static void require_vector(const Tensor& v) {
    if (!v.defined() || v.rank() != 1) {
        throw std::invalid_argument("DCT expects a rank-1 tensor");
    }
}

Tensor dct_ortho(const Tensor& v) {
    require_vector(v);
    return Tensor::from(v.shape(), dct_ortho(v.data()));
}

Tensor idct_ortho(const Tensor& coeffs) {
    require_vector(coeffs);
    return Tensor::from(coeffs.shape(), idct_ortho(coeffs.data()));
}

namespace {

std::vector<double> separable(std::span<const double> in, std::size_t h, std::size_t w, bool inverse) {
    if (in.size() != h * w) {
        throw std::invalid_argument("2-D DCT size mismatch");
    }
    const auto& mh = dct_matrix(h);
    const auto& mw = dct_matrix(w);
    // Rows first, then columns: out = Mh * X * Mw^T (forward) or Mh^T * X * Mw.
    std::vector<double> tmp(h * w, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t k = 0; k < w; ++k) {
            double acc = 0.0;
            for (std::size_t c = 0; c < w; ++c) {
                acc += (inverse ? mw[c * w + k] : mw[k * w + c]) * in[r * w + c];
            }
            tmp[r * w + k] = acc;
        }
    }
    std::vector<double> out(h * w, 0.0);
    for (std::size_t k = 0; k < h; ++k) {
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (std::size_t r = 0; r < h; ++r) {
                acc += (inverse ? mh[r * h + k] : mh[k * h + r]) * tmp[r * w + c];
            }
            out[k * w + c] = acc;
        }
    }
    return out;
}

}  // namespace

std::vector<double> dct2d(std::span<const double> image, std::size_t h, std::size_t w) {
    return separable(image, h, w, false);
}

std::vector<double> idct2d(std::span<const double> coeffs, std::size_t h, std::size_t w) {
    return separable(coeffs, h, w, true);
}

}  // namespace ddt
