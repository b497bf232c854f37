#include "ddt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <vector>

#include "ddt/spectral.hpp"

namespace ddt {

namespace {

std::size_t row_width(const Tensor& t) {
    if (t.rank() < 1 || t.dim(0) == 0) {
        throw std::invalid_argument("sample set must have a non-empty leading axis");
    }
    return t.numel() / t.dim(0);
}

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double e = a[k] - b[k];
        s += e * e;
    }
    return s;
}

double mean_kernel(const Tensor& x, const Tensor& y, std::size_t d, double bandwidth) {
    const double* px = x.data().data();
    const double* py = y.data().data();
    const std::size_t n = x.dim(0), m = y.dim(0);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            acc += std::exp(-sq_dist(px + i * d, py + j * d, d) / bandwidth);
        }
    }
    return acc / static_cast<double>(n * m);
}

}  // namespace

double median_sq_distance(const Tensor& samples) {
    const std::size_t d = row_width(samples);
    const std::size_t n = samples.dim(0);
    if (n < 2) {
        throw std::invalid_argument("median distance needs at least two samples");
    }
    const double* p = samples.data().data();
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            dists.push_back(sq_dist(p + i * d, p + j * d, d));
        }
    }
    const std::size_t mid = dists.size() / 2;
    std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
    double med = dists[mid];
    if (dists.size() % 2 == 0) {
        const double lower = *std::max_element(dists.begin(), dists.begin() + mid);
        med = 0.5 * (med + lower);
    }
    return med;
}

double mmd_rbf(const Tensor& x, const Tensor& y, double bandwidth) {
    const std::size_t d = row_width(x);
    if (row_width(y) != d) {
        throw std::invalid_argument("mmd_rbf: sample dimensions differ");
    }
    if (!(bandwidth > 0.0)) {
        throw std::invalid_argument("mmd_rbf: bandwidth must be positive");
    }
    const double mmd2 =
        mean_kernel(x, x, d, bandwidth) + mean_kernel(y, y, d, bandwidth) - 2.0 * mean_kernel(x, y, d, bandwidth);
    return std::sqrt(std::max(0.0, mmd2));
}

double spectral_distance(const Tensor& a, const Tensor& b) {
    const auto sa = mean_radial_spectrum(a);
    const auto sb = mean_radial_spectrum(b);
    if (sa.size() != sb.size()) {
        throw std::invalid_argument("spectral_distance: image sizes differ");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        s += (sa[i] - sb[i]) * (sa[i] - sb[i]);
    }
    return std::sqrt(s);
}

std::string EvalReport::to_text() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "mmd=%.17g\nspectral_distance=%.17g\nnfe_encoder=%zu\nnfe_decoder=%zu\n", mmd,
                  spectral_distance, nfe_encoder, nfe_decoder);
    return buf;
}

NfeCount expected_nfe(std::size_t steps, std::size_t anchors, std::size_t cfg_branches) {
    if (cfg_branches < 1 || cfg_branches > 2) {
        throw std::invalid_argument("cfg_branches must be 1 or 2");
    }
    return {anchors * cfg_branches, steps * cfg_branches};
}

}  // namespace ddt
