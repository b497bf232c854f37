#include "ddt/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "ddt/dataset.hpp"
#include "ddt/dct.hpp"

namespace ddt {

std::vector<double> radial_spectrum(std::span<const double> image, std::size_t channels, std::size_t height,
                                    std::size_t width) {
    if (image.size() != channels * height * width || image.empty()) {
        throw std::invalid_argument("radial_spectrum: image size does not match [C,H,W]");
    }
    const std::size_t bins = radial_bins(height, width);
    std::vector<double> sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    const std::size_t plane = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        const std::vector<double> coeffs = dct2d(image.subspan(c * plane, plane), height, width);
        for (std::size_t u = 0; u < height; ++u) {
            for (std::size_t v = 0; v < width; ++v) {
                const std::size_t r = radial_index(u, v);
                const double a = coeffs[u * width + v];
                sum[r] += a * a;
                ++count[r];
            }
        }
    }
    for (std::size_t r = 0; r < bins; ++r) {
        sum[r] /= static_cast<double>(count[r]);
    }
    return sum;
}

std::vector<double> mean_radial_spectrum(const Tensor& images) {
    if (images.rank() != 4) {
        throw std::invalid_argument("mean_radial_spectrum expects [B,C,H,W], got " + shape_string(images.shape()));
    }
    const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t per = c * h * w;
    std::vector<double> acc(radial_bins(h, w), 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const auto spec = radial_spectrum(images.data().subspan(i * per, per), c, h, w);
        for (std::size_t r = 0; r < acc.size(); ++r) acc[r] += spec[r];
    }
    for (double& v : acc) v /= static_cast<double>(b);
    return acc;
}

SpectrumProfile SpectrumProfile::from_data(std::vector<double> data_coefficients, double lambda) {
    if (data_coefficients.empty()) {
        throw std::invalid_argument("spectrum profile needs at least one frequency");
    }
    for (double c : data_coefficients) {
        if (!(c >= 0.0)) throw std::invalid_argument("spectrum coefficients must be non-negative");
    }
    if (!(lambda > 0.0)) {
        throw std::invalid_argument("noise floor lambda must be positive");
    }
    SpectrumProfile p;
    p.coefficients = data_coefficients;
    p.data_coefficients = std::move(data_coefficients);
    p.t = 1.0;
    p.lambda = lambda;
    return p;
}

SpectrumProfile expected_spectrum(const SpectrumProfile& data, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("expected_spectrum: t must lie in [0, 1]");
    }
    SpectrumProfile p = data;
    p.t = t;
    const double s = 1.0 - t;
    for (std::size_t i = 0; i < p.coefficients.size(); ++i) {
        p.coefficients[i] = t * t * p.data_coefficients[i] + s * s * p.lambda;
    }
    return p;
}

namespace {

double floor_level(const SpectrumProfile& p) {
    const double peak = *std::max_element(p.data_coefficients.begin(), p.data_coefficients.end());
    return kSpectrumFloor * peak;
}

}  // namespace

std::size_t k_freq(const SpectrumProfile& profile) {
    const double level = floor_level(profile);
    std::size_t k = 0;
    for (std::size_t i = 0; i < profile.data_coefficients.size(); ++i) {
        if (profile.data_coefficients[i] > level) k = i;
    }
    return k;
}

std::size_t retained_frequency(const SpectrumProfile& profile) {
    const double level = floor_level(profile);
    const double t = profile.t;
    const double noise = (1.0 - t) * (1.0 - t) * profile.lambda;
    std::size_t k = 0;
    for (std::size_t i = 0; i < profile.data_coefficients.size(); ++i) {
        const double c = profile.data_coefficients[i];
        if (c > level && t * t * c > noise) k = i;
    }
    return k;
}

double lemma_bound(double t, std::size_t k_freq) {
    if (!(t >= 0.0 && t < 1.0)) {
        throw std::invalid_argument("lemma_bound: t must lie in [0, 1)");
    }
    const double r = t / (1.0 - t);
    return std::min(r * r, static_cast<double>(k_freq));
}

std::size_t measured_retained_frequency(std::span<const double> noisy, double t, double lambda) {
    const double noise = (1.0 - t) * (1.0 - t) * lambda;
    std::size_t k = 0;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
        if (noisy[i] - noise > noise) k = i;
    }
    return k;
}

std::vector<double> monte_carlo_spectrum(const Tensor& dataset, double t, std::size_t draws, Rng& rng) {
    if (dataset.rank() != 4) {
        throw std::invalid_argument("monte_carlo_spectrum expects a [B,C,H,W] dataset");
    }
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("monte_carlo_spectrum: t must lie in [0, 1]");
    }
    const std::size_t b = dataset.dim(0), c = dataset.dim(1), h = dataset.dim(2), w = dataset.dim(3);
    const std::size_t per = c * h * w;
    const std::size_t block = 2 * b;
    const std::size_t rounds = std::max<std::size_t>(1, (draws + block - 1) / block);
    const auto x = dataset.data();
    std::vector<double> acc(radial_bins(h, w), 0.0);
    std::vector<double> eps(per), plus(per), minus(per);
    for (std::size_t r = 0; r < rounds; ++r) {
        for (std::size_t i = 0; i < b; ++i) {
            for (auto& e : eps) e = rng.normal();
            for (std::size_t k = 0; k < per; ++k) {
                const double signal = t * x[i * per + k];
                plus[k] = signal + (1.0 - t) * eps[k];
                minus[k] = signal - (1.0 - t) * eps[k];
            }
            const auto sp = radial_spectrum(plus, c, h, w);
            const auto sm = radial_spectrum(minus, c, h, w);
            for (std::size_t q = 0; q < acc.size(); ++q) acc[q] += sp[q] + sm[q];
        }
    }
    for (double& v : acc) v /= static_cast<double>(rounds * block);
    return acc;
}

std::string spectrum_csv(const SpectrumProfile& analytic, std::span<const double> empirical) {
    if (!empirical.empty() && empirical.size() != analytic.coefficients.size()) {
        throw std::invalid_argument("spectrum_csv: empirical spectrum has a different bin count");
    }
    std::ostringstream os;
    os << "freq,c_data,c_noisy_analytic,c_noisy_empirical\n";
    char buf[160];
    for (std::size_t i = 0; i < analytic.coefficients.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,", i, analytic.data_coefficients[i],
                      analytic.coefficients[i]);
        os << buf;
        if (!empirical.empty()) {
            std::snprintf(buf, sizeof buf, "%.17g", empirical[i]);
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace ddt
