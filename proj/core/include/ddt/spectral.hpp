#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ddt/rng.hpp"
#include "ddt/tensor.hpp"

namespace ddt {

/// Mean squared orthonormal-DCT coefficient per radial bin of a row-major
/// [C,H,W] image (averaged over channels and over the coefficients in a bin).
std::vector<double> radial_spectrum(std::span<const double> image, std::size_t channels, std::size_t height,
                                    std::size_t width);
/// Average radial spectrum of a [B,C,H,W] batch.
std::vector<double> mean_radial_spectrum(const Tensor& images);

/// Expected per-frequency squared magnitude of t * x + (1 - t) * eps.
struct SpectrumProfile {
    std::vector<double> coefficients;
    std::vector<double> data_coefficients;
    double t = 1.0;
    double lambda = 1.0;

    /// Clean-data profile (t = 1).
    static SpectrumProfile from_data(std::vector<double> data_coefficients, double lambda = 1.0);
};

/// c_i(t) = t^2 c_i(data) + (1 - t)^2 lambda.
SpectrumProfile expected_spectrum(const SpectrumProfile& data, double t);

/// Relative level below which a data coefficient counts as absent.
inline constexpr double kSpectrumFloor = 1e-12;

/// Highest bin carrying data energy (above kSpectrumFloor times the peak).
std::size_t k_freq(const SpectrumProfile& profile);

/// Largest i with t^2 c_i(data) > (1 - t)^2 lambda among bins carrying
/// data energy; 0 if none.
std::size_t retained_frequency(const SpectrumProfile& profile);

/// min((t / (1 - t))^2, K). Requires t in [0, 1).
double lemma_bound(double t, std::size_t k_freq);

/// Retained frequency read off an empirical noisy spectrum: largest i whose
/// excess over the noise floor exceeds the floor; 0 if none.
std::size_t measured_retained_frequency(std::span<const double> noisy, double t, double lambda = 1.0);

/// Empirical radial spectrum of t * x + (1 - t) * eps over `draws` noisy
/// copies of a fixed [B,C,H,W] dataset. Every image is used equally often
/// and noise is drawn in antithetic pairs (eps, -eps); `draws` is rounded up
/// to a multiple of 2B.
std::vector<double> monte_carlo_spectrum(const Tensor& dataset, double t, std::size_t draws, Rng& rng);

/// Header freq,c_data,c_noisy_analytic,c_noisy_empirical.
std::string spectrum_csv(const SpectrumProfile& analytic, std::span<const double> empirical);

}  // namespace ddt
