#pragma once

#include <cstddef>
#include <string>

#include "ddt/tensor.hpp"

namespace ddt {

/// Median pairwise squared Euclidean distance between the rows of a sample
/// (leading axis indexes samples).
double median_sq_distance(const Tensor& samples);

/// sqrt of the biased (V-statistic) MMD^2 with kernel exp(-|a-b|^2 / bandwidth).
double mmd_rbf(const Tensor& x, const Tensor& y, double bandwidth);

/// L2 distance between the mean radial spectra of two [B,C,H,W] sets.
double spectral_distance(const Tensor& a, const Tensor& b);

struct EvalReport {
    double mmd = 0.0;
    double spectral_distance = 0.0;
    std::size_t nfe_encoder = 0;
    std::size_t nfe_decoder = 0;

    std::string to_text() const;
};

struct NfeCount {
    std::size_t encoder = 0;
    std::size_t decoder = 0;
};

/// Closed-form forward counts for N steps, K encoder anchors and 1 or 2
/// guidance branches.
NfeCount expected_nfe(std::size_t steps, std::size_t anchors, std::size_t cfg_branches);

}  // namespace ddt
