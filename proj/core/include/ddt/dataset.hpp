#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ddt/config.hpp"
#include "ddt/rng.hpp"
#include "ddt/tensor.hpp"

namespace ddt {

/// Synthetic image distributions used for training and analytic oracles.
///   bands          per-class band-limited template plus band-limited variation
///   pointmass      a single fixed image (every draw identical)
///   gaussian       i.i.d. N(0, gaussian_std^2) pixels
///   unit_spectrum  random-sign DCT coefficients of magnitude exactly 1
enum class DatasetKind { bands, pointmass, gaussian, unit_spectrum };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view name);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::bands;
    std::size_t image_size = 8;
    std::size_t channels = 1;
    std::size_t num_classes = 2;
    /// Largest radial DCT index carrying energy (bands, pointmass).
    std::size_t band_limit = 2;
    double variation = 0.2;
    double gaussian_std = 0.5;

    static DatasetSpec for_model(const ModelConfig& config, DatasetKind kind);
};

struct DataBatch {
    Tensor x;            // [B,C,H,W]
    std::vector<int> y;  // class per sample
};

class SyntheticDataset {
public:
    /// Templates are fixed by `seed`; draws come from the caller's stream.
    SyntheticDataset(const DatasetSpec& spec, std::uint64_t seed);

    const DatasetSpec& spec() const { return spec_; }
    DataBatch sample(Rng& rng, std::size_t count) const;
    /// Class template image (bands, pointmass), row-major [C,H,W].
    const std::vector<double>& class_template(std::size_t label) const;

private:
    std::vector<double> band_limited_field(Rng& rng) const;

    DatasetSpec spec_;
    std::vector<std::vector<double>> templates_;
};

/// Radial frequency index floor(sqrt(u^2 + v^2)) of DCT coefficient (u, v).
std::size_t radial_index(std::size_t u, std::size_t v);
std::size_t radial_bins(std::size_t height, std::size_t width);

}  // namespace ddt
