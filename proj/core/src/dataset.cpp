#include "ddt/dataset.hpp"

#include <cmath>
#include <stdexcept>

#include "ddt/dct.hpp"

namespace ddt {

std::string to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::bands: return "bands";
        case DatasetKind::pointmass: return "pointmass";
        case DatasetKind::gaussian: return "gaussian";
        case DatasetKind::unit_spectrum: return "unit_spectrum";
    }
    return "bands";
}

DatasetKind parse_dataset_kind(std::string_view name) {
    if (name == "bands") return DatasetKind::bands;
    if (name == "pointmass") return DatasetKind::pointmass;
    if (name == "gaussian") return DatasetKind::gaussian;
    if (name == "unit_spectrum") return DatasetKind::unit_spectrum;
    throw ConfigError("dataset", "unknown dataset '" + std::string(name) +
                                     "' (bands, pointmass, gaussian, unit_spectrum)");
}

DatasetSpec DatasetSpec::for_model(const ModelConfig& config, DatasetKind kind) {
    DatasetSpec spec;
    spec.kind = kind;
    spec.image_size = config.image_size;
    spec.channels = config.channels;
    spec.num_classes = config.num_classes;
    return spec;
}

std::size_t radial_index(std::size_t u, std::size_t v) {
    // Integer square root of u^2 + v^2, exact for the sizes used here.
    const std::size_t r2 = u * u + v * v;
    auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(r2)));
    while (r * r > r2) --r;
    while ((r + 1) * (r + 1) <= r2) ++r;
    return r;
}

std::size_t radial_bins(std::size_t height, std::size_t width) { return radial_index(height - 1, width - 1) + 1; }

SyntheticDataset::SyntheticDataset(const DatasetSpec& spec, std::uint64_t seed) : spec_(spec) {
    if (spec_.image_size == 0 || spec_.channels == 0 || spec_.num_classes == 0) {
        throw std::invalid_argument("dataset dimensions must be positive");
    }
    Rng rng = Rng::stream(seed, "dataset-templates");
    const std::size_t count = spec_.kind == DatasetKind::pointmass ? 1 : spec_.num_classes;
    if (spec_.kind == DatasetKind::bands || spec_.kind == DatasetKind::pointmass) {
        for (std::size_t c = 0; c < count; ++c) {
            templates_.push_back(band_limited_field(rng));
        }
    }
}

std::vector<double> SyntheticDataset::band_limited_field(Rng& rng) const {
    const std::size_t n = spec_.image_size;
    std::size_t active = 0;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            active += radial_index(u, v) <= spec_.band_limit ? 1 : 0;
        }
    }
    // Unit expected pixel variance: energy spread over `active` coefficients.
    const double amp = std::sqrt(static_cast<double>(n * n) / static_cast<double>(active));
    std::vector<double> out;
    out.reserve(spec_.channels * n * n);
    for (std::size_t c = 0; c < spec_.channels; ++c) {
        std::vector<double> coeffs(n * n, 0.0);
        for (std::size_t u = 0; u < n; ++u) {
            for (std::size_t v = 0; v < n; ++v) {
                if (radial_index(u, v) <= spec_.band_limit) {
                    coeffs[u * n + v] = amp * rng.normal();
                }
            }
        }
        const auto img = idct2d(coeffs, n, n);
        out.insert(out.end(), img.begin(), img.end());
    }
    return out;
}

const std::vector<double>& SyntheticDataset::class_template(std::size_t label) const {
    if (templates_.empty()) {
        throw std::logic_error("dataset '" + to_string(spec_.kind) + "' has no templates");
    }
    return templates_.at(spec_.kind == DatasetKind::pointmass ? 0 : label);
}

DataBatch SyntheticDataset::sample(Rng& rng, std::size_t count) const {
    const std::size_t n = spec_.image_size;
    const std::size_t per = spec_.channels * n * n;
    DataBatch batch;
    std::vector<double> x;
    x.reserve(count * per);
    for (std::size_t i = 0; i < count; ++i) {
        int label = 0;
        switch (spec_.kind) {
            case DatasetKind::bands: {
                label = static_cast<int>(rng.below(spec_.num_classes));
                const auto& tpl = templates_[static_cast<std::size_t>(label)];
                const auto field = band_limited_field(rng);
                for (std::size_t k = 0; k < per; ++k) {
                    x.push_back(tpl[k] + spec_.variation * field[k]);
                }
                break;
            }
            case DatasetKind::pointmass:
                x.insert(x.end(), templates_[0].begin(), templates_[0].end());
                break;
            case DatasetKind::gaussian:
                label = static_cast<int>(rng.below(spec_.num_classes));
                for (std::size_t k = 0; k < per; ++k) {
                    x.push_back(spec_.gaussian_std * rng.normal());
                }
                break;
            case DatasetKind::unit_spectrum: {
                label = static_cast<int>(rng.below(spec_.num_classes));
                for (std::size_t c = 0; c < spec_.channels; ++c) {
                    std::vector<double> coeffs(n * n);
                    for (auto& v : coeffs) {
                        v = rng.uniform() < 0.5 ? -1.0 : 1.0;
                    }
                    const auto img = idct2d(coeffs, n, n);
                    x.insert(x.end(), img.begin(), img.end());
                }
                break;
            }
        }
        batch.y.push_back(label);
    }
    batch.x = Tensor::from({count, spec_.channels, n, n}, std::move(x));
    return batch;
}

}  // namespace ddt
