#include <cmath>

#include "doctest.h"
#include "ddt/dataset.hpp"
#include "ddt/dct.hpp"
#include "ddt/spectral.hpp"

using namespace ddt;

TEST_CASE("radial index is the floored Euclidean radius") {
    CHECK(radial_index(0, 0) == 0);
    CHECK(radial_index(1, 1) == 1);
    CHECK(radial_index(3, 4) == 5);
    CHECK(radial_index(7, 7) == 9);
    CHECK(radial_bins(8, 8) == 10);
}

TEST_CASE("dataset kinds parse and print") {
    for (auto k : {DatasetKind::bands, DatasetKind::pointmass, DatasetKind::gaussian, DatasetKind::unit_spectrum}) {
        CHECK(parse_dataset_kind(to_string(k)) == k);
    }
    CHECK_THROWS_AS(parse_dataset_kind("mnist"), ConfigError);
}

TEST_CASE("band-limited classes carry no energy above the band") {
    DatasetSpec spec;
    SyntheticDataset ds(spec, 3);
    Rng rng(4);
    DataBatch b = ds.sample(rng, 64);
    CHECK(b.x.shape() == Shape{64, 1, 8, 8});
    int seen[2] = {0, 0};
    for (int y : b.y) {
        REQUIRE(y >= 0);
        REQUIRE(y < 2);
        ++seen[y];
    }
    CHECK(seen[0] > 10);
    CHECK(seen[1] > 10);
    const auto spec_profile = mean_radial_spectrum(b.x);
    const double peak = *std::max_element(spec_profile.begin(), spec_profile.end());
    for (std::size_t r = 0; r < spec_profile.size(); ++r) {
        if (r <= spec.band_limit) {
            CHECK(spec_profile[r] > 1e-3);
        } else {
            CHECK(spec_profile[r] < 1e-20 * peak);
        }
    }
}

TEST_CASE("templates are fixed by the seed, draws by the stream") {
    DatasetSpec spec;
    SyntheticDataset a(spec, 1), b(spec, 1), c(spec, 2);
    CHECK(a.class_template(0) == b.class_template(0));
    CHECK(a.class_template(0) != c.class_template(0));
    CHECK(a.class_template(0) != a.class_template(1));
    Rng r1(5), r2(5);
    CHECK(a.sample(r1, 4).x.data()[7] == b.sample(r2, 4).x.data()[7]);
}

TEST_CASE("pointmass draws are identical") {
    DatasetSpec spec;
    spec.kind = DatasetKind::pointmass;
    SyntheticDataset ds(spec, 9);
    Rng rng(1);
    DataBatch b = ds.sample(rng, 3);
    for (std::size_t k = 0; k < 64; ++k) {
        CHECK(b.x.data()[k] == b.x.data()[64 + k]);
        CHECK(b.x.data()[k] == ds.class_template(0)[k]);
    }
}

TEST_CASE("unit-spectrum images have unit DCT magnitudes") {
    DatasetSpec spec;
    spec.kind = DatasetKind::unit_spectrum;
    SyntheticDataset ds(spec, 0);
    Rng rng(2);
    DataBatch b = ds.sample(rng, 2);
    const auto coeffs = dct2d(b.x.data().subspan(0, 64), 8, 8);
    for (double c : coeffs) CHECK(std::abs(c) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(ds.class_template(0), std::logic_error);
}

TEST_CASE("gaussian pixels have the configured spread") {
    DatasetSpec spec;
    spec.kind = DatasetKind::gaussian;
    SyntheticDataset ds(spec, 0);
    Rng rng(3);
    DataBatch b = ds.sample(rng, 500);
    double s2 = 0;
    for (double v : b.x.data()) s2 += v * v;
    s2 /= double(b.x.numel());
    CHECK(std::sqrt(s2) == doctest::Approx(spec.gaussian_std).epsilon(0.02));
}
