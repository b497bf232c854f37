#include <cmath>
#include <numeric>

#include "doctest.h"
#include "ddt/ops.hpp"
#include "oracles.hpp"

using namespace ddt;
using oracle::gradcheck;
using oracle::probe_loss;
using oracle::random_tensor;

namespace {

constexpr double kTol = 1e-6;

void check_unary(Tensor (*op)(const Tensor&), double (*ref)(double)) {
    Rng rng(3);
    Tensor x = random_tensor(rng, {4, 5}, 1.5, true);
    Tensor y = op(x);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(y.data()[i] == doctest::Approx(ref(x.data()[i])).epsilon(1e-12));
    }
    auto r = gradcheck([&] { return probe_loss(op(x)); }, {x});
    CHECK(r.max_rel_error < kTol);
}

}  // namespace

TEST_CASE("elementwise binary ops: values and gradients") {
    Rng rng(1);
    Tensor a = random_tensor(rng, {3, 4}, 1.0, true);
    Tensor b = random_tensor(rng, {3, 4}, 1.0, true);
    Tensor s = ops::add(a, b), d = ops::sub(a, b), m = ops::mul(a, b);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        CHECK(s.data()[i] == a.data()[i] + b.data()[i]);
        CHECK(d.data()[i] == a.data()[i] - b.data()[i]);
        CHECK(m.data()[i] == a.data()[i] * b.data()[i]);
    }
    CHECK(gradcheck([&] { return probe_loss(ops::add(a, b)); }, {a, b}).max_rel_error < kTol);
    CHECK(gradcheck([&] { return probe_loss(ops::sub(a, b)); }, {a, b}).max_rel_error < kTol);
    CHECK(gradcheck([&] { return probe_loss(ops::mul(a, b)); }, {a, b}).max_rel_error < kTol);
    CHECK(gradcheck([&] { return probe_loss(ops::scale(a, -2.5)); }, {a}).max_rel_error < kTol);
    CHECK(gradcheck([&] { return probe_loss(ops::square(a)); }, {a}).max_rel_error < kTol);
    CHECK_THROWS_AS(ops::add(a, Tensor::zeros({4, 3})), std::invalid_argument);
}

TEST_CASE("reductions") {
    Rng rng(2);
    Tensor a = random_tensor(rng, {5, 2}, 1.0, true);
    double ref = 0.0;
    for (double v : a.data()) ref += v;
    CHECK(ops::sum(a).item() == doctest::Approx(ref));
    CHECK(ops::mean(a).item() == doctest::Approx(ref / 10));
    CHECK(gradcheck([&] { return ops::mean(ops::square(a)); }, {a}).max_rel_error < kTol);
}

TEST_CASE("broadcasting adds") {
    Rng rng(4);
    Tensor x = random_tensor(rng, {6, 3}, 1.0, true);
    Tensor tile = random_tensor(rng, {2, 3}, 1.0, true);
    Tensor y = ops::add_tiled(x, tile);
    CHECK(y.data()[4 * 3 + 1] == x.data()[13] + tile.data()[1]);
    CHECK(gradcheck([&] { return probe_loss(ops::add_tiled(x, tile)); }, {x, tile}).max_rel_error < kTol);

    Tensor rows = random_tensor(rng, {2, 3}, 1.0, true);
    Tensor e = ops::add_expand(x, rows);
    // rows 0..2 get rows[0], rows 3..5 get rows[1]
    CHECK(e.data()[2 * 3] == x.data()[6] + rows.data()[0]);
    CHECK(e.data()[3 * 3] == x.data()[9] + rows.data()[3]);
    CHECK(gradcheck([&] { return probe_loss(ops::add_expand(x, rows)); }, {x, rows}).max_rel_error < kTol);
    CHECK_THROWS_AS(ops::add_expand(x, Tensor::zeros({4, 3})), std::invalid_argument);
    CHECK_THROWS_AS(ops::add_tiled(x, Tensor::zeros({4})), std::invalid_argument);
}

TEST_CASE("matmul and linear against naive products") {
    Rng rng(5);
    Tensor a = random_tensor(rng, {3, 4}, 1.0, true);
    Tensor b = random_tensor(rng, {4, 2}, 1.0, true);
    Tensor bias = random_tensor(rng, {2}, 1.0, true);
    Tensor c = ops::matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double ref = 0;
            for (std::size_t k = 0; k < 4; ++k) ref += a.data()[i * 4 + k] * b.data()[k * 2 + j];
            CHECK(c.data()[i * 2 + j] == doctest::Approx(ref).epsilon(1e-12));
        }
    Tensor l = ops::linear(a, b, bias);
    CHECK(l.data()[3] == doctest::Approx(c.data()[3] + bias.data()[1]).epsilon(1e-12));
    CHECK(gradcheck([&] { return probe_loss(ops::matmul(a, b)); }, {a, b}).max_rel_error < kTol);
    CHECK(gradcheck([&] { return probe_loss(ops::linear(a, b, bias)); }, {a, b, bias}).max_rel_error < kTol);

    Tensor x3 = random_tensor(rng, {2, 3, 4}, 1.0, true);
    CHECK(ops::linear(x3, b).shape() == Shape{2, 3, 2});
    CHECK(gradcheck([&] { return probe_loss(ops::linear(x3, b)); }, {x3, b}).max_rel_error < kTol);
    CHECK_THROWS_AS(ops::matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(ops::linear(a, b, Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("activations") {
    check_unary(ops::silu, [](double x) { return x / (1.0 + std::exp(-x)); });
    check_unary(ops::tanh, [](double x) { return std::tanh(x); });
    check_unary(ops::gelu_tanh, [](double x) {
        return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
    });
}

TEST_CASE("normalizations are affine-free and differentiable") {
    Rng rng(6);
    Tensor x = random_tensor(rng, {4, 8}, 2.0, true);
    Tensor ln = ops::layer_norm(x);
    Tensor rms = ops::rms_norm(x);
    for (std::size_t r = 0; r < 4; ++r) {
        double mu = 0, var = 0, ms = 0, out_mu = 0, out_ms = 0, rms_ms = 0;
        for (std::size_t c = 0; c < 8; ++c) mu += x.data()[r * 8 + c] / 8;
        for (std::size_t c = 0; c < 8; ++c) {
            const double v = x.data()[r * 8 + c];
            var += (v - mu) * (v - mu) / 8;
            ms += v * v / 8;
            out_mu += ln.data()[r * 8 + c] / 8;
            out_ms += ln.data()[r * 8 + c] * ln.data()[r * 8 + c] / 8;
            rms_ms += rms.data()[r * 8 + c] * rms.data()[r * 8 + c] / 8;
        }
        CHECK(std::abs(out_mu) < 1e-12);
        CHECK(out_ms == doctest::Approx(var / (var + 1e-6)).epsilon(1e-10));
        CHECK(rms_ms == doctest::Approx(ms / (ms + 1e-6)).epsilon(1e-10));
        CHECK(rms.data()[r * 8] == doctest::Approx(x.data()[r * 8] / std::sqrt(ms + 1e-6)).epsilon(1e-12));
    }
    CHECK(gradcheck([&] { return probe_loss(ops::layer_norm(x)); }, {x}).max_rel_error < kTol);
    CHECK(gradcheck([&] { return probe_loss(ops::rms_norm(x)); }, {x}).max_rel_error < kTol);
    CHECK(ops::normalize(x, ops::NormKind::rms).data()[0] == rms.data()[0]);
}

TEST_CASE("modulation and gating") {
    Rng rng(7);
    Tensor x = random_tensor(rng, {6, 4}, 1.0, true);
    Tensor shift = random_tensor(rng, {2, 4}, 1.0, true);
    Tensor scale = random_tensor(rng, {2, 4}, 1.0, true);
    Tensor y = ops::modulate(x, shift, scale);
    CHECK(y.data()[5] == doctest::Approx(x.data()[5] * (1 + scale.data()[1]) + shift.data()[1]));
    CHECK(y.data()[4 * 4 + 2] == doctest::Approx(x.data()[18] * (1 + scale.data()[6]) + shift.data()[6]));
    CHECK(gradcheck([&] { return probe_loss(ops::modulate(x, shift, scale)); }, {x, shift, scale}).max_rel_error <
          kTol);

    Tensor branch = random_tensor(rng, {6, 4}, 1.0, true);
    Tensor g = ops::gated_add(x, scale, branch);
    CHECK(g.data()[0] == doctest::Approx(x.data()[0] + scale.data()[0] * branch.data()[0]));
    CHECK(gradcheck([&] { return probe_loss(ops::gated_add(x, scale, branch)); }, {x, scale, branch})
              .max_rel_error < kTol);

    // A zero gate passes x through unchanged, bit for bit.
    Tensor zero_gate = Tensor::zeros({2, 4});
    Tensor same = ops::gated_add(x, zero_gate, branch);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.data()[i] == x.data()[i]);
}

TEST_CASE("slicing, embedding and gather") {
    Rng rng(8);
    Tensor x = random_tensor(rng, {3, 5}, 1.0, true);
    Tensor s = ops::slice_cols(x, 1, 3);
    CHECK(s.shape() == Shape{3, 3});
    CHECK(s.data()[3] == x.data()[6]);
    CHECK_THROWS_AS(ops::slice_cols(x, 3, 3), std::invalid_argument);
    CHECK(gradcheck([&] { return probe_loss(ops::slice_cols(x, 1, 3)); }, {x}).max_rel_error < kTol);

    Tensor table = random_tensor(rng, {4, 2}, 1.0, true);
    const int idx[] = {3, 0, 3};
    Tensor e = ops::embedding(table, idx);
    CHECK(e.data()[0] == table.data()[6]);
    CHECK(e.data()[4] == table.data()[6]);
    const int bad[] = {4};
    CHECK_THROWS_AS(ops::embedding(table, bad), std::out_of_range);
    CHECK(gradcheck([&] { return probe_loss(ops::embedding(table, idx)); }, {table}).max_rel_error < kTol);

    std::vector<std::size_t> gi{4, 4, 0, 14};
    Tensor gth = ops::gather(x, gi, {2, 2});
    CHECK(gth.data()[3] == x.data()[14]);
    CHECK(gradcheck([&] { return probe_loss(ops::gather(x, gi, {2, 2})); }, {x}).max_rel_error < kTol);
    CHECK_THROWS_AS(ops::gather(x, {15}, {1}), std::out_of_range);
}

TEST_CASE("row cosine handles zero rows") {
    Rng rng(9);
    Tensor a = random_tensor(rng, {3, 4}, 1.0, true);
    Tensor b = random_tensor(rng, {3, 4}, 1.0, true);
    Tensor c = ops::cosine_rows(a, b);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        dot += a.data()[k] * b.data()[k];
        na += a.data()[k] * a.data()[k];
        nb += b.data()[k] * b.data()[k];
    }
    CHECK(c.data()[0] == doctest::Approx(dot / std::sqrt(na * nb)).epsilon(1e-12));
    CHECK(gradcheck([&] { return probe_loss(ops::cosine_rows(a, b)); }, {a, b}).max_rel_error < kTol);

    Tensor z = Tensor::zeros({1, 4}, true);
    Tensor w = Tensor::from({1, 4}, {1, 2, 3, 4}, true);
    Tensor cz = ops::cosine_rows(z, w);
    CHECK(cz.item() == 0.0);
    backward(ops::sum(cz));
    for (double g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("rotary table rotates rows by row then column position") {
    auto rt = ops::RotaryTable::grid_2d(2, 3, 8);
    CHECK(rt.tokens == 6);
    // Token (r=1, c=2), pair 0 uses the row angle 1 * base^0, pair 2 the column angle 2 * base^0.
    const std::size_t tok = 1 * 3 + 2;
    CHECK(rt.cos[tok * 4 + 0] == doctest::Approx(std::cos(1.0)));
    CHECK(rt.sin[tok * 4 + 2] == doctest::Approx(std::sin(2.0)));
    CHECK(rt.sin[tok * 4 + 1] == doctest::Approx(std::sin(1.0 * std::pow(10000.0, -0.5))));
    CHECK_THROWS_AS(ops::RotaryTable::grid_2d(2, 2, 6), std::invalid_argument);
}

namespace {

// Reference attention: loops only, no shared code with the library.
std::vector<double> naive_attention(const Tensor& qkv, std::size_t batch, std::size_t tokens, std::size_t heads,
                                    const ops::RotaryTable* rt) {
    const std::size_t width = qkv.dim(1) / 3, hd = width / heads;
    const auto x = qkv.data();
    std::vector<double> out(batch * tokens * width, 0.0);
    auto rot = [&](std::vector<double> v, std::size_t t) {
        if (!rt) return v;
        for (std::size_t p = 0; p < hd / 2; ++p) {
            const double c = rt->cos[t * (hd / 2) + p], s = rt->sin[t * (hd / 2) + p];
            const double a = v[2 * p], b = v[2 * p + 1];
            v[2 * p] = a * c - b * s;
            v[2 * p + 1] = a * s + b * c;
        }
        return v;
    };
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < tokens; ++i) {
                std::vector<double> q(hd);
                for (std::size_t d = 0; d < hd; ++d) q[d] = x[(b * tokens + i) * 3 * width + h * hd + d];
                q = rot(q, i);
                std::vector<double> w(tokens);
                double mx = -1e300;
                for (std::size_t j = 0; j < tokens; ++j) {
                    std::vector<double> k(hd);
                    for (std::size_t d = 0; d < hd; ++d) k[d] = x[(b * tokens + j) * 3 * width + width + h * hd + d];
                    k = rot(k, j);
                    double s = 0;
                    for (std::size_t d = 0; d < hd; ++d) s += q[d] * k[d];
                    w[j] = s / std::sqrt(double(hd));
                    mx = std::max(mx, w[j]);
                }
                double z = 0;
                for (auto& v : w) z += (v = std::exp(v - mx));
                for (std::size_t j = 0; j < tokens; ++j)
                    for (std::size_t d = 0; d < hd; ++d)
                        out[(b * tokens + i) * width + h * hd + d] +=
                            w[j] / z * x[(b * tokens + j) * 3 * width + 2 * width + h * hd + d];
            }
    return out;
}

}  // namespace

TEST_CASE("attention matches a naive reference, with and without rotary") {
    Rng rng(10);
    const std::size_t batch = 2, tokens = 4, heads = 2, width = 8;
    Tensor qkv = random_tensor(rng, {batch * tokens, 3 * width}, 1.0, true);
    const auto rt = ops::RotaryTable::grid_2d(2, 2, width / heads);
    for (const ops::RotaryTable* table : {static_cast<const ops::RotaryTable*>(nullptr), &rt}) {
        Tensor o = ops::attention(qkv, batch, tokens, heads, table);
        const auto ref = naive_attention(qkv, batch, tokens, heads, table);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(o.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        auto r = gradcheck([&] { return probe_loss(ops::attention(qkv, batch, tokens, heads, table)); }, {qkv});
        CHECK(r.max_rel_error < kTol);
    }
    CHECK_THROWS_AS(ops::attention(qkv, batch, 3, heads), std::invalid_argument);
}
