#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the code under test except to build tensors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "ddt/ops.hpp"
#include "ddt/rng.hpp"
#include "ddt/sharesched.hpp"
#include "ddt/tensor.hpp"

namespace oracle {

using ddt::Tensor;

/// Data ~ N(0, sd^2) pushed along x_t = t x + (1-t) eps. The marginal
/// velocity is E[x - eps | x_t] = (t sd^2 - (1-t)) / (t^2 sd^2 + (1-t)^2) x_t.
struct GaussianField {
    double sd = 0.5;

    double rate(double t) const {
        const double s2 = sd * sd;
        return (t * s2 - (1.0 - t)) / (t * t * s2 + (1.0 - t) * (1.0 - t));
    }
    Tensor operator()(const Tensor& x, double t) const {
        std::vector<double> v(x.data().begin(), x.data().end());
        const double r = rate(t);
        for (double& e : v) e *= r;
        return Tensor::from(x.shape(), std::move(v));
    }
    /// Exact flow map from t = 0.
    double scale(double t) const { return std::sqrt(t * t * sd * sd + (1.0 - t) * (1.0 - t)); }
};

/// Point-mass data at x_star: v(x, t) = (x_star - x) / (1 - t).
struct PointMassField {
    std::vector<double> x_star;

    Tensor operator()(const Tensor& x, double t) const {
        std::vector<double> v(x.numel());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = (x_star[i] - x.data()[i]) / (1.0 - t);
        return Tensor::from(x.shape(), std::move(v));
    }
};

inline Tensor random_tensor(ddt::Rng& rng, ddt::Shape shape, double scale = 1.0, bool requires_grad = false) {
    std::vector<double> v(ddt::shape_numel(shape));
    for (double& e : v) e = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Random symmetric matrix with unit diagonal and entries in [-1, 1].
inline ddt::SimilarityMatrix random_similarity(ddt::Rng& rng, std::size_t n) {
    ddt::SimilarityMatrix s(n);
    for (std::size_t i = 0; i < n; ++i) {
        s(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            s(i, j) = rng.uniform(-1.0, 1.0);
            s(j, i) = s(i, j);
        }
    }
    return s;
}

/// S[i][j] = rho^|i-j|: similarity decaying with step distance.
inline ddt::SimilarityMatrix decaying_similarity(std::size_t n, double rho) {
    ddt::SimilarityMatrix s(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s(i, j) = std::pow(rho, std::abs(double(i) - double(j)));
    return s;
}

/// Central finite differences of a scalar function of the leaf values.
/// Error per entry is |analytic - numeric| / max(floor, |numeric|).
struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

using EntryPicker = std::function<std::vector<std::size_t>(std::size_t leaf, std::size_t numel)>;

inline GradCheck gradcheck_entries(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                   const EntryPicker& pick, double h, double floor) {
    for (auto& l : leaves) l.zero_grad();
    Tensor loss = loss_fn();
    ddt::backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) {
        if (l.has_grad()) {
            analytic.emplace_back(l.grad().begin(), l.grad().end());
        } else {
            analytic.emplace_back(l.numel(), 0.0);
        }
    }
    GradCheck out;
    ddt::NoGradGuard guard;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        auto data = leaves[k].mutable_data();
        for (std::size_t i : pick(k, data.size())) {
            const double orig = data[i];
            data[i] = orig + h;
            const double up = loss_fn().item();
            data[i] = orig - h;
            const double down = loss_fn().item();
            data[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(analytic[k][i] - numeric) / std::max(floor, std::abs(numeric));
            out.max_rel_error = std::max(out.max_rel_error, err);
            ++out.checked;
        }
    }
    return out;
}

/// Every entry, or every `stride`-th one.
inline GradCheck gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves, double h = 1e-6,
                           std::size_t stride = 1, double floor = 1.0) {
    auto pick = [stride](std::size_t, std::size_t numel) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < numel; i += stride) idx.push_back(i);
        return idx;
    };
    return gradcheck_entries(loss_fn, std::move(leaves), pick, h, floor);
}

/// Up to `per_leaf` distinct random entries of each leaf.
inline GradCheck gradcheck_sampled(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                   ddt::Rng& rng, std::size_t per_leaf, double h, double floor) {
    auto pick = [&rng, per_leaf](std::size_t, std::size_t numel) {
        std::vector<std::size_t> idx;
        if (numel <= per_leaf) {
            for (std::size_t i = 0; i < numel; ++i) idx.push_back(i);
            return idx;
        }
        while (idx.size() < per_leaf) {
            const std::size_t i = rng.below(numel);
            if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
        }
        return idx;
    };
    return gradcheck_entries(loss_fn, std::move(leaves), pick, h, floor);
}

/// Weighted sum with fixed random weights so every output entry matters.
inline Tensor probe_loss(const Tensor& y, std::uint64_t seed = 99) {
    ddt::Rng rng(seed);
    std::vector<double> w(y.numel());
    for (double& e : w) e = rng.normal();
    return ddt::ops::sum(ddt::ops::mul(y, Tensor::from(y.shape(), std::move(w))));
}

}  // namespace oracle
