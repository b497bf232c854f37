#include "ddt/samplers.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <sstream>
#include <stdexcept>

namespace ddt {

SdeCoefficients sde_coefficients(const NoiseSchedule& schedule, double t) {
    if (!(t > 0.0 && t <= 1.0)) {
        throw std::invalid_argument("sde_coefficients: t must lie in (0, 1], got " + std::to_string(t));
    }
    SdeCoefficients c;
    c.f = schedule.alpha_dot(t) / schedule.alpha(t);
    const double s = schedule.sigma(t);
    c.g2 = 2.0 * s * (schedule.sigma_dot(t) - c.f * s);
    return c;
}

ScoreEstimate velocity_to_score(const Tensor& v, const Tensor& x_t, double t) {
    if (!(t > 0.0 && t < 1.0)) {
        throw std::invalid_argument("velocity_to_score: t must lie in (0, 1), got " + std::to_string(t));
    }
    if (v.shape() != x_t.shape()) {
        throw std::invalid_argument("velocity_to_score: shape mismatch");
    }
    const auto vv = v.data();
    const auto xx = x_t.data();
    const std::size_t n = vv.size();
    std::vector<double> eps(n), score(n), xd(n);
    for (std::size_t i = 0; i < n; ++i) {
        eps[i] = xx[i] - t * vv[i];
        score[i] = -eps[i] / (1.0 - t);
        xd[i] = xx[i] + (1.0 - t) * vv[i];
    }
    return {Tensor::from(v.shape(), std::move(eps)), Tensor::from(v.shape(), std::move(score)),
            Tensor::from(v.shape(), std::move(xd))};
}

TimeGrid make_timegrid(std::size_t steps, double shift) {
    if (steps == 0) {
        throw std::invalid_argument("time grid needs at least one step");
    }
    if (!(shift >= 1.0) || !std::isfinite(shift)) {
        throw std::invalid_argument("time shift must be >= 1");
    }
    TimeGrid g;
    g.steps = steps;
    g.shift = shift;
    g.nodes.resize(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(steps);
        g.nodes[i] = shift == 1.0 ? u : u / (u + shift * (1.0 - u));
    }
    g.nodes.front() = 0.0;
    g.nodes.back() = 1.0;
    return g;
}

void GuidanceSpec::validate() const {
    if (!(w >= 0.0) || !std::isfinite(w)) {
        throw std::invalid_argument("guidance weight must be finite and >= 0");
    }
    if (!(lo >= 0.0 && hi <= 1.0 && lo < hi)) {
        throw std::invalid_argument("guidance interval must satisfy 0 <= a < b <= 1");
    }
}

Tensor guided_velocity(const Tensor& v_cond, const Tensor& v_uncond, const GuidanceSpec& spec, double t) {
    if (v_cond.shape() != v_uncond.shape()) {
        throw std::invalid_argument("guided_velocity: branch shapes differ");
    }
    if (!spec.active() || !spec.applies(t)) {
        return v_cond;
    }
    const auto c = v_cond.data();
    const auto u = v_uncond.data();
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        out[i] = u[i] + spec.w * (c[i] - u[i]);
    }
    return Tensor::from(v_cond.shape(), std::move(out));
}

std::vector<double> lagrange_coefficients(std::span<const double> nodes, double from, double to) {
    const std::size_t n = nodes.size();
    if (n == 0) {
        throw std::invalid_argument("lagrange_coefficients: no nodes");
    }
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            if (nodes[a] == nodes[b]) {
                throw std::invalid_argument("lagrange_coefficients: duplicate node");
            }
        }
    }
    if (n == 1) {
        return {to - from};
    }
    // Work in s = t - from so the integral runs over [0, h].
    const double h = to - from;
    std::vector<double> coeffs(n);
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> poly{1.0};  // ascending powers of s
        double denom = 1.0;
        for (std::size_t m = 0; m < n; ++m) {
            if (m == j) continue;
            const double root = nodes[m] - from;
            std::vector<double> next(poly.size() + 1, 0.0);
            for (std::size_t p = 0; p < poly.size(); ++p) {
                next[p + 1] += poly[p];
                next[p] -= root * poly[p];
            }
            poly = std::move(next);
            denom *= nodes[j] - nodes[m];
        }
        double integral = 0.0;
        double hp = h;
        for (std::size_t p = 0; p < poly.size(); ++p) {
            integral += poly[p] * hp / static_cast<double>(p + 1);
            hp *= h;
        }
        coeffs[j] = integral / denom;
    }
    return coeffs;
}

std::string to_string(SolverKind kind) {
    switch (kind) {
        case SolverKind::euler: return "euler";
        case SolverKind::adams2: return "adams2";
        case SolverKind::adams3: return "adams3";
    }
    return "?";
}

SolverKind parse_solver(std::string_view name) {
    if (name == "euler") return SolverKind::euler;
    if (name == "adams2") return SolverKind::adams2;
    if (name == "adams3") return SolverKind::adams3;
    throw std::invalid_argument("unknown solver '" + std::string(name) + "' (euler, adams2, adams3)");
}

std::size_t solver_order(SolverKind kind) {
    switch (kind) {
        case SolverKind::euler: return 1;
        case SolverKind::adams2: return 2;
        case SolverKind::adams3: return 3;
    }
    return 1;
}

namespace {

double l2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

Tensor integrate(const StepVelocityField& field, const Tensor& x0, const TimeGrid& grid,
                 const SampleOptions& options) {
    if (options.order < 1 || options.order > 3) {
        throw std::invalid_argument("multistep order must be 1, 2 or 3");
    }
    if (grid.nodes.size() != grid.steps + 1) {
        throw std::invalid_argument("malformed time grid");
    }
    if (!x0.all_finite()) {
        throw NumericalError("initial state is not finite");
    }
    NoGradGuard no_grad;
    const Shape shape = x0.shape();
    std::vector<double> x(x0.data().begin(), x0.data().end());
    std::deque<std::vector<double>> history;  // newest first
    std::deque<double> times;

    for (std::size_t i = 0; i < grid.steps; ++i) {
        const double t = grid.nodes[i];
        Tensor xt = Tensor::from(shape, x);
        Tensor v = field(xt, t, i);
        if (v.shape() != shape) {
            throw std::invalid_argument("velocity field returned shape " + shape_string(v.shape()) + ", expected " +
                                        shape_string(shape));
        }
        if (!v.all_finite()) {
            throw NumericalError("non-finite velocity at step " + std::to_string(i) + " (t=" + std::to_string(t) +
                                 ")");
        }
        if (options.record != nullptr) {
            options.record->points.push_back({i, t, l2(x), l2(v.data())});
            if (options.keep_states) {
                options.record->states.push_back(xt);
            }
        }
        history.emplace_front(v.data().begin(), v.data().end());
        times.push_front(t);
        const std::size_t k = std::min(options.order, i + 1);
        while (history.size() > k) {
            history.pop_back();
            times.pop_back();
        }
        const std::vector<double> nodes(times.begin(), times.end());
        const std::vector<double> c = lagrange_coefficients(nodes, t, grid.nodes[i + 1]);
        for (std::size_t e = 0; e < x.size(); ++e) {
            double acc = 0.0;
            for (std::size_t j = 0; j < c.size(); ++j) {
                acc += c[j] * history[j][e];
            }
            x[e] += acc;
        }
        for (double value : x) {
            if (!std::isfinite(value)) {
                throw NumericalError("non-finite state after step " + std::to_string(i));
            }
        }
    }
    Tensor out = Tensor::from(shape, std::move(x));
    if (options.record != nullptr && options.keep_states) {
        options.record->states.push_back(out);
    }
    return out;
}

Tensor euler_sample(const VelocityField& field, const Tensor& x0, const TimeGrid& grid, Trajectory* record) {
    return adams_sample(field, x0, grid, 1, record);
}

Tensor adams_sample(const VelocityField& field, const Tensor& x0, const TimeGrid& grid, std::size_t order,
                    Trajectory* record) {
    SampleOptions opt;
    opt.order = order;
    opt.record = record;
    return integrate([&](const Tensor& x, double t, std::size_t) { return field(x, t); }, x0, grid, opt);
}

Tensor solve(const VelocityField& field, const Tensor& x0, const TimeGrid& grid, SolverKind solver,
             Trajectory* record) {
    return adams_sample(field, x0, grid, solver_order(solver), record);
}

std::string trajectory_csv(const Trajectory& trajectory) {
    std::ostringstream os;
    os << "step,t,norm_x,norm_v\n";
    char buf[128];
    for (const auto& p : trajectory.points) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", p.step, p.t, p.norm_x, p.norm_v);
        os << buf;
    }
    return os.str();
}

}  // namespace ddt
