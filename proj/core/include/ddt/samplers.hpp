#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddt/tensor.hpp"

namespace ddt {

/// Linear flow path: alpha(t) = t scales data, sigma(t) = 1 - t scales noise.
struct NoiseSchedule {
    double alpha(double t) const { return t; }
    double sigma(double t) const { return 1.0 - t; }
    double alpha_dot(double) const { return 1.0; }
    double sigma_dot(double) const { return -1.0; }
};

struct SdeCoefficients {
    double f = 0.0;
    double g2 = 0.0;
};

/// f = alpha'/alpha, g^2 = 2 sigma (sigma' - f sigma). Requires t in (0, 1].
SdeCoefficients sde_coefficients(const NoiseSchedule& schedule, double t);

struct ScoreEstimate {
    Tensor eps_hat;
    Tensor score;
    Tensor x_data_hat;
};

/// Converts a velocity prediction at x_t into noise, score and data
/// estimates. Requires t in (0, 1).
ScoreEstimate velocity_to_score(const Tensor& v, const Tensor& x_t, double t);

struct TimeGrid {
    std::size_t steps = 0;
    double shift = 1.0;
    std::vector<double> nodes;  // steps + 1 values, 0 to 1

    double dt(std::size_t i) const { return nodes[i + 1] - nodes[i]; }
};

/// t_i = u_i / (u_i + s (1 - u_i)), u_i = i / N. shift 1 yields exactly i / N.
TimeGrid make_timegrid(std::size_t steps, double shift = 1.0);

struct GuidanceSpec {
    double w = 1.0;
    double lo = 0.0;
    double hi = 1.0;

    /// Whether both conditional and unconditional branches are needed.
    bool active() const { return w != 1.0; }
    bool applies(double t) const { return t >= lo && t <= hi; }
    void validate() const;
};

/// v_u + w (v_c - v_u) inside [lo, hi], v_c elsewhere; v_c itself when w == 1.
Tensor guided_velocity(const Tensor& v_cond, const Tensor& v_uncond, const GuidanceSpec& spec, double t);

/// coefficient_j = integral over [from, to] of the j-th Lagrange basis
/// polynomial on `nodes`. Output order follows `nodes`.
std::vector<double> lagrange_coefficients(std::span<const double> nodes, double from, double to);

using VelocityField = std::function<Tensor(const Tensor& x, double t)>;
/// Field that also learns the step index (used by encoder sharing).
using StepVelocityField = std::function<Tensor(const Tensor& x, double t, std::size_t step)>;

enum class SolverKind { euler, adams2, adams3 };

std::string to_string(SolverKind kind);
SolverKind parse_solver(std::string_view name);
std::size_t solver_order(SolverKind kind);

struct TrajectoryPoint {
    std::size_t step = 0;
    double t = 0.0;
    double norm_x = 0.0;
    double norm_v = 0.0;
};

struct Trajectory {
    std::vector<TrajectoryPoint> points;
    /// Per-step states when requested (x before each update, then the final x).
    std::vector<Tensor> states;
};

struct SampleOptions {
    std::size_t order = 1;
    Trajectory* record = nullptr;
    bool keep_states = false;
};

/// Linear multistep integration from t_0 to t_N; one field evaluation per
/// step. Step i uses order min(i + 1, options.order). Throws NumericalError
/// naming the step when the state or velocity turns non-finite.
Tensor integrate(const StepVelocityField& field, const Tensor& x0, const TimeGrid& grid,
                 const SampleOptions& options = {});

Tensor euler_sample(const VelocityField& field, const Tensor& x0, const TimeGrid& grid, Trajectory* record = nullptr);
Tensor adams_sample(const VelocityField& field, const Tensor& x0, const TimeGrid& grid, std::size_t order,
                    Trajectory* record = nullptr);
Tensor solve(const VelocityField& field, const Tensor& x0, const TimeGrid& grid, SolverKind solver,
             Trajectory* record = nullptr);

/// CSV with header step,t,norm_x,norm_v.
std::string trajectory_csv(const Trajectory& trajectory);

}  // namespace ddt
