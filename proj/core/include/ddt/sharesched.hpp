#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ddt/checkpoint.hpp"
#include "ddt/model.hpp"
#include "ddt/samplers.hpp"
#include "ddt/tensor.hpp"

namespace ddt {

/// Step-to-step similarity of encoder outputs, row-major N x N.
struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<double> values;

    SimilarityMatrix() = default;
    explicit SimilarityMatrix(std::size_t n, double fill = 0.0) : n(n), values(n * n, fill) {}

    double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }

    /// Throws std::invalid_argument unless square, symmetric and unit-diagonal
    /// within `tol`.
    void validate(double tol = 1e-9) const;
};

struct SharingPlan {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<std::size_t> anchors;  // sorted, starts at 0
    std::string strategy;
    double utility = 0.0;  // NaN when no matrix was involved

    /// Latest anchor at or before step i.
    std::size_t anchor_for(std::size_t step) const;
    std::vector<std::size_t> assignment() const;
    bool is_anchor(std::size_t step) const;
    double sharing_ratio() const { return 1.0 - static_cast<double>(k) / static_cast<double>(n); }
    void validate() const;
};

/// Audit tables of plan_dp. cost(k, i) is the negated best utility of steps
/// i..N-1 when anchor k sits at step i; next(k, i) is anchor k+1 (N when k
/// is the last anchor, or for unreachable cells).
struct DPState {
    std::size_t k = 0;
    std::size_t n = 0;
    std::vector<double> cost;
    std::vector<std::size_t> next;

    double cost_at(std::size_t kk, std::size_t i) const { return cost[kk * n + i]; }
    std::size_t next_at(std::size_t kk, std::size_t i) const { return next[kk * n + i]; }
    /// Anchors recovered by following `next` from (0, 0).
    std::vector<std::size_t> backtrack() const;
};

/// Prefix-sum table W[j][i] = sum_{l=j..i} S[j][l] for j <= i.
class SegmentTable {
public:
    explicit SegmentTable(const SimilarityMatrix& s);
    double operator()(std::size_t j, std::size_t i) const { return w_[j * n_ + i]; }
    std::size_t size() const { return n_; }

private:
    std::size_t n_;
    std::vector<double> w_;
};

double segment_utility(const SimilarityMatrix& s, std::size_t j, std::size_t i);

/// Sum of W over the segments defined by `anchors`, folded from the right.
double plan_utility(const SimilarityMatrix& s, const std::vector<std::size_t>& anchors);
double plan_utility(const SegmentTable& w, const std::vector<std::size_t>& anchors);

/// Anchor budget for a sharing ratio r: ceil(N (1 - r)), at least 1.
std::size_t budget_for_ratio(std::size_t n, double ratio);

/// Anchors round(k N / K) for k = 0..K-1 (halves round up).
SharingPlan plan_uniform(std::size_t n, std::size_t k);
/// Maximum-utility anchors by dynamic programming; ties go to the
/// lexicographically smallest anchor set.
SharingPlan plan_dp(const SimilarityMatrix& s, std::size_t k, DPState* audit = nullptr);
/// Exhaustive search over all anchor sets containing 0 (N <= 20).
SharingPlan plan_bruteforce(const SimilarityMatrix& s, std::size_t k);

inline constexpr std::size_t kBruteforceLimit = 20;

struct DDTSampling {
    TimeGrid grid;
    SolverKind solver = SolverKind::euler;
    GuidanceSpec guidance;
};

/// Velocity of the DDT with the encoder evaluated on every call. The
/// unconditional branch uses the null class.
VelocityField ddt_velocity_field(const DDTModel& model, std::vector<int> labels, GuidanceSpec guidance = {});

/// Unshared sampling: encoder and decoder at every step.
Tensor sample_full(const DDTModel& model, const Tensor& x0, const std::vector<int>& labels,
                   const DDTSampling& settings, Trajectory* record = nullptr);

/// Encoder runs only at plan anchors; other steps reuse the latest anchor's
/// self-condition. Conditional and unconditional caches are kept separately.
Tensor sample_with_sharing(const DDTModel& model, const Tensor& x0, const std::vector<int>& labels,
                           const DDTSampling& settings, const SharingPlan& plan, Trajectory* record = nullptr);

/// Unshared, unguided sampling over `grid`; S[i][j] is the mean over probe
/// samples of the cosine between flattened conditional z at steps i and j.
SimilarityMatrix probe_similarity(const DDTModel& model, const Tensor& x0, const std::vector<int>& labels,
                                  const TimeGrid& grid, SolverKind solver = SolverKind::euler);

/// Mean of S[i][i+1] and mean of S[i][j] over |i - j| >= N / 2.
struct SimilaritySummary {
    double adjacent = 0.0;
    double far = 0.0;
};
SimilaritySummary summarize_similarity(const SimilarityMatrix& s);

// Text formats.

/// Hex FNV-1a digest of N and the raw values.
std::string similarity_checksum(const SimilarityMatrix& s);

/// '#' comment lines, then N, then N rows of N values.
std::string format_similarity(const SimilarityMatrix& s, const std::string& comment = {});
SimilarityMatrix parse_similarity(const std::string& text);  // throws FormatError

/// key=value header (N, K, sharing_ratio, strategy, s_checksum, utility)
/// followed by `anchors=` with space-separated step indices.
std::string format_plan(const SharingPlan& plan, const std::string& s_checksum = {});
SharingPlan parse_plan(const std::string& text);

}  // namespace ddt
