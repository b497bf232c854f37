#include "ddt/sharesched.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ddt/similarity.hpp"

namespace ddt {

void SimilarityMatrix::validate(double tol) const {
    if (n == 0 || values.size() != n * n) {
        throw std::invalid_argument("similarity matrix must be square and non-empty");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(std::abs((*this)(i, i) - 1.0) <= tol)) {
            throw std::invalid_argument("similarity matrix diagonal entry " + std::to_string(i) + " is not 1");
        }
        for (std::size_t j = i + 1; j < n; ++j) {
            if (!(std::abs((*this)(i, j) - (*this)(j, i)) <= tol)) {
                throw std::invalid_argument("similarity matrix is not symmetric at (" + std::to_string(i) + ", " +
                                            std::to_string(j) + ")");
            }
        }
    }
}

std::size_t SharingPlan::anchor_for(std::size_t step) const {
    if (step >= n) {
        throw std::out_of_range("step " + std::to_string(step) + " outside plan of " + std::to_string(n));
    }
    auto it = std::upper_bound(anchors.begin(), anchors.end(), step);
    return *std::prev(it);
}

std::vector<std::size_t> SharingPlan::assignment() const {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = anchor_for(i);
    }
    return out;
}

bool SharingPlan::is_anchor(std::size_t step) const {
    return std::binary_search(anchors.begin(), anchors.end(), step);
}

void SharingPlan::validate() const {
    if (n == 0 || k == 0 || k > n) {
        throw std::invalid_argument("plan needs 1 <= K <= N");
    }
    if (anchors.size() != k) {
        throw std::invalid_argument("plan lists " + std::to_string(anchors.size()) + " anchors, expected K=" +
                                    std::to_string(k));
    }
    if (anchors.front() != 0) {
        throw std::invalid_argument("plan must anchor step 0");
    }
    for (std::size_t a = 1; a < anchors.size(); ++a) {
        if (anchors[a] <= anchors[a - 1]) {
            throw std::invalid_argument("plan anchors must be strictly increasing");
        }
    }
    if (anchors.back() >= n) {
        throw std::invalid_argument("plan anchor beyond the last step");
    }
}

std::vector<std::size_t> DPState::backtrack() const {
    std::vector<std::size_t> out;
    std::size_t i = 0;
    for (std::size_t kk = 0; kk < k && i < n; ++kk) {
        out.push_back(i);
        i = next_at(kk, i);
    }
    return out;
}

SegmentTable::SegmentTable(const SimilarityMatrix& s) : n_(s.n), w_(s.n * s.n, 0.0) {
    for (std::size_t j = 0; j < n_; ++j) {
        double acc = 0.0;
        for (std::size_t i = j; i < n_; ++i) {
            acc += s(j, i);
            w_[j * n_ + i] = acc;
        }
    }
}

double segment_utility(const SimilarityMatrix& s, std::size_t j, std::size_t i) {
    if (j > i) {
        throw std::invalid_argument("segment_utility needs j <= i");
    }
    if (i >= s.n) {
        throw std::out_of_range("segment_utility index beyond N");
    }
    return SegmentTable(s)(j, i);
}

double plan_utility(const SegmentTable& w, const std::vector<std::size_t>& anchors) {
    const std::size_t n = w.size();
    double u = 0.0;
    for (std::size_t a = anchors.size(); a-- > 0;) {
        const std::size_t end = a + 1 < anchors.size() ? anchors[a + 1] - 1 : n - 1;
        const double seg = w(anchors[a], end);
        u = a + 1 == anchors.size() ? seg : seg + u;
    }
    return u;
}

double plan_utility(const SimilarityMatrix& s, const std::vector<std::size_t>& anchors) {
    return plan_utility(SegmentTable(s), anchors);
}

std::size_t budget_for_ratio(std::size_t n, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("sharing ratio must lie in [0, 1)");
    }
    const double k = std::ceil(static_cast<double>(n) * (1.0 - ratio) - 1e-9);
    return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

namespace {

void check_budget(std::size_t n, std::size_t k) {
    if (n == 0) {
        throw std::invalid_argument("plan needs at least one step");
    }
    if (k < 1 || k > n) {
        throw std::invalid_argument("anchor budget K=" + std::to_string(k) + " outside [1, " + std::to_string(n) +
                                    "]");
    }
}

}  // namespace

SharingPlan plan_uniform(std::size_t n, std::size_t k) {
    check_budget(n, k);
    SharingPlan plan;
    plan.n = n;
    plan.k = k;
    plan.strategy = "uniform";
    plan.utility = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t a = 0; a < k; ++a) {
        // round(a N / K) with halves rounded up; distinct because N / K >= 1.
        plan.anchors.push_back((2 * a * n + k) / (2 * k));
    }
    return plan;
}

SharingPlan plan_dp(const SimilarityMatrix& s, std::size_t k, DPState* audit) {
    s.validate();
    const std::size_t n = s.n;
    check_budget(n, k);
    const SegmentTable w(s);
    const double inf = std::numeric_limits<double>::infinity();

    DPState st;
    st.k = k;
    st.n = n;
    st.cost.assign(k * n, inf);
    st.next.assign(k * n, n);

    // Anchor kk may sit at i only if the remaining k - kk anchors fit.
    for (std::size_t kk = k; kk-- > 0;) {
        const std::size_t remaining = k - kk;
        for (std::size_t i = kk; i + remaining <= n; ++i) {
            if (kk + 1 == k) {
                st.cost[kk * n + i] = -w(i, n - 1);
                continue;
            }
            double best = inf;
            std::size_t arg = n;
            for (std::size_t j = i + 1; j + (remaining - 1) <= n; ++j) {
                const double rest = st.cost[(kk + 1) * n + j];
                if (rest == inf) continue;
                const double c = -w(i, j - 1) + rest;
                if (c < best) {
                    best = c;
                    arg = j;
                }
            }
            st.cost[kk * n + i] = best;
            st.next[kk * n + i] = arg;
        }
    }

    SharingPlan plan;
    plan.n = n;
    plan.k = k;
    plan.strategy = "dp";
    plan.anchors = st.backtrack();
    plan.utility = -st.cost[0];
    if (plan.anchors.size() != k) {
        throw std::logic_error("dynamic programming backtrack did not yield K anchors");
    }
    if (audit != nullptr) {
        *audit = std::move(st);
    }
    return plan;
}

SharingPlan plan_bruteforce(const SimilarityMatrix& s, std::size_t k) {
    s.validate();
    const std::size_t n = s.n;
    check_budget(n, k);
    if (n > kBruteforceLimit) {
        throw std::invalid_argument("brute-force planning limited to N <= " + std::to_string(kBruteforceLimit));
    }
    const SegmentTable w(s);

    // Lexicographic enumeration of {0} plus (K-1)-subsets of {1..N-1}.
    std::vector<std::size_t> anchors(k);
    for (std::size_t a = 0; a < k; ++a) anchors[a] = a;
    std::vector<std::size_t> best = anchors;
    double best_u = plan_utility(w, anchors);
    while (true) {
        std::size_t pos = k;
        while (pos-- > 1) {
            if (anchors[pos] < n - (k - pos)) break;
        }
        if (pos == 0 || k == 1) break;
        ++anchors[pos];
        for (std::size_t q = pos + 1; q < k; ++q) anchors[q] = anchors[q - 1] + 1;
        const double u = plan_utility(w, anchors);
        if (u > best_u) {
            best_u = u;
            best = anchors;
        }
    }

    SharingPlan plan;
    plan.n = n;
    plan.k = k;
    plan.strategy = "bruteforce";
    plan.anchors = std::move(best);
    plan.utility = best_u;
    return plan;
}

// ---------------------------------------------------------------------------
// Sampling with the DDT

namespace {

std::vector<double> repeat_t(double t, std::size_t batch) { return std::vector<double>(batch, t); }

void check_labels(const Tensor& x0, const std::vector<int>& labels) {
    if (x0.rank() != 4 || x0.dim(0) != labels.size()) {
        throw std::invalid_argument("sampling needs x0 [B,C,H,W] and one label per sample");
    }
}

}  // namespace

VelocityField ddt_velocity_field(const DDTModel& model, std::vector<int> labels, GuidanceSpec guidance) {
    guidance.validate();
    std::vector<int> null_labels(labels.size(), static_cast<int>(model.config().null_class()));
    return [&model, labels = std::move(labels), null_labels = std::move(null_labels), guidance](const Tensor& x,
                                                                                               double t) {
        const std::vector<double> ts = repeat_t(t, labels.size());
        Tensor zc = model.encode(x, ts, labels).condition.z;
        Tensor vc = model.decode(x, ts, zc);
        if (!guidance.active()) {
            return vc;
        }
        Tensor zu = model.encode(x, ts, null_labels).condition.z;
        Tensor vu = model.decode(x, ts, zu);
        return guided_velocity(vc, vu, guidance, t);
    };
}

Tensor sample_full(const DDTModel& model, const Tensor& x0, const std::vector<int>& labels,
                   const DDTSampling& settings, Trajectory* record) {
    check_labels(x0, labels);
    VelocityField field = ddt_velocity_field(model, labels, settings.guidance);
    return solve(field, x0, settings.grid, settings.solver, record);
}

Tensor sample_with_sharing(const DDTModel& model, const Tensor& x0, const std::vector<int>& labels,
                           const DDTSampling& settings, const SharingPlan& plan, Trajectory* record) {
    check_labels(x0, labels);
    plan.validate();
    if (plan.n != settings.grid.steps) {
        throw std::invalid_argument("plan covers " + std::to_string(plan.n) + " steps but the grid has " +
                                    std::to_string(settings.grid.steps));
    }
    const GuidanceSpec guidance = settings.guidance;
    guidance.validate();
    const std::vector<int> null_labels(labels.size(), static_cast<int>(model.config().null_class()));
    Tensor z_cond;
    Tensor z_uncond;
    StepVelocityField field = [&](const Tensor& x, double t, std::size_t step) {
        const std::vector<double> ts = repeat_t(t, labels.size());
        if (plan.is_anchor(step)) {
            z_cond = model.encode(x, ts, labels).condition.z;
            if (guidance.active()) {
                z_uncond = model.encode(x, ts, null_labels).condition.z;
            }
        }
        Tensor vc = model.decode(x, ts, z_cond);
        if (!guidance.active()) {
            return vc;
        }
        Tensor vu = model.decode(x, ts, z_uncond);
        return guided_velocity(vc, vu, guidance, t);
    };
    SampleOptions opt;
    opt.order = solver_order(settings.solver);
    opt.record = record;
    return integrate(field, x0, settings.grid, opt);
}

SimilarityMatrix probe_similarity(const DDTModel& model, const Tensor& x0, const std::vector<int>& labels,
                                  const TimeGrid& grid, SolverKind solver) {
    if (x0.rank() != 4 || x0.dim(0) == 0) {
        throw std::invalid_argument("probe batch is empty");
    }
    check_labels(x0, labels);
    const std::size_t batch = labels.size();
    std::vector<Tensor> zs;
    zs.reserve(grid.steps);
    StepVelocityField field = [&](const Tensor& x, double t, std::size_t) {
        const std::vector<double> ts = repeat_t(t, batch);
        Tensor z = model.encode(x, ts, labels).condition.z;
        zs.push_back(z);
        return model.decode(x, ts, z);
    };
    SampleOptions opt;
    opt.order = solver_order(solver);
    integrate(field, x0, grid, opt);

    const std::size_t n = grid.steps;
    const std::size_t per = zs.front().numel() / batch;
    auto pair_cos = [&](std::size_t i, std::size_t j, std::size_t b) {
        std::span<const double> a = zs[i].data().subspan(b * per, per);
        std::span<const double> c = zs[j].data().subspan(b * per, per);
        CosineResult r = cosine_similarity(a, c);
        if (r.degenerate && std::equal(a.begin(), a.end(), c.begin())) {
            return 1.0;  // identical (all-zero) features
        }
        return r.value;
    };
    SimilarityMatrix s(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                acc += pair_cos(i, j, b);
            }
            s(i, j) = acc / static_cast<double>(batch);
            s(j, i) = s(i, j);
        }
    }
    return s;
}

SimilaritySummary summarize_similarity(const SimilarityMatrix& s) {
    if (s.n < 2) {
        throw std::invalid_argument("similarity summary needs N >= 2");
    }
    SimilaritySummary out;
    for (std::size_t i = 0; i + 1 < s.n; ++i) {
        out.adjacent += s(i, i + 1);
    }
    out.adjacent /= static_cast<double>(s.n - 1);
    const std::size_t gap = (s.n + 1) / 2;
    std::size_t count = 0;
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t j = i + gap; j < s.n; ++j) {
            out.far += s(i, j);
            ++count;
        }
    }
    out.far = count > 0 ? out.far / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
    return out;
}

}  // namespace ddt
