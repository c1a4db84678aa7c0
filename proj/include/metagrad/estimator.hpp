#pragma once

#include <algorithm>
#include <concepts>
#include <functional>
#include <span>
#include <vector>

#include "metagrad/common.hpp"
#include "metagrad/rng.hpp"

namespace metagrad {

enum class EstimatorKind {
    SamplingCorrected,   // direct terms + lambda-weighted correction terms
    Naive,               // direct terms only
    DiceStyle,           // corrected assembly, expected-Hessian propagation
    ExpDiscounted,       // correction terms decayed by alpha per step of lag
    EvolutionStrategies,
    FiniteDifferences,
};

enum class HessianMode {
    Sampled,           // Hessian of the sampled inner objective
    ExpectedEstimate,  // adds the score outer-product term of the expected Hessian
};

enum class BaselineMode {
    None,
    SharedInner,  // subtract the inner-loop value estimate from returns in estimator terms
};

// One point in the bias/variance space.
struct EstimatorSpec {
    EstimatorKind kind = EstimatorKind::SamplingCorrected;
    double lambda = 1.0;
    double alpha = 1.0;
    int truncation = 1;  // window length in inner updates
    HessianMode hessian_mode = HessianMode::Sampled;
    BaselineMode baseline_mode = BaselineMode::None;

    // DiceStyle exists to study the expected-Hessian estimate; it forces that mode.
    HessianMode effective_hessian_mode() const {
        return kind == EstimatorKind::DiceStyle ? HessianMode::ExpectedEstimate : hessian_mode;
    }

    bool backprop_based() const {
        return kind == EstimatorKind::SamplingCorrected || kind == EstimatorKind::Naive ||
               kind == EstimatorKind::DiceStyle || kind == EstimatorKind::ExpDiscounted;
    }

    // throws ConfigError; `lifetime` is the number of inner steps (batches)
    void validate(int lifetime) const;
};

// Streaming per-step record: everything needed to assemble any estimator
// without retaining trajectories. batch_returns are the estimator-facing
// (baseline-adjusted) returns; mean_return is the raw batch mean kept for
// reporting.
struct StepRecord {
    Vec correction;   // J * grad log p(batch)
    Vec direct;       // mean over trajectories of (J * score) * adjusted return
    Vec batch_returns;
    double mean_return = 0.0;
    double mean_weight = 0.0;  // mean of batch_returns
};

struct LifetimeTape {
    std::vector<StepRecord> steps;
    int window_start = 0;
    int lifetime = 0;  // total steps in the lifetime the window was cut from
};

// Capability every inner learner exposes per (meta-params, theta, batch,
// step) binding. add_* variants accumulate into `out` to keep the Jacobian
// propagation allocation-free.
template <class Ops>
concept InnerStepOps = requires(const Ops& o, std::span<const double> v, std::span<double> out, int i) {
    { o.param_dim() } -> std::convertible_to<int>;
    { o.meta_dim() } -> std::convertible_to<int>;
    { o.traj_count() } -> std::convertible_to<int>;
    { o.update() } -> std::same_as<Vec>;
    { o.add_update_hvp(v, HessianMode::Sampled, out) };
    { o.add_update_mixed_row(i, out) };
    { o.batch_score() } -> std::same_as<Vec>;
    { o.traj_score(i) } -> std::same_as<Vec>;
    { o.traj_return(i) } -> std::convertible_to<double>;
    { o.raw_return(i) } -> std::convertible_to<double>;
    { o.baseline_value(i) } -> std::convertible_to<double>;
};

// J <- J + grad_eta(update) + J * grad_theta(update). Row r only ever reads
// itself, so the update happens in place with one scratch row.
template <InnerStepOps Ops>
void propagate_meta_jacobian(Matrix& jac, const Ops& ops, HessianMode mode, Vec& scratch) {
    scratch.resize(jac.cols);
    for (std::size_t r = 0; r < jac.rows; ++r) {
        auto row = jac.row(r);
        std::copy(row.begin(), row.end(), scratch.begin());
        ops.add_update_mixed_row(static_cast<int>(r), row);
        ops.add_update_hvp(scratch, mode, row);
    }
    require_finite(jac.data, "meta-jacobian propagation");
}

template <InnerStepOps Ops>
Matrix propagate_meta_jacobian(const Matrix& jac, const Ops& ops, HessianMode mode) {
    Matrix out = jac;
    Vec scratch;
    propagate_meta_jacobian(out, ops, mode, scratch);
    return out;
}

// Appends the step's correction score, direct term and return statistics.
// `jac` must be the Jacobian of theta before this step's update.
template <InnerStepOps Ops>
void record_step(LifetimeTape& tape, const Matrix& jac, const Ops& ops, BaselineMode baseline) {
    StepRecord rec;
    const Vec bscore = ops.batch_score();
    rec.correction = jac.apply(bscore);

    const int n = ops.traj_count();
    rec.direct.assign(jac.rows, 0.0);
    rec.batch_returns.resize(static_cast<std::size_t>(n));
    double raw_sum = 0.0;
    double adj_sum = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
        const Vec score = ops.traj_score(i);
        const Vec projected = jac.apply(score);
        double adjusted = ops.traj_return(i);
        if (baseline == BaselineMode::SharedInner) adjusted -= ops.baseline_value(i);
        rec.batch_returns[static_cast<std::size_t>(i)] = adjusted;
        axpy(adjusted * inv_n, projected, rec.direct);
        raw_sum += ops.raw_return(i);
        adj_sum += adjusted;
    }
    rec.mean_return = raw_sum * inv_n;
    rec.mean_weight = adj_sum * inv_n;
    require_finite(rec.correction, "correction score");
    require_finite(rec.direct, "direct term");
    tape.steps.push_back(std::move(rec));
}

// Window sum of direct terms plus weighted correction prefixes. The prefix
// starts at zero at the window start; correction weights are lambda
// (uniform), alpha^(k-j) (exponential) or zero (naive).
Vec assemble_meta_gradient(const LifetimeTape& tape, const EstimatorSpec& spec);

// -- black-box estimators ----------------------------------------------------

// One stochastic evaluation of the lifetime objective; draws all randomness
// from the given subtree. Returns NaN for an aborted lifetime.
using StochasticObjective = std::function<double(const Vec& eta, StreamTree eval)>;

struct EsOptions {
    double sigma = 0.1;
    int pairs = 1;
    bool standardize = true;
    int threads = 1;
};

// Antithetic evolution-strategies gradient of the smoothed objective.
Vec es_meta_gradient(const Vec& eta, const StochasticObjective& objective, const EsOptions& opts,
                     StreamTree rng);

struct FdOptions {
    double epsilon = 1e-2;
    int samples = 1;
    bool crn = true;  // common random numbers across the +/- evaluations
    int threads = 1;
};

// Per-coordinate central differences of the Monte-Carlo mean objective.
// Aborted (NaN) evaluations are excluded and counted.
Vec finite_difference_meta_gradient(const Vec& eta, const StochasticObjective& objective,
                                    const FdOptions& opts, StreamTree rng,
                                    long* aborted_count = nullptr);

}  // namespace metagrad
