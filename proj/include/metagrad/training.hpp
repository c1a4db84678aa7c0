#pragma once

#include <functional>
#include <string>

#include "metagrad/estimator.hpp"
#include "metagrad/lifetimes.hpp"

#include "json.hpp"

namespace metagrad {

// Ascent optimizer for the meta-parameters.
struct OuterOptimizer {
    enum class Kind { Sgd, Adam };

    Kind kind = Kind::Sgd;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Vec m;
    Vec v;
    long t = 0;  // completed steps; Adam bias correction uses t+1

    void step(Vec& eta, const Vec& grad);

    nlohmann::json to_json() const;
    static OuterOptimizer from_json(const nlohmann::json& j);
};

struct CurvePoint {
    long update = 0;
    double mean_return = 0.0;     // raw batch-mean reward
    double smoothed_return = 0.0; // EMA over updates (gridworld curves)
    double entropy_coef = 0.0;    // gridworld only
    Vec eta;
    long aborted = 0;             // aborted lifetimes in this update
};

struct TrainHooks {
    std::function<void(const CurvePoint&)> on_point;
    std::function<void(long update, const nlohmann::json& state)> on_checkpoint;
};

struct TrainOptions {
    EstimatorSpec spec;
    int parallel_runs = 1000;
    long outer_updates = 1000;
    OuterOptimizer::Kind optimizer = OuterOptimizer::Kind::Sgd;
    double outer_lr = 0.01;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
    EsOptions es;
    FdOptions fd;            // FiniteDifferences runs; samples defaults to parallel_runs
    int threads = 1;
    long record_interval = 1;
    long checkpoint_interval = 0;
    double abort_fraction = 0.10;  // RunAborted when exceeded within one update
    double smoothing_halflife = 50.0;
    long start_update = 0;         // resume support
    nlohmann::json resume_state;   // empty when starting fresh
};

struct TrainResult {
    std::vector<CurvePoint> curve;
    Vec final_eta;
    OuterOptimizer optimizer;
    long total_aborted = 0;
    long env_samples = 0;  // reward samples consumed by inner loops
};

// Episodic bandit meta-training: fresh lifetimes each update, truncation
// windows drawn per lifetime.
TrainResult run_bandit_meta(const BanditPreset& preset, const MetaParams& eta0,
                            const TrainOptions& opts, StreamTree tree, const TrainHooks& hooks = {});

// Online gridworld meta-training: inner learners persist across updates and
// windows advance sequentially.
TrainResult run_grid_meta(const GridOnlinePreset& preset, int outer_batch, const MetaParams& eta0,
                          const TrainOptions& opts, StreamTree tree, const TrainHooks& hooks = {});

}  // namespace metagrad
