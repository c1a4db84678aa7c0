#pragma once

#include <functional>
#include <optional>

#include "metagrad/estimator.hpp"
#include "metagrad/lifetimes.hpp"

namespace metagrad {

enum class BiasMetric { Euclidean, NegCosine };

struct EvaluationPoint {
    Vec eta;
    Vec true_gradient;
    Vec estimator_mean;
    double total_variance = 0.0;
    long samples = 0;
    long aborted = 0;
};

struct BiasEstimate {
    double mean = 0.0;         // average metric over points
    double bootstrap_sd = 0.0; // sd over bootstrap resamples of the point set
    int excluded = 0;          // degenerate-cosine points dropped
};

// mean over `resamples` bootstrap means of `values`, and their sd
struct BootstrapStats {
    double mean = 0.0;
    double sd = 0.0;
};
BootstrapStats bootstrap_mean_sd(const std::vector<double>& values, int resamples, RngStream rng);

BiasEstimate estimate_bias(const std::vector<EvaluationPoint>& points, BiasMetric metric,
                           int resamples, RngStream rng);

// total variance = trace of the (unbiased) sample covariance
double estimate_variance(const std::vector<Vec>& samples);

// One estimator draw; nullopt marks an aborted lifetime.
using VectorSampler = std::function<std::optional<Vec>(StreamTree)>;

struct SampleStats {
    Vec mean;
    double total_variance = 0.0;
    long count = 0;
    long aborted = 0;
};

// n independent draws, deterministic reduction in index order
SampleStats collect_samples(long n, int threads, const VectorSampler& sampler, StreamTree tree);

// same, additionally returning the kept samples
SampleStats collect_samples(long n, int threads, const VectorSampler& sampler, StreamTree tree,
                            std::vector<Vec>* kept);

struct BiasVarianceRecord {
    EstimatorSpec spec;
    double bias_mean = 0.0;
    double bias_bootstrap_sd = 0.0;
    double neg_cosine_bias = 0.0;
    double neg_cosine_bootstrap_sd = 0.0;
    double total_variance = 0.0;  // mean over evaluation points
    long aborted_lifetimes = 0;
};

struct SweepConfig {
    BanditPreset preset;
    MetaParams eta_template;           // mapping + bucket structure; values overwritten per point
    std::vector<Vec> points;           // evaluation etas
    std::vector<EstimatorSpec> cells;  // every (kind, lambda, truncation) combination
    long samples_per_cell = 1000;
    int bootstrap_resamples = 10000;
    FdOptions truth_fd;                // ground-truth budget at each point
    EsOptions es;                      // used by EvolutionStrategies cells
    int threads = 1;
};

// 5x5 (or d-dimensional line/grid) of points centered on `center`
std::vector<Vec> grid_points(const Vec& center, double spacing, int per_axis);

// FD ground truth at each point over the full-lifetime objective
std::vector<Vec> bandit_true_gradients(const BanditPreset& preset, const MetaParams& eta_template,
                                       const std::vector<Vec>& points, const FdOptions& fd,
                                       StreamTree tree);

// Draws one backprop estimator sample: one lifetime, one window.
std::optional<Vec> bandit_estimator_sample(const BanditPreset& preset, const MetaParams& eta,
                                           const EstimatorSpec& spec, StreamTree tree);

std::vector<BiasVarianceRecord> sweep_frontier(const SweepConfig& cfg, StreamTree tree);

// Mean lifetime return over an eta grid (two meta-parameters).
struct HeatmapSpec {
    Vec lo{0.0, 0.0};
    Vec hi{3.0, 3.0};
    int cells_per_axis = 13;
    long lifetimes_per_cell = 200;
};

struct HeatmapResult {
    std::vector<Vec> etas;      // cell centers, row-major
    Vec mean_returns;
    std::vector<long> aborted;
};

HeatmapResult heatmap_returns(const BanditPreset& preset, const MetaParams& eta_template,
                              const HeatmapSpec& spec, int threads, StreamTree tree);

}  // namespace metagrad
