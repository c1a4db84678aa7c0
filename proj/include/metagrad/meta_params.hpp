#pragma once

#include <span>
#include <vector>

#include "metagrad/common.hpp"

namespace metagrad {

enum class MetaMapping {
    LearningRateBuckets,  // one learning rate per contiguous range of inner steps
    ScalarEntropyCoef,    // single value, squashed through a sigmoid
    EntropyScheduleNet,   // small network mapping recent rewards to a coefficient
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One hidden layer of rectified units, sigmoid scalar output. Input is the
// vector of mean rewards over the previous `kInputDim` inner batches.
// Parameter packing: W1 (hidden x input, row-major), b1, w2, b2.
struct EntropyNet {
    static constexpr int kInputDim = 10;
    static constexpr int kHiddenDim = 32;

    static constexpr int param_count() {
        return kInputDim * kHiddenDim + kHiddenDim + kHiddenDim + 1;
    }

    static double coefficient(std::span<const double> p, std::span<const double> x);

    // d coefficient / d params; ReLU derivative at exactly zero is taken as zero.
    static Vec coefficient_grad(std::span<const double> p, std::span<const double> x);
};

// Meta-parameter vector plus the semantics tying it to the inner update rule.
struct MetaParams {
    Vec values;
    MetaMapping mapping = MetaMapping::LearningRateBuckets;
    std::vector<int> bucket_starts;  // strictly increasing step indices; LearningRateBuckets only

    int dim() const { return static_cast<int>(values.size()); }

    // throws ConfigError on malformed shapes
    void validate(int lifetime) const;

    // LearningRateBuckets: index of the bucket containing `step`; throws
    // BucketMismatch when the step precedes every bucket.
    int bucket_for_step(int step) const;

    double learning_rate(int step) const { return values[static_cast<std::size_t>(bucket_for_step(step))]; }

    // ScalarEntropyCoef / EntropyScheduleNet: coefficient in (0, 1) plus its
    // gradient with respect to the meta-parameters. `reward_history` is the
    // (most-recent-last) mean-reward window fed to the schedule net.
    double entropy_coef(std::span<const double> reward_history) const;
    Vec entropy_coef_grad(std::span<const double> reward_history) const;
};

MetaParams make_lr_bucket_params(Vec rates, std::vector<int> starts);
MetaParams make_scalar_entropy_params(double value);
MetaParams make_entropy_net_params(Vec packed);

}  // namespace metagrad
