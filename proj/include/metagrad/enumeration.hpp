#pragma once

#include "metagrad/environments.hpp"
#include "metagrad/estimator.hpp"
#include "metagrad/learners.hpp"
#include "metagrad/meta_params.hpp"

// Exact computations on the enumerable Bernoulli bandit. Lifetimes are short
// enough that the full outcome tree (arms x {0,1} rewards per pull) can be
// walked, giving machine-precision expectations for unbiasedness checks.

namespace metagrad::enumeration {

struct Problem {
    EnumerableBandit bandit;
    MetaParams eta;
    Vec theta0;
    int lifetime = 3;    // number of batches; lifetime - 1 inner updates
    int batch_size = 1;
};

struct ExactResult {
    double objective = 0.0;   // sum over steps of expected one-pull reward
    Vec gradient;             // d objective / d eta, exact
    long outcome_count = 0;   // leaves of the outcome tree
};

// Exact lifetime objective J(eta) = sum_k E[expected reward under theta_k]
// by outcome-tree walk.
double exact_objective(const Problem& prob);

// Exact meta-gradient of the objective, differentiating the finite sum
// directly (probability weights via log-derivatives, reward terms via the
// chain rule through the deterministic update sequence).
ExactResult exact_meta_gradient(const Problem& prob);

// Richardson-extrapolated central differences of the exact objective; a
// derivative-free cross-check of exact_meta_gradient.
Vec exact_objective_fd_gradient(const Problem& prob, double epsilon, int levels);

// Exact expectation of a tape-assembled estimator over all outcome
// sequences of the full lifetime. The estimator pipeline is the production
// one; only the data is supplied by enumeration.
Vec expected_estimator(const Problem& prob, const EstimatorSpec& spec);

// Same expectation with a constant baseline subtracted from every return in
// the estimator terms (control-variate identity checks).
Vec expected_estimator_with_baseline(const Problem& prob, const EstimatorSpec& spec,
                                     double constant_baseline);

}  // namespace metagrad::enumeration
