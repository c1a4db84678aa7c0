#include "metagrad/estimator.hpp"

#include <algorithm>

#include "metagrad/parallel.hpp"

namespace metagrad {

void EstimatorSpec::validate(int lifetime) const {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must lie in [0, 1]");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
    if (truncation < 1) throw ConfigError("truncation length must be at least 1");
    if (lifetime > 0 && truncation > lifetime - 1)
        throw ConfigError("truncation length must leave a valid window (at most lifetime - 1 updates)");
}

Vec assemble_meta_gradient(const LifetimeTape& tape, const EstimatorSpec& spec) {
    if (tape.steps.empty()) throw WindowOutOfRange("empty tape window");
    if (tape.window_start < 0 || tape.lifetime < 0 ||
        tape.window_start + static_cast<int>(tape.steps.size()) > tape.lifetime)
        throw WindowOutOfRange("tape window exceeds lifetime bounds");

    double decay = 1.0;
    double weight = 0.0;
    switch (spec.kind) {
        case EstimatorKind::SamplingCorrected:
        case EstimatorKind::DiceStyle:
            decay = 1.0;
            weight = spec.lambda;
            break;
        case EstimatorKind::ExpDiscounted:
            decay = spec.alpha;
            weight = spec.alpha;
            break;
        case EstimatorKind::Naive:
            decay = 1.0;
            weight = 0.0;
            break;
        default:
            throw ConfigError("estimator kind has no tape assembly");
    }

    const std::size_t dim = tape.steps.front().correction.size();
    Vec out(dim, 0.0);
    Vec prefix(dim, 0.0);
    for (const StepRecord& step : tape.steps) {
        if (weight != 0.0) {
            const double scale = weight * step.mean_weight;
            for (std::size_t i = 0; i < dim; ++i) out[i] += scale * prefix[i];
        }
        for (std::size_t i = 0; i < dim; ++i) out[i] += step.direct[i];
        for (std::size_t i = 0; i < dim; ++i) prefix[i] = decay * prefix[i] + step.correction[i];
    }
    return out;
}

Vec es_meta_gradient(const Vec& eta, const StochasticObjective& objective, const EsOptions& opts,
                     StreamTree rng) {
    if (opts.sigma <= 0.0) throw ConfigError("es sigma must be positive");
    if (opts.pairs < 1) throw ConfigError("es pairs must be at least 1");

    const std::size_t dim = eta.size();
    const std::size_t pairs = static_cast<std::size_t>(opts.pairs);
    std::vector<Vec> noise(pairs);
    Vec f_plus(pairs), f_minus(pairs);

    parallel_for(pairs, opts.threads, [&](std::size_t i) {
        const StreamTree pair_tree = rng.child(i);
        RngStream eps_stream = pair_tree.stream(0);
        Vec eps(dim);
        for (double& e : eps) e = eps_stream.normal();
        Vec up = eta, down = eta;
        axpy(opts.sigma, eps, up);
        axpy(-opts.sigma, eps, down);
        f_plus[i] = objective(up, pair_tree.child(1));
        f_minus[i] = objective(down, pair_tree.child(2));
        noise[i] = std::move(eps);
    });

    for (std::size_t i = 0; i < pairs; ++i) {
        if (!std::isfinite(f_plus[i]) || !std::isfinite(f_minus[i]))
            throw NonFiniteError("es objective evaluation returned a non-finite value");
    }

    if (opts.standardize) {
        double mean = 0.0;
        for (std::size_t i = 0; i < pairs; ++i) mean += f_plus[i] + f_minus[i];
        mean /= static_cast<double>(2 * pairs);
        double var = 0.0;
        for (std::size_t i = 0; i < pairs; ++i) {
            var += (f_plus[i] - mean) * (f_plus[i] - mean);
            var += (f_minus[i] - mean) * (f_minus[i] - mean);
        }
        var /= static_cast<double>(2 * pairs);
        const double sd = std::sqrt(var);
        if (sd == 0.0) return Vec(dim, 0.0);
        for (std::size_t i = 0; i < pairs; ++i) {
            f_plus[i] = (f_plus[i] - mean) / sd;
            f_minus[i] = (f_minus[i] - mean) / sd;
        }
    }

    Vec grad(dim, 0.0);
    const double scale = 1.0 / (2.0 * static_cast<double>(pairs) * opts.sigma);
    for (std::size_t i = 0; i < pairs; ++i) {
        axpy(scale * (f_plus[i] - f_minus[i]), noise[i], grad);
    }
    return grad;
}

Vec finite_difference_meta_gradient(const Vec& eta, const StochasticObjective& objective,
                                    const FdOptions& opts, StreamTree rng, long* aborted_count) {
    if (opts.epsilon <= 0.0) throw ConfigError("fd epsilon must be positive");
    if (opts.samples < 1) throw ConfigError("fd samples must be at least 1");

    const std::size_t dim = eta.size();
    const std::size_t samples = static_cast<std::size_t>(opts.samples);
    Vec grad(dim, 0.0);
    long aborted = 0;

    Vec values(samples);
    for (std::size_t r = 0; r < dim; ++r) {
        double side_mean[2] = {0.0, 0.0};
        for (int side = 0; side < 2; ++side) {
            const double shift = side == 0 ? opts.epsilon : -opts.epsilon;
            Vec point = eta;
            point[r] += shift;
            parallel_for(samples, opts.threads, [&](std::size_t s) {
                // CRN: the evaluation subtree depends only on the sample
                // index, so the +/- evaluations replay the same streams.
                const StreamTree eval =
                    opts.crn ? rng.child(s) : rng.child({r, static_cast<std::uint64_t>(side), s});
                values[s] = objective(point, eval);
            });
            double sum = 0.0;
            std::size_t kept = 0;
            for (double v : values) {
                if (std::isfinite(v)) {
                    sum += v;
                    ++kept;
                } else {
                    ++aborted;
                }
            }
            if (kept == 0) throw NonFiniteError("all finite-difference evaluations aborted");
            side_mean[side] = sum / static_cast<double>(kept);
        }
        grad[r] = (side_mean[0] - side_mean[1]) / (2.0 * opts.epsilon);
    }
    if (aborted_count) *aborted_count += aborted;
    return grad;
}

}  // namespace metagrad
