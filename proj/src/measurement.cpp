#include "metagrad/measurement.hpp"

#include <algorithm>
#include <limits>

#include "metagrad/parallel.hpp"

namespace metagrad {

BootstrapStats bootstrap_mean_sd(const std::vector<double>& values, int resamples, RngStream rng) {
    const std::size_t n = values.size();
    BootstrapStats out;
    if (n == 0 || resamples < 1) return out;
    Vec means(static_cast<std::size_t>(resamples));
    for (int b = 0; b < resamples; ++b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += values[rng.uniform_int(n)];
        means[static_cast<std::size_t>(b)] = sum / static_cast<double>(n);
    }
    double mean = 0.0;
    for (double m : means) mean += m;
    mean /= static_cast<double>(resamples);
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean);
    out.mean = mean;
    out.sd = resamples > 1 ? std::sqrt(var / static_cast<double>(resamples)) : 0.0;
    return out;
}

BiasEstimate estimate_bias(const std::vector<EvaluationPoint>& points, BiasMetric metric,
                           int resamples, RngStream rng) {
    if (points.size() < 1) throw ConfigError("bias estimation needs at least one evaluation point");

    std::vector<double> per_point;
    per_point.reserve(points.size());
    int excluded = 0;
    for (const EvaluationPoint& p : points) {
        if (metric == BiasMetric::Euclidean) {
            Vec diff = p.estimator_mean;
            axpy(-1.0, p.true_gradient, diff);
            per_point.push_back(norm2(diff));
        } else {
            const double nm = norm2(p.estimator_mean);
            const double nt = norm2(p.true_gradient);
            if (nm < 1e-12 || nt < 1e-12) {
                ++excluded;  // degenerate cosine; point dropped, counted
                continue;
            }
            per_point.push_back(-dot(p.estimator_mean, p.true_gradient) / (nm * nt));
        }
    }
    BiasEstimate out;
    out.excluded = excluded;
    if (per_point.empty()) return out;
    double sum = 0.0;
    for (double v : per_point) sum += v;
    out.mean = sum / static_cast<double>(per_point.size());
    if (per_point.size() > 1) out.bootstrap_sd = bootstrap_mean_sd(per_point, resamples, rng).sd;
    return out;
}

double estimate_variance(const std::vector<Vec>& samples) {
    const std::size_t n = samples.size();
    if (n < 2) return 0.0;
    const std::size_t d = samples.front().size();
    // Welford per coordinate; exact zero for constant inputs
    Vec mean(d, 0.0);
    Vec m2(d, 0.0);
    double count = 0.0;
    for (const Vec& s : samples) {
        count += 1.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double delta = s[i] - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (s[i] - mean[i]);
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) total += m2[i];
    return total / static_cast<double>(n - 1);
}

SampleStats collect_samples(long n, int threads, const VectorSampler& sampler, StreamTree tree,
                            std::vector<Vec>* kept) {
    std::vector<std::optional<Vec>> results(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
        results[i] = sampler(tree.child(i));
    });

    SampleStats stats;
    std::vector<Vec> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (auto& r : results) {
        if (r.has_value()) {
            samples.push_back(std::move(*r));
        } else {
            ++stats.aborted;
        }
    }
    stats.count = static_cast<long>(samples.size());
    if (!samples.empty()) {
        stats.mean.assign(samples.front().size(), 0.0);
        for (const Vec& s : samples) axpy(1.0 / static_cast<double>(samples.size()), s, stats.mean);
        stats.total_variance = estimate_variance(samples);
    }
    if (kept) *kept = std::move(samples);
    return stats;
}

SampleStats collect_samples(long n, int threads, const VectorSampler& sampler, StreamTree tree) {
    return collect_samples(n, threads, sampler, tree, nullptr);
}

std::vector<Vec> grid_points(const Vec& center, double spacing, int per_axis) {
    if (center.empty()) throw ConfigError("grid center must be non-empty");
    if (per_axis < 1) throw ConfigError("points per axis must be positive");
    const double mid = (per_axis - 1) / 2.0;
    std::vector<Vec> points;
    if (center.size() == 1) {
        for (int i = 0; i < per_axis; ++i) points.push_back(Vec{center[0] + (i - mid) * spacing});
        return points;
    }
    // grid over the first two coordinates, remaining ones fixed
    for (int i = 0; i < per_axis; ++i) {
        for (int j = 0; j < per_axis; ++j) {
            Vec p = center;
            p[0] += (i - mid) * spacing;
            p[1] += (j - mid) * spacing;
            points.push_back(std::move(p));
        }
    }
    return points;
}

namespace {

MetaParams with_values(const MetaParams& eta_template, const Vec& values) {
    MetaParams eta = eta_template;
    eta.values = values;
    return eta;
}

}  // namespace

std::vector<Vec> bandit_true_gradients(const BanditPreset& preset, const MetaParams& eta_template,
                                       const std::vector<Vec>& points, const FdOptions& fd,
                                       StreamTree tree) {
    std::vector<Vec> grads(points.size());
    for (std::size_t p = 0; p < points.size(); ++p) {
        const StochasticObjective objective = [&](const Vec& eta_values, StreamTree eval) {
            return bandit_lifetime_objective(preset, with_values(eta_template, eta_values), eval);
        };
        grads[p] = finite_difference_meta_gradient(points[p], objective, fd, tree.child(p));
    }
    return grads;
}

std::optional<Vec> bandit_estimator_sample(const BanditPreset& preset, const MetaParams& eta,
                                           const EstimatorSpec& spec, StreamTree tree) {
    const BanditLifetimeResult life =
        run_bandit_lifetime(preset, eta, spec.effective_hessian_mode(), spec.truncation, tree);
    if (life.aborted) return std::nullopt;
    return assemble_meta_gradient(life.tape, spec);
}

std::vector<BiasVarianceRecord> sweep_frontier(const SweepConfig& cfg, StreamTree tree) {
    if (cfg.points.empty()) throw ConfigError("frontier sweep needs at least one evaluation point");
    if (cfg.cells.empty()) throw ConfigError("frontier sweep needs a non-empty estimator grid");

    const std::vector<Vec> truth =
        bandit_true_gradients(cfg.preset, cfg.eta_template, cfg.points, cfg.truth_fd, tree.child(0));

    std::vector<BiasVarianceRecord> records;
    records.reserve(cfg.cells.size());
    for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
        const EstimatorSpec& spec = cfg.cells[c];
        const StreamTree cell_tree = tree.child({1, c});

        BiasVarianceRecord rec;
        rec.spec = spec;
        std::vector<EvaluationPoint> points(cfg.points.size());
        double variance_sum = 0.0;
        for (std::size_t p = 0; p < cfg.points.size(); ++p) {
            const MetaParams eta = with_values(cfg.eta_template, cfg.points[p]);
            VectorSampler sampler;
            if (spec.kind == EstimatorKind::EvolutionStrategies) {
                const int window = spec.truncation < cfg.preset.max_truncation() ? spec.truncation : -1;
                sampler = [&, window](StreamTree sample_tree) -> std::optional<Vec> {
                    const StochasticObjective objective = [&, window](const Vec& values,
                                                                      StreamTree eval) {
                        return bandit_lifetime_objective(cfg.preset,
                                                         with_values(cfg.eta_template, values), eval,
                                                         window);
                    };
                    try {
                        return es_meta_gradient(eta.values, objective, cfg.es, sample_tree);
                    } catch (const NonFiniteError&) {
                        return std::nullopt;
                    }
                };
            } else {
                sampler = [&](StreamTree sample_tree) {
                    return bandit_estimator_sample(cfg.preset, eta, spec, sample_tree);
                };
            }
            const SampleStats stats =
                collect_samples(cfg.samples_per_cell, cfg.threads, sampler, cell_tree.child(p));
            points[p].eta = cfg.points[p];
            points[p].true_gradient = truth[p];
            points[p].estimator_mean = stats.mean;
            points[p].total_variance = stats.total_variance;
            points[p].samples = stats.count;
            points[p].aborted = stats.aborted;
            rec.aborted_lifetimes += stats.aborted;
            variance_sum += stats.total_variance;
        }
        const BiasEstimate euclid = estimate_bias(points, BiasMetric::Euclidean,
                                                  cfg.bootstrap_resamples, cell_tree.stream(100));
        const BiasEstimate cosine = estimate_bias(points, BiasMetric::NegCosine,
                                                  cfg.bootstrap_resamples, cell_tree.stream(101));
        rec.bias_mean = euclid.mean;
        rec.bias_bootstrap_sd = euclid.bootstrap_sd;
        rec.neg_cosine_bias = cosine.mean;
        rec.neg_cosine_bootstrap_sd = cosine.bootstrap_sd;
        rec.total_variance = variance_sum / static_cast<double>(cfg.points.size());
        records.push_back(std::move(rec));
    }
    return records;
}

HeatmapResult heatmap_returns(const BanditPreset& preset, const MetaParams& eta_template,
                              const HeatmapSpec& spec, int threads, StreamTree tree) {
    if (spec.lo.size() != 2 || spec.hi.size() != 2)
        throw ConfigError("heatmap expects two meta-parameter axes");
    HeatmapResult out;
    const int n = spec.cells_per_axis;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            // cell centers
            const double x = spec.lo[0] + (spec.hi[0] - spec.lo[0]) * (i + 0.5) / n;
            const double y = spec.lo[1] + (spec.hi[1] - spec.lo[1]) * (j + 0.5) / n;
            out.etas.push_back(Vec{x, y});
        }
    }
    out.mean_returns.assign(out.etas.size(), 0.0);
    out.aborted.assign(out.etas.size(), 0);
    for (std::size_t cell = 0; cell < out.etas.size(); ++cell) {
        const MetaParams eta = with_values(eta_template, out.etas[cell]);
        Vec values(static_cast<std::size_t>(spec.lifetimes_per_cell));
        parallel_for(values.size(), threads, [&](std::size_t i) {
            values[i] = bandit_lifetime_return(preset, eta, tree.child({cell, i}));
        });
        double sum = 0.0;
        long kept = 0;
        for (double v : values) {
            if (std::isfinite(v)) {
                sum += v;
                ++kept;
            } else {
                ++out.aborted[cell];
            }
        }
        out.mean_returns[cell] =
            kept > 0 ? sum / static_cast<double>(kept) : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

}  // namespace metagrad
