#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "metagrad/config.hpp"
#include "metagrad/enumeration.hpp"
#include "metagrad/measurement.hpp"
#include "metagrad/output.hpp"
#include "metagrad/training.hpp"

namespace mg = metagrad;

namespace {

struct CliOptions {
    std::string config_path;
    std::optional<long> seed;
    int threads = 1;
    std::optional<std::string> out_dir;
    std::string resume_path;
};

mg::ExperimentConfig load_config(const CliOptions& cli) {
    mg::ExperimentConfig cfg = mg::ExperimentConfig::load_file(cli.config_path);
    if (cli.seed) cfg.set("seed", std::to_string(*cli.seed));
    if (cli.out_dir) cfg.set("out_dir", *cli.out_dir);
    return cfg;
}

double kind_code(mg::EstimatorKind kind) { return static_cast<double>(static_cast<int>(kind)); }

mg::TrainOptions train_options(const mg::ExperimentConfig& cfg, int lifetime, int threads) {
    mg::TrainOptions opts;
    opts.spec = mg::make_estimator_spec(cfg, lifetime);
    opts.parallel_runs = static_cast<int>(cfg.get_long("parallel_runs"));
    opts.outer_updates = cfg.get_long("outer_updates");
    const std::string optimizer = cfg.get_string("outer_optimizer");
    if (optimizer == "sgd")
        opts.optimizer = mg::OuterOptimizer::Kind::Sgd;
    else if (optimizer == "adam")
        opts.optimizer = mg::OuterOptimizer::Kind::Adam;
    else
        throw mg::ConfigError("outer_optimizer must be 'sgd' or 'adam'");
    opts.outer_lr = cfg.get_double("outer_lr");
    opts.grad_clip = cfg.get_double("grad_clip");
    opts.es.sigma = cfg.get_double("es_sigma");
    opts.es.pairs = static_cast<int>(cfg.get_long("es_pairs"));
    opts.es.standardize = cfg.get_bool("es_standardize");
    opts.fd.epsilon = cfg.get_double("fd_epsilon");
    opts.fd.samples = static_cast<int>(cfg.get_long("fd_samples"));
    opts.fd.crn = cfg.get_bool("fd_crn");
    opts.threads = threads;
    opts.record_interval = cfg.get_long("record_interval");
    opts.checkpoint_interval = cfg.get_long("checkpoint_interval");
    opts.smoothing_halflife = cfg.get_double("smoothing_halflife");
    if (opts.parallel_runs < 1) throw mg::ConfigError("parallel_runs must be positive");
    if (opts.outer_updates < 1) throw mg::ConfigError("outer_updates must be positive");
    if (opts.fd.samples < 1) throw mg::ConfigError("fd_samples must be positive");
    if (opts.fd.epsilon <= 0) throw mg::ConfigError("fd_epsilon must be positive");
    if (opts.es.sigma <= 0) throw mg::ConfigError("es_sigma must be positive");
    return opts;
}

void apply_resume(mg::TrainOptions& opts, const std::string& resume_path,
                  const mg::ExperimentConfig& cfg) {
    if (resume_path.empty()) return;
    std::ifstream in(resume_path);
    if (!in) throw mg::ConfigError("cannot open checkpoint '" + resume_path + "'");
    nlohmann::json state = nlohmann::json::parse(in);
    if (state.at("config").get<std::string>() != cfg.hash_hex())
        throw mg::ConfigError("checkpoint was produced by a different configuration");
    opts.start_update = state.at("update").get<long>();
    opts.resume_state = std::move(state);
}

mg::TrainHooks make_train_hooks(mg::ResultWriter& writer, const std::string& experiment_id,
                                std::uint64_t seed, bool grid_mode, const std::string& out_dir,
                                const std::string& stem, const std::string& config_hash) {
    mg::TrainHooks hooks;
    hooks.on_point = [&writer, experiment_id, seed, grid_mode](const mg::CurvePoint& p) {
        writer.write({experiment_id, p.update, "mean_return", p.mean_return, seed, p.aborted});
        if (grid_mode) {
            writer.write({experiment_id, p.update, "smoothed_return", p.smoothed_return, seed,
                          p.aborted});
            writer.write({experiment_id, p.update, "entropy_coef", p.entropy_coef, seed, p.aborted});
            writer.write({experiment_id, p.update, "eta_norm", mg::norm2(p.eta), seed, p.aborted});
        } else {
            for (std::size_t i = 0; i < p.eta.size(); ++i)
                writer.write({experiment_id, p.update, "eta_" + std::to_string(i), p.eta[i], seed,
                              p.aborted});
        }
    };
    hooks.on_checkpoint = [out_dir, stem, config_hash](long update, const nlohmann::json& state) {
        nlohmann::json with_hash = state;
        with_hash["config"] = config_hash;
        const std::string path = out_dir + "/" + stem + "_ckpt" + std::to_string(update) + ".json";
        std::ofstream out(path);
        out << with_hash.dump() << "\n";
    };
    return hooks;
}

int cmd_train(const CliOptions& cli) {
    const mg::ExperimentConfig cfg = load_config(cli);
    const std::string preset_name = cfg.preset();
    const std::string id = cfg.get_string("experiment_id");
    const std::string out_dir = cfg.get_string("out_dir");
    const std::uint64_t seed = cfg.seed();
    const mg::StreamTree root{seed};

    if (preset_name == "bandit-e" || preset_name == "bernoulli-oracle") {
        if (preset_name != "bandit-e") throw mg::ConfigError("train expects preset bandit-e or grid-f");
        const mg::BanditPreset preset = mg::make_bandit_preset(cfg);
        mg::TrainOptions opts = train_options(cfg, preset.lifetime, cli.threads);
        std::vector<mg::Vec> inits;
        if (cfg.has("init_etas"))
            inits = cfg.get_vector_list("init_etas");
        else
            inits.push_back(cfg.get_doubles("init_eta"));
        if (inits.size() > 1 && !cli.resume_path.empty())
            throw mg::ConfigError("resume supports a single initialization");

        for (std::size_t i = 0; i < inits.size(); ++i) {
            const std::string stem = inits.size() == 1 ? id : id + "_init" + std::to_string(i);
            mg::MetaParams eta = mg::make_eta_template(cfg);
            eta.values = inits[i];
            mg::ResultWriter writer(out_dir, stem, cfg.get_bool("emit_csv"),
                                    cfg.get_bool("emit_jsonl"), cfg.hash_hex(), seed);
            mg::TrainOptions run_opts = opts;
            apply_resume(run_opts, cli.resume_path, cfg);
            const mg::TrainHooks hooks =
                make_train_hooks(writer, stem, seed, false, out_dir, stem, cfg.hash_hex());
            const mg::TrainResult result =
                mg::run_bandit_meta(preset, eta, run_opts, root.child(i), hooks);
            writer.flush();
            std::cout << stem << ": " << result.curve.size() << " curve points, final eta =";
            for (double v : result.final_eta) std::cout << ' ' << mg::format_value(v);
            std::cout << ", aborted lifetimes = " << result.total_aborted << "\n";
        }
        return 0;
    }

    if (preset_name == "grid-f") {
        const mg::GridOnlinePreset preset = mg::make_grid_preset(cfg);
        mg::TrainOptions opts = train_options(cfg, preset.truncation + 1, cli.threads);
        opts.spec.truncation = preset.truncation;
        const int outer_batch = static_cast<int>(cfg.get_long("outer_batch"));

        mg::MetaParams eta = mg::make_eta_template(cfg);
        if (cfg.has("init_eta")) {
            eta.values = cfg.get_doubles("init_eta");
            if (eta.mapping == mg::MetaMapping::EntropyScheduleNet &&
                eta.values.size() != static_cast<std::size_t>(mg::EntropyNet::param_count()))
                throw mg::ConfigError("init_eta dimension must match the schedule net");
        } else if (eta.mapping == mg::MetaMapping::EntropyScheduleNet) {
            // random weights, zero biases
            mg::RngStream init = root.child(0xE7A).stream();
            const double s = cfg.get_double("eta_init_scale");
            const int in_dim = mg::EntropyNet::kInputDim;
            const int hid = mg::EntropyNet::kHiddenDim;
            for (int j = 0; j < in_dim * hid; ++j)
                eta.values[static_cast<std::size_t>(j)] = s * init.normal();
            for (int j = 0; j < hid; ++j)
                eta.values[static_cast<std::size_t>(in_dim * hid + hid + j)] = s * init.normal();
        }

        mg::ResultWriter writer(out_dir, id, cfg.get_bool("emit_csv"), cfg.get_bool("emit_jsonl"),
                                cfg.hash_hex(), seed);
        mg::TrainOptions run_opts = opts;
        apply_resume(run_opts, cli.resume_path, cfg);
        const mg::TrainHooks hooks =
            make_train_hooks(writer, id, seed, true, out_dir, id, cfg.hash_hex());
        const mg::TrainResult result =
            mg::run_grid_meta(preset, outer_batch, eta, run_opts, root.child(1), hooks);
        writer.flush();
        std::cout << id << ": " << result.curve.size() << " curve points, final |eta| = "
                  << mg::format_value(mg::norm2(result.final_eta))
                  << ", aborted windows = " << result.total_aborted << "\n";
        return 0;
    }

    throw mg::ConfigError("train expects preset bandit-e or grid-f");
}

int cmd_bias_variance(const CliOptions& cli) {
    const mg::ExperimentConfig cfg = load_config(cli);
    const std::string id = cfg.get_string("experiment_id");
    const std::uint64_t seed = cfg.seed();
    const mg::StreamTree root{seed};
    mg::ResultWriter writer(cfg.get_string("out_dir"), id, cfg.get_bool("emit_csv"),
                            cfg.get_bool("emit_jsonl"), cfg.hash_hex(), seed);

    if (cfg.preset() == "grid-advantage-d") {
        // baseline study on the small maze: per eta point, with and without
        // the shared inner value baseline
        const mg::MazePreset preset = mg::make_maze_preset(cfg);
        const std::vector<mg::Vec> points = cfg.get_vector_list("eta_list");
        const long samples = cfg.get_long("samples_per_cell");
        const int resamples = static_cast<int>(cfg.get_long("bootstrap_resamples"));
        mg::FdOptions fd;
        fd.epsilon = cfg.get_double("fd_epsilon");
        fd.samples = static_cast<int>(cfg.get_long("fd_samples"));
        fd.crn = cfg.get_bool("fd_crn");
        fd.threads = cli.threads;
        if (fd.samples < 1) throw mg::ConfigError("fd_samples must be positive");

        std::vector<mg::BaselineMode> modes;
        for (const std::string& name : {std::string("none"), std::string("shared_inner")}) {
            if (cfg.get_string("baseline_modes").find(name) != std::string::npos)
                modes.push_back(name == "none" ? mg::BaselineMode::None
                                               : mg::BaselineMode::SharedInner);
        }
        if (modes.empty()) throw mg::ConfigError("baseline_modes must name at least one mode");

        mg::EstimatorSpec spec;
        spec.kind = mg::EstimatorKind::SamplingCorrected;
        spec.lambda = 1.0;
        spec.truncation = preset.lifetime - 1;

        long index = 0;
        for (std::size_t p = 0; p < points.size(); ++p) {
            mg::MetaParams eta = mg::make_eta_template(cfg);
            eta.values = points[p];
            const mg::StochasticObjective objective = [&](const mg::Vec& values,
                                                          mg::StreamTree eval) {
                mg::MetaParams point = eta;
                point.values = values;
                return mg::maze_lifetime_objective(preset, point, eval);
            };
            const mg::Vec truth = mg::finite_difference_meta_gradient(
                eta.values, objective, fd, root.child({0, p}));

            for (const mg::BaselineMode mode : modes) {
                spec.baseline_mode = mode;
                std::vector<mg::Vec> kept;
                const mg::SampleStats stats = mg::collect_samples(
                    samples, cli.threads,
                    [&](mg::StreamTree tree) -> std::optional<mg::Vec> {
                        const mg::MazeLifetimeResult life = mg::run_maze_lifetime(
                            preset, eta, spec.effective_hessian_mode(), mode, tree);
                        if (life.aborted) return std::nullopt;
                        return mg::assemble_meta_gradient(life.tape, spec);
                    },
                    root.child({1, p, static_cast<std::uint64_t>(mode)}), &kept);

                std::vector<double> firsts(kept.size());
                for (std::size_t i = 0; i < kept.size(); ++i) firsts[i] = kept[i][0];
                const mg::BootstrapStats boot = mg::bootstrap_mean_sd(
                    firsts, resamples, root.child({2, p, static_cast<std::uint64_t>(mode)}).stream());

                writer.write({id, index, "baseline_code", static_cast<double>(mode ==
                              mg::BaselineMode::SharedInner), seed, stats.aborted});
                writer.write({id, index, "eta", points[p][0], seed, stats.aborted});
                writer.write({id, index, "true_gradient", truth[0], seed, stats.aborted});
                writer.write({id, index, "estimator_mean", stats.mean.empty() ? 0.0 : stats.mean[0],
                              seed, stats.aborted});
                writer.write({id, index, "mean_bootstrap_sd", boot.sd, seed, stats.aborted});
                writer.write({id, index, "total_variance", stats.total_variance, seed, stats.aborted});
                writer.write({id, index, "samples", static_cast<double>(stats.count), seed,
                              stats.aborted});
                ++index;
            }
        }
        writer.flush();
        std::cout << id << ": " << index << " cells written\n";
        return 0;
    }

    // bandit frontier sweep
    const mg::BanditPreset preset = mg::make_bandit_preset(cfg);
    mg::SweepConfig sweep;
    sweep.preset = preset;
    sweep.eta_template = mg::make_eta_template(cfg);
    sweep.points = mg::grid_points(cfg.get_doubles("center_eta"), cfg.get_double("point_spacing"),
                                   static_cast<int>(cfg.get_long("points_per_axis")));
    sweep.samples_per_cell = cfg.get_long("samples_per_cell");
    sweep.bootstrap_resamples = static_cast<int>(cfg.get_long("bootstrap_resamples"));
    sweep.truth_fd.epsilon = cfg.get_double("fd_epsilon");
    sweep.truth_fd.samples = static_cast<int>(cfg.get_long("fd_samples"));
    sweep.truth_fd.crn = cfg.get_bool("fd_crn");
    sweep.truth_fd.threads = cli.threads;
    sweep.es.sigma = cfg.get_double("es_sigma");
    sweep.es.pairs = static_cast<int>(cfg.get_long("es_meas_pairs"));
    sweep.es.standardize = cfg.get_bool("es_meas_standardize");
    sweep.threads = cli.threads;
    if (sweep.truth_fd.samples < 1) throw mg::ConfigError("fd_samples must be positive");
    if (sweep.samples_per_cell < 2) throw mg::ConfigError("samples_per_cell must be at least 2");

    const std::vector<double> lambdas = cfg.get_doubles("lambda_grid");
    const std::vector<int> truncations = cfg.get_ints("truncation_grid");
    for (double lambda : lambdas) {
        for (int trunc : truncations) {
            mg::EstimatorSpec spec;
            spec.kind = mg::EstimatorKind::SamplingCorrected;
            spec.lambda = lambda;
            spec.truncation = trunc;
            spec.validate(preset.lifetime);
            sweep.cells.push_back(spec);
        }
    }
    if (cfg.get_bool("include_dice")) {
        mg::EstimatorSpec spec;
        spec.kind = mg::EstimatorKind::DiceStyle;
        spec.lambda = 1.0;
        spec.truncation = preset.max_truncation();
        sweep.cells.push_back(spec);
    }
    if (cfg.get_bool("include_es")) {
        for (int trunc : truncations) {
            mg::EstimatorSpec spec;
            spec.kind = mg::EstimatorKind::EvolutionStrategies;
            spec.truncation = trunc;
            spec.validate(preset.lifetime);
            sweep.cells.push_back(spec);
        }
    }

    const std::vector<mg::BiasVarianceRecord> records = mg::sweep_frontier(sweep, root.child(1));
    for (std::size_t c = 0; c < records.size(); ++c) {
        const mg::BiasVarianceRecord& rec = records[c];
        const long index = static_cast<long>(c);
        writer.write({id, index, "kind", kind_code(rec.spec.kind), seed, rec.aborted_lifetimes});
        writer.write({id, index, "lambda", rec.spec.lambda, seed, rec.aborted_lifetimes});
        writer.write({id, index, "truncation", static_cast<double>(rec.spec.truncation), seed,
                      rec.aborted_lifetimes});
        writer.write({id, index, "bias_mean", rec.bias_mean, seed, rec.aborted_lifetimes});
        writer.write({id, index, "bias_bootstrap_sd", rec.bias_bootstrap_sd, seed,
                      rec.aborted_lifetimes});
        writer.write({id, index, "neg_cosine_bias", rec.neg_cosine_bias, seed,
                      rec.aborted_lifetimes});
        writer.write({id, index, "neg_cosine_sd", rec.neg_cosine_bootstrap_sd, seed,
                      rec.aborted_lifetimes});
        writer.write({id, index, "total_variance", rec.total_variance, seed, rec.aborted_lifetimes});
    }
    writer.flush();
    std::cout << id << ": " << records.size() << " frontier cells written\n";
    return 0;
}

int cmd_oracle(const CliOptions& cli) {
    const mg::ExperimentConfig cfg = load_config(cli);
    const std::string id = cfg.get_string("experiment_id");
    const std::uint64_t seed = cfg.seed();
    mg::ResultWriter writer(cfg.get_string("out_dir"), id, cfg.get_bool("emit_csv"),
                            cfg.get_bool("emit_jsonl"), cfg.hash_hex(), seed);

    const std::string mode = cfg.get_string("oracle_mode");
    if (mode == "enumeration") {
        const mg::enumeration::Problem prob = mg::make_enumeration_problem(cfg);
        const mg::enumeration::ExactResult result = mg::enumeration::exact_meta_gradient(prob);
        writer.write({id, 0, "objective", result.objective, seed, 0});
        for (std::size_t i = 0; i < result.gradient.size(); ++i)
            writer.write({id, 0, "grad_" + std::to_string(i), result.gradient[i], seed, 0});
        writer.write({id, 0, "outcome_count", static_cast<double>(result.outcome_count), seed, 0});
        writer.flush();
        std::cout << "exact gradient over " << result.outcome_count << " outcomes:";
        for (double g : result.gradient) std::cout << ' ' << mg::format_value(g);
        std::cout << "\nobjective = " << mg::format_value(result.objective) << "\n";
        return 0;
    }
    if (mode == "fd") {
        mg::FdOptions fd;
        fd.epsilon = cfg.get_double("fd_epsilon");
        fd.samples = static_cast<int>(cfg.get_long("fd_samples"));
        fd.crn = cfg.get_bool("fd_crn");
        fd.threads = cli.threads;
        if (fd.samples < 1) throw mg::ConfigError("fd_samples must be positive");
        const mg::StreamTree root{seed};
        mg::Vec grad;
        long aborted = 0;
        const mg::Vec eta_values = cfg.get_doubles("init_eta");
        if (cfg.preset() == "bernoulli-oracle") {
            mg::enumeration::Problem prob = mg::make_enumeration_problem(cfg);
            grad = mg::enumeration::exact_objective_fd_gradient(prob, fd.epsilon, 3);
        } else if (cfg.preset() == "grid-advantage-d") {
            const mg::MazePreset preset = mg::make_maze_preset(cfg);
            mg::MetaParams eta = mg::make_eta_template(cfg);
            grad = mg::finite_difference_meta_gradient(
                eta_values,
                [&](const mg::Vec& values, mg::StreamTree eval) {
                    mg::MetaParams point = eta;
                    point.values = values;
                    return mg::maze_lifetime_objective(preset, point, eval);
                },
                fd, root.child(3), &aborted);
        } else {
            const mg::BanditPreset preset = mg::make_bandit_preset(cfg);
            mg::MetaParams eta = mg::make_eta_template(cfg);
            grad = mg::finite_difference_meta_gradient(
                eta_values,
                [&](const mg::Vec& values, mg::StreamTree eval) {
                    mg::MetaParams point = eta;
                    point.values = values;
                    return mg::bandit_lifetime_objective(preset, point, eval);
                },
                fd, root.child(3), &aborted);
        }
        for (std::size_t i = 0; i < grad.size(); ++i)
            writer.write({id, 0, "grad_" + std::to_string(i), grad[i], seed, aborted});
        writer.flush();
        std::cout << "fd gradient:";
        for (double g : grad) std::cout << ' ' << mg::format_value(g);
        std::cout << "\n";
        return 0;
    }
    throw mg::ConfigError("oracle_mode must be 'enumeration' or 'fd'");
}

int cmd_heatmap(const CliOptions& cli) {
    const mg::ExperimentConfig cfg = load_config(cli);
    const std::string id = cfg.get_string("experiment_id");
    const std::uint64_t seed = cfg.seed();
    const mg::BanditPreset preset = mg::make_bandit_preset(cfg);
    mg::HeatmapSpec spec;
    spec.lo = cfg.get_doubles("heat_lo");
    spec.hi = cfg.get_doubles("heat_hi");
    spec.cells_per_axis = static_cast<int>(cfg.get_long("heat_cells"));
    spec.lifetimes_per_cell = cfg.get_long("heat_lifetimes");
    if (spec.cells_per_axis < 1) throw mg::ConfigError("heat_cells must be positive");
    if (spec.lifetimes_per_cell < 1) throw mg::ConfigError("heat_lifetimes must be positive");

    const mg::HeatmapResult result = mg::heatmap_returns(preset, mg::make_eta_template(cfg), spec,
                                                         cli.threads, mg::StreamTree{seed}.child(4));
    mg::ResultWriter writer(cfg.get_string("out_dir"), id, cfg.get_bool("emit_csv"),
                            cfg.get_bool("emit_jsonl"), cfg.hash_hex(), seed);
    for (std::size_t cell = 0; cell < result.etas.size(); ++cell) {
        const long index = static_cast<long>(cell);
        writer.write({id, index, "eta_0", result.etas[cell][0], seed, result.aborted[cell]});
        writer.write({id, index, "eta_1", result.etas[cell][1], seed, result.aborted[cell]});
        writer.write({id, index, "mean_return", result.mean_returns[cell], seed,
                      result.aborted[cell]});
    }
    writer.flush();
    std::cout << id << ": " << result.etas.size() << " heatmap cells written\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"meta-gradient estimation workbench"};
    app.require_subcommand(1);

    CliOptions cli;
    long seed_flag = -1;

    auto add_common = [&](CLI::App* sub, bool with_resume) {
        sub->add_option("--config", cli.config_path, "experiment configuration file")->required();
        sub->add_option("--seed", seed_flag, "master seed override");
        sub->add_option("--threads", cli.threads, "worker thread count");
        sub->add_option("--out", cli.out_dir, "output directory override");
        if (with_resume) sub->add_option("--resume", cli.resume_path, "checkpoint file to resume");
    };

    CLI::App* train = app.add_subcommand("train", "meta-train and emit learning curves");
    CLI::App* bias = app.add_subcommand("bias-variance", "estimator bias/variance sweep");
    CLI::App* oracle = app.add_subcommand("oracle", "ground-truth meta-gradient");
    CLI::App* heatmap = app.add_subcommand("heatmap", "mean-return landscape over meta-parameters");
    add_common(train, true);
    add_common(bias, false);
    add_common(oracle, false);
    add_common(heatmap, false);

    CLI11_PARSE(app, argc, argv);
    if (seed_flag >= 0) cli.seed = seed_flag;

    try {
        if (train->parsed()) return cmd_train(cli);
        if (bias->parsed()) return cmd_bias_variance(cli);
        if (oracle->parsed()) return cmd_oracle(cli);
        if (heatmap->parsed()) return cmd_heatmap(cli);
    } catch (const mg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const mg::RunAborted& e) {
        std::cerr << "run aborted: " << e.what() << "\n";
        return 3;
    } catch (const mg::NonFiniteError& e) {
        std::cerr << "non-finite abort: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
