#include "metagrad/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace metagrad {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        // identity and output
        "experiment_id", "preset", "seed", "out_dir", "emit_csv", "emit_jsonl",
        // estimator spec
        "kind", "lambda", "alpha", "truncation", "hessian_mode", "baseline_mode",
        // black-box estimator knobs
        "es_sigma", "es_pairs", "es_standardize", "fd_epsilon", "fd_samples", "fd_crn",
        // bandit environment
        "arms", "noise_sd", "mean_log_lo", "mean_log_hi", "lifetime", "inner_batch",
        "logit_init_sd", "bucket_starts",
        // gridworld environment
        "maze_size", "horizon", "flip_interval", "inner_lr", "value_coef", "gamma", "outer_batch",
        // meta-parameter mapping
        "mapping", "init_eta", "init_etas", "eta_init_scale", "theta0",
        // outer loop
        "parallel_runs", "outer_updates", "outer_optimizer", "outer_lr", "grad_clip",
        "record_interval", "checkpoint_interval", "smoothing_halflife",
        // measurement
        "center_eta", "point_spacing", "points_per_axis", "samples_per_cell",
        "bootstrap_resamples", "lambda_grid", "truncation_grid", "include_es", "include_dice",
        "es_meas_pairs", "es_meas_standardize", "baseline_modes", "eta_list",
        // heatmap
        "heat_lo", "heat_hi", "heat_cells", "heat_lifetimes",
        // oracle
        "oracle_mode", "bern_probs",
    };
    return keys;
}

std::map<std::string, std::string> preset_defaults(const std::string& name) {
    std::map<std::string, std::string> d{
        {"experiment_id", "run"},     {"seed", "1"},
        {"out_dir", "out"},           {"emit_csv", "true"},
        {"emit_jsonl", "true"},       {"kind", "sampling_corrected"},
        {"lambda", "1"},              {"alpha", "1"},
        {"hessian_mode", "sampled"},  {"baseline_mode", "none"},
        {"es_sigma", "0.1"},          {"es_pairs", "1"},
        {"es_standardize", "true"},   {"fd_epsilon", "0.01"},
        {"fd_samples", "100000"},     {"fd_crn", "true"},
        {"grad_clip", "0"},           {"record_interval", "1"},
        {"checkpoint_interval", "0"}, {"smoothing_halflife", "50"},
        {"bootstrap_resamples", "10000"}, {"points_per_axis", "5"},
        {"es_meas_pairs", "16"},       {"es_meas_standardize", "false"},
        {"include_es", "true"},       {"include_dice", "true"},
        {"baseline_modes", "none"},   {"eta_init_scale", "0.1"},
    };
    if (name == "bandit-e") {
        d.insert({{"arms", "30"},
                  {"noise_sd", "2"},
                  {"mean_log_lo", "-100"},
                  {"mean_log_hi", "1"},
                  {"lifetime", "30"},
                  {"inner_batch", "10"},
                  {"logit_init_sd", "0.01"},
                  {"bucket_starts", "0,8"},
                  {"mapping", "lr_buckets"},
                  {"truncation", "29"},
                  {"parallel_runs", "1000"},
                  {"outer_updates", "100000"},
                  {"outer_optimizer", "sgd"},
                  {"outer_lr", "0.01"},
                  {"init_eta", "1,1"},
                  {"center_eta", "1,1"},
                  {"point_spacing", "0.1"},
                  {"samples_per_cell", "1000"},
                  {"lambda_grid", "0,0.25,0.5,0.75,1"},
                  {"truncation_grid", "1,8,22,29"},
                  {"heat_lo", "0,0"},
                  {"heat_hi", "3,3"},
                  {"heat_cells", "13"},
                  {"heat_lifetimes", "200"}});
    } else if (name == "grid-f") {
        d.insert({{"maze_size", "5"},
                  {"horizon", "16"},
                  {"flip_interval", "6400"},
                  {"inner_lr", "1"},
                  {"value_coef", "0.1"},
                  {"gamma", "0.99"},
                  {"inner_batch", "5"},
                  {"outer_batch", "50"},
                  {"truncation", "16"},
                  {"mapping", "entropy_net"},
                  {"parallel_runs", "50"},
                  {"outer_updates", "1000"},
                  {"outer_optimizer", "adam"},
                  {"outer_lr", "5e-6"},
                  {"init_eta", ""}});
    } else if (name == "grid-advantage-d") {
        d.insert({{"maze_size", "3"},
                  {"horizon", "8"},
                  {"flip_interval", "64"},
                  {"inner_lr", "1"},
                  {"value_coef", "0.1"},
                  {"gamma", "0.99"},
                  {"inner_batch", "10"},
                  {"outer_batch", "25"},
                  {"lifetime", "8"},
                  {"truncation", "7"},
                  {"mapping", "scalar_entropy"},
                  {"parallel_runs", "25"},
                  {"outer_updates", "100"},
                  {"outer_optimizer", "adam"},
                  {"outer_lr", "0.001"},
                  {"init_eta", "0"},
                  {"eta_list", "-2;-1;0;1;2"},
                  {"samples_per_cell", "4000"},
                  {"baseline_modes", "none,shared_inner"},
                  {"lambda_grid", "1"},
                  {"truncation_grid", "7"},
                  {"include_es", "false"},
                  {"include_dice", "false"},
                  {"fd_samples", "10000"}});
    } else if (name == "bernoulli-oracle") {
        d.insert({{"arms", "2"},
                  {"bern_probs", "0.8,0.3"},
                  {"lifetime", "3"},
                  {"inner_batch", "1"},
                  {"bucket_starts", "0"},
                  {"mapping", "lr_buckets"},
                  {"truncation", "2"},
                  {"theta0", "0,0"},
                  {"init_eta", "0.7"},
                  {"oracle_mode", "enumeration"},
                  {"fd_samples", "100000"}});
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return d;
}

}  // namespace

std::map<std::string, std::string> ExperimentConfig::parse_map(const std::string& text) {
    std::map<std::string, std::string> map;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + " is not 'key = value'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + " has no key");
        if (map.count(key)) throw ConfigError("duplicate config key '" + key + "'");
        map[key] = value;
    }
    return map;
}

std::string ExperimentConfig::serialize_map(const std::map<std::string, std::string>& map) {
    std::string out;
    for (const auto& [key, value] : map) {
        out += key;
        out += " = ";
        out += value;
        out += '\n';
    }
    return out;
}

ExperimentConfig ExperimentConfig::load(const std::string& text) {
    const auto user = parse_map(text);
    for (const auto& [key, value] : user) {
        if (key != "preset" && !known_keys().count(key))
            throw ConfigError("unknown config key '" + key + "'");
        (void)value;
    }
    const auto preset_it = user.find("preset");
    const std::string preset = preset_it == user.end() ? "bandit-e" : unquote(preset_it->second);

    ExperimentConfig cfg;
    cfg.resolved_ = preset_defaults(preset);
    cfg.resolved_["preset"] = preset;
    for (const auto& [key, value] : user) {
        if (key == "preset") continue;
        cfg.resolved_[key] = value;
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return load(buf.str());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    if (key != "preset" && !known_keys().count(key))
        throw ConfigError("unknown config key '" + key + "'");
    resolved_[key] = value;
}

bool ExperimentConfig::has(const std::string& key) const {
    const auto it = resolved_.find(key);
    return it != resolved_.end() && !trim(it->second).empty();
}

std::string ExperimentConfig::get_string(const std::string& key) const {
    const auto it = resolved_.find(key);
    if (it == resolved_.end()) throw ConfigError("missing config key '" + key + "'");
    return unquote(trim(it->second));
}

bool ExperimentConfig::get_bool(const std::string& key) const {
    const std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
}

long ExperimentConfig::get_long(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t pos = 0;
        const long out = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer: '" + v + "'");
    }
}

double ExperimentConfig::get_double(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: '" + v + "'");
    }
}

std::vector<double> ExperimentConfig::get_doubles(const std::string& key) const {
    const std::string v = get_string(key);
    std::vector<double> out;
    std::istringstream in(v);
    std::string token;
    while (std::getline(in, token, ',')) {
        token = trim(token);
        if (token.empty()) continue;
        try {
            out.push_back(std::stod(token));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' has a non-numeric entry: '" + token + "'");
        }
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
    return out;
}

std::vector<int> ExperimentConfig::get_ints(const std::string& key) const {
    std::vector<int> out;
    for (double v : get_doubles(key)) {
        const int i = static_cast<int>(v);
        if (static_cast<double>(i) != v)
            throw ConfigError("config key '" + key + "' expects integers");
        out.push_back(i);
    }
    return out;
}

std::vector<Vec> ExperimentConfig::get_vector_list(const std::string& key) const {
    const std::string raw = get_string(key);
    std::vector<Vec> out;
    std::istringstream in(raw);
    std::string group;
    while (std::getline(in, group, ';')) {
        group = trim(group);
        if (group.empty()) continue;
        Vec vec;
        std::istringstream gin(group);
        std::string token;
        while (std::getline(gin, token, ',')) {
            token = trim(token);
            if (token.empty()) continue;
            try {
                vec.push_back(std::stod(token));
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "' has a non-numeric entry: '" + token + "'");
            }
        }
        if (!vec.empty()) out.push_back(std::move(vec));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
    return out;
}

std::uint64_t ExperimentConfig::hash() const {
    // FNV-1a over the canonical serialization; the output directory is
    // operational and does not change what an experiment computes
    auto map = resolved_;
    map.erase("out_dir");
    const std::string text = serialize_map(map);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string ExperimentConfig::hash_hex() const {
    static const char* digits = "0123456789abcdef";
    std::uint64_t h = hash();
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

BanditPreset make_bandit_preset(const ExperimentConfig& cfg) {
    BanditPreset p;
    p.task.arms = static_cast<int>(cfg.get_long("arms"));
    p.task.noise_sd = cfg.get_double("noise_sd");
    if (cfg.has("mean_log_lo")) p.task.mean_log_lo = cfg.get_double("mean_log_lo");
    if (cfg.has("mean_log_hi")) p.task.mean_log_hi = cfg.get_double("mean_log_hi");
    p.lifetime = static_cast<int>(cfg.get_long("lifetime"));
    p.batch_size = static_cast<int>(cfg.get_long("inner_batch"));
    if (cfg.has("logit_init_sd")) p.logit_init_sd = cfg.get_double("logit_init_sd");
    p.bucket_starts = cfg.get_ints("bucket_starts");
    if (p.task.arms < 2) throw ConfigError("arms must be at least 2");
    if (p.lifetime < 2) throw ConfigError("lifetime must be at least 2");
    if (p.batch_size < 1) throw ConfigError("inner_batch must be positive");
    if (p.task.noise_sd < 0.0) throw ConfigError("noise_sd must be non-negative");
    return p;
}

MazePreset make_maze_preset(const ExperimentConfig& cfg) {
    MazePreset p = MazePreset::standard();
    p.learner.env.size = static_cast<int>(cfg.get_long("maze_size"));
    p.learner.env.horizon = static_cast<int>(cfg.get_long("horizon"));
    p.learner.env.flip_interval = cfg.get_long("flip_interval");
    p.learner.inner_lr = cfg.get_double("inner_lr");
    p.learner.value_coef = cfg.get_double("value_coef");
    p.learner.gamma = cfg.get_double("gamma");
    p.lifetime = static_cast<int>(cfg.get_long("lifetime"));
    p.batch_size = static_cast<int>(cfg.get_long("inner_batch"));
    if (p.learner.env.size < 2) throw ConfigError("maze_size must be at least 2");
    if (p.learner.env.horizon < 1) throw ConfigError("horizon must be positive");
    if (p.lifetime < 2) throw ConfigError("lifetime must be at least 2");
    if (p.batch_size < 1) throw ConfigError("inner_batch must be positive");
    if (p.learner.gamma < 0.0 || p.learner.gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
    return p;
}

GridOnlinePreset make_grid_preset(const ExperimentConfig& cfg) {
    GridOnlinePreset p = GridOnlinePreset::standard();
    p.learner.env.size = static_cast<int>(cfg.get_long("maze_size"));
    p.learner.env.horizon = static_cast<int>(cfg.get_long("horizon"));
    p.learner.env.flip_interval = cfg.get_long("flip_interval");
    p.learner.inner_lr = cfg.get_double("inner_lr");
    p.learner.value_coef = cfg.get_double("value_coef");
    p.learner.gamma = cfg.get_double("gamma");
    p.inner_batch = static_cast<int>(cfg.get_long("inner_batch"));
    p.truncation = static_cast<int>(cfg.get_long("truncation"));
    if (p.truncation < 1) throw ConfigError("truncation must be positive");
    if (p.inner_batch < 1) throw ConfigError("inner_batch must be positive");
    return p;
}

EstimatorKind parse_kind(const std::string& name) {
    if (name == "sampling_corrected") return EstimatorKind::SamplingCorrected;
    if (name == "naive") return EstimatorKind::Naive;
    if (name == "dice") return EstimatorKind::DiceStyle;
    if (name == "exp_discounted") return EstimatorKind::ExpDiscounted;
    if (name == "es") return EstimatorKind::EvolutionStrategies;
    if (name == "fd") return EstimatorKind::FiniteDifferences;
    throw ConfigError("unknown estimator kind '" + name + "'");
}

std::string kind_name(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::SamplingCorrected: return "sampling_corrected";
        case EstimatorKind::Naive: return "naive";
        case EstimatorKind::DiceStyle: return "dice";
        case EstimatorKind::ExpDiscounted: return "exp_discounted";
        case EstimatorKind::EvolutionStrategies: return "es";
        case EstimatorKind::FiniteDifferences: return "fd";
    }
    return "unknown";
}

EstimatorSpec make_estimator_spec(const ExperimentConfig& cfg, int lifetime) {
    EstimatorSpec spec;
    spec.kind = parse_kind(cfg.get_string("kind"));
    spec.lambda = cfg.get_double("lambda");
    spec.alpha = cfg.get_double("alpha");
    spec.truncation = static_cast<int>(cfg.get_long("truncation"));
    const std::string hmode = cfg.get_string("hessian_mode");
    if (hmode == "sampled")
        spec.hessian_mode = HessianMode::Sampled;
    else if (hmode == "expected")
        spec.hessian_mode = HessianMode::ExpectedEstimate;
    else
        throw ConfigError("hessian_mode must be 'sampled' or 'expected'");
    const std::string bmode = cfg.get_string("baseline_mode");
    if (bmode == "none")
        spec.baseline_mode = BaselineMode::None;
    else if (bmode == "shared_inner")
        spec.baseline_mode = BaselineMode::SharedInner;
    else
        throw ConfigError("baseline_mode must be 'none' or 'shared_inner'");
    spec.validate(lifetime);
    return spec;
}

MetaParams make_eta_template(const ExperimentConfig& cfg) {
    const std::string mapping = cfg.get_string("mapping");
    MetaParams eta;
    if (mapping == "lr_buckets") {
        eta.mapping = MetaMapping::LearningRateBuckets;
        eta.bucket_starts = cfg.get_ints("bucket_starts");
        eta.values.assign(eta.bucket_starts.size(), 0.0);
    } else if (mapping == "scalar_entropy") {
        eta.mapping = MetaMapping::ScalarEntropyCoef;
        eta.values.assign(1, 0.0);
    } else if (mapping == "entropy_net") {
        eta.mapping = MetaMapping::EntropyScheduleNet;
        eta.values.assign(static_cast<std::size_t>(EntropyNet::param_count()), 0.0);
    } else {
        throw ConfigError("unknown meta-parameter mapping '" + mapping + "'");
    }
    return eta;
}

enumeration::Problem make_enumeration_problem(const ExperimentConfig& cfg) {
    enumeration::Problem prob;
    prob.bandit.probs = cfg.get_doubles("bern_probs");
    for (double p : prob.bandit.probs)
        if (p < 0.0 || p > 1.0) throw ConfigError("bern_probs entries must lie in [0, 1]");
    if (prob.bandit.arms() < 2 || prob.bandit.arms() > 3)
        throw ConfigError("the enumerable bandit supports 2 or 3 arms");
    prob.lifetime = static_cast<int>(cfg.get_long("lifetime"));
    prob.batch_size = static_cast<int>(cfg.get_long("inner_batch"));
    if (prob.lifetime < 2) throw ConfigError("lifetime must be at least 2");
    if (prob.batch_size < 1) throw ConfigError("inner_batch must be positive");
    prob.theta0 = cfg.get_doubles("theta0");
    if (static_cast<int>(prob.theta0.size()) != prob.bandit.arms())
        throw ConfigError("theta0 dimension must match the arm count");
    prob.eta = make_eta_template(cfg);
    prob.eta.values = cfg.get_doubles("init_eta");
    prob.eta.validate(prob.lifetime);
    // keep the outcome tree walkable
    const double outcomes = std::pow(2.0 * prob.bandit.arms(),
                                     static_cast<double>(prob.lifetime) * prob.batch_size);
    if (outcomes > 5e7) throw ConfigError("enumeration outcome space too large");
    return prob;
}

}  // namespace metagrad
