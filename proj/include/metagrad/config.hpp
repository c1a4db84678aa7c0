#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metagrad/enumeration.hpp"
#include "metagrad/estimator.hpp"
#include "metagrad/lifetimes.hpp"
#include "metagrad/measurement.hpp"

namespace metagrad {

// Flat `key = value` configuration with named-preset inheritance. Values are
// kept as trimmed strings; typed getters parse on demand and name the
// offending key on failure. Unknown keys are rejected up front.
class ExperimentConfig {
  public:
    // parses raw text, overlays it onto the preset defaults, validates keys
    static ExperimentConfig load(const std::string& text);
    static ExperimentConfig load_file(const std::string& path);

    // raw map helpers (pre-resolution round-trip surface)
    static std::map<std::string, std::string> parse_map(const std::string& text);
    static std::string serialize_map(const std::map<std::string, std::string>& map);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    long get_long(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;  // comma separated
    std::vector<int> get_ints(const std::string& key) const;
    std::vector<Vec> get_vector_list(const std::string& key) const;  // ';' separated vectors

    std::string serialize() const { return serialize_map(resolved_); }
    std::uint64_t hash() const;
    std::string hash_hex() const;

    std::string preset() const { return get_string("preset"); }
    std::uint64_t seed() const { return static_cast<std::uint64_t>(get_long("seed")); }

  private:
    std::map<std::string, std::string> resolved_;
};

// Domain-object builders; each validates the invariants of what it builds.
BanditPreset make_bandit_preset(const ExperimentConfig& cfg);
MazePreset make_maze_preset(const ExperimentConfig& cfg);
GridOnlinePreset make_grid_preset(const ExperimentConfig& cfg);
EstimatorSpec make_estimator_spec(const ExperimentConfig& cfg, int lifetime);
MetaParams make_eta_template(const ExperimentConfig& cfg);
enumeration::Problem make_enumeration_problem(const ExperimentConfig& cfg);

EstimatorKind parse_kind(const std::string& name);
std::string kind_name(EstimatorKind kind);

}  // namespace metagrad
