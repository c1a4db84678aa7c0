#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "metagrad/config.hpp"
#include "metagrad/output.hpp"

using namespace metagrad;

TEST_CASE("parse and serialize round-trip is the identity") {
    const std::string text =
        "# comment line\n"
        "lifetime = 30\n"
        "kind = \"sampling_corrected\"\n"
        "lambda = 0.5\n"
        "\n"
        "bucket_starts = 0,8\n";
    const auto map = ExperimentConfig::parse_map(text);
    const std::string canonical = ExperimentConfig::serialize_map(map);
    CHECK(ExperimentConfig::parse_map(canonical) == map);
    // serialization is itself a fixed point
    CHECK(ExperimentConfig::serialize_map(ExperimentConfig::parse_map(canonical)) == canonical);
}

TEST_CASE("unknown keys are rejected") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::load("lifteime = 30\n"),
                         doctest::Contains("unknown config key 'lifteime'"), ConfigError);
}

TEST_CASE("malformed lines and duplicates are rejected") {
    CHECK_THROWS_AS(ExperimentConfig::load("lifetime 30\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load("lifetime = 30\nlifetime = 40\n"), ConfigError);
}

TEST_CASE("preset defaults apply and overrides win") {
    const ExperimentConfig cfg = ExperimentConfig::load("preset = bandit-e\nlifetime = 80\n");
    CHECK(cfg.get_long("lifetime") == 80);
    CHECK(cfg.get_long("arms") == 30);
    CHECK(cfg.get_double("noise_sd") == 2.0);
    CHECK(cfg.get_string("kind") == "sampling_corrected");
}

TEST_CASE("typed getters name the failing key") {
    const ExperimentConfig cfg = ExperimentConfig::load("preset = bandit-e\nlambda = banana\n");
    CHECK_THROWS_WITH_AS(cfg.get_double("lambda"), doctest::Contains("lambda"), ConfigError);
    CHECK_THROWS_WITH_AS(cfg.get_string("eta_list"), doctest::Contains("eta_list"), ConfigError);
}

TEST_CASE("vector-of-vector parsing") {
    const ExperimentConfig cfg =
        ExperimentConfig::load("preset = bandit-e\ninit_etas = 0.5,1 ; 2,2.5 ; 3,0.25\n");
    const auto list = cfg.get_vector_list("init_etas");
    REQUIRE(list.size() == 3);
    CHECK(list[1][0] == 2.0);
    CHECK(list[2][1] == 0.25);
}

TEST_CASE("estimator spec validation catches bad values") {
    CHECK_THROWS_AS(
        make_estimator_spec(ExperimentConfig::load("preset = bandit-e\nlambda = 1.5\n"), 30),
        ConfigError);
    CHECK_THROWS_AS(
        make_estimator_spec(ExperimentConfig::load("preset = bandit-e\ntruncation = 30\n"), 30),
        ConfigError);
    CHECK_NOTHROW(
        make_estimator_spec(ExperimentConfig::load("preset = bandit-e\ntruncation = 29\n"), 30));
}

TEST_CASE("enumeration problem validation") {
    CHECK_THROWS_AS(make_enumeration_problem(ExperimentConfig::load(
                        "preset = bernoulli-oracle\nbern_probs = 0.5,1.2\n")),
                    ConfigError);
    CHECK_THROWS_AS(make_enumeration_problem(ExperimentConfig::load(
                        "preset = bernoulli-oracle\nlifetime = 30\n")),
                    ConfigError);
    CHECK_NOTHROW(make_enumeration_problem(ExperimentConfig::load("preset = bernoulli-oracle\n")));
}

TEST_CASE("config hash tracks content") {
    const ExperimentConfig a = ExperimentConfig::load("preset = bandit-e\nseed = 5\n");
    const ExperimentConfig b = ExperimentConfig::load("preset = bandit-e\nseed = 5\n");
    const ExperimentConfig c = ExperimentConfig::load("preset = bandit-e\nseed = 6\n");
    CHECK(a.hash_hex() == b.hash_hex());
    CHECK(a.hash_hex() != c.hash_hex());
    CHECK(a.hash_hex().size() == 16);
}

TEST_CASE("floating values serialize with 17 significant digits") {
    CHECK(format_value(1.0 / 3.0) == "0.33333333333333331");
    CHECK(format_value(1.0) == "1");
    const double x = 0.1234567890123456789;
    CHECK(std::stod(format_value(x)) == x);  // round-trip exact
}

TEST_CASE("result writer emits self-describing append-only files") {
    const std::string dir = "test_output_tmp";
    std::filesystem::remove_all(dir);
    {
        ResultWriter writer(dir, "sample", true, true, "deadbeef01234567", 42);
        writer.write({"sample", 0, "mean_return", 0.5, 42, 0});
        writer.flush();

        // header and first row are already on disk; later writes only append
        std::ifstream csv(dir + "/sample.csv");
        std::string line;
        std::getline(csv, line);
        CHECK(line == "# schema=1 config=deadbeef01234567 seed=42");
        std::getline(csv, line);
        CHECK(line == "experiment_id,index,metric,value,seed,aborted");
        std::getline(csv, line);
        CHECK(line == "sample,0,mean_return,0.5,42,0");

        writer.write({"sample", 1, "mean_return", -1.25, 42, 2});
        writer.flush();
        std::ifstream csv2(dir + "/sample.csv");
        std::ostringstream all;
        all << csv2.rdbuf();
        CHECK(all.str() ==
              "# schema=1 config=deadbeef01234567 seed=42\n"
              "experiment_id,index,metric,value,seed,aborted\n"
              "sample,0,mean_return,0.5,42,0\n"
              "sample,1,mean_return,-1.25,42,2\n");

        std::ifstream jsonl(dir + "/sample.jsonl");
        std::getline(jsonl, line);
        CHECK(line == "{\"schema\":1,\"config\":\"deadbeef01234567\",\"seed\":42}");
        std::getline(jsonl, line);
        CHECK(line ==
              "{\"experiment_id\":\"sample\",\"index\":0,\"metric\":\"mean_return\","
              "\"value\":0.5,\"seed\":42,\"aborted\":0}");
    }
    std::filesystem::remove_all(dir);
}
