#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>

#include "metagrad/training.hpp"
#include "numeric_oracles.hpp"

using namespace metagrad;

namespace {

BanditPreset tiny_bandit() {
    BanditPreset preset;
    preset.lifetime = 10;
    preset.batch_size = 3;
    preset.task.arms = 5;
    preset.bucket_starts = {0, 3};
    return preset;
}

TrainOptions tiny_options(EstimatorKind kind, int truncation) {
    TrainOptions opts;
    opts.spec.kind = kind;
    opts.spec.lambda = 1.0;
    opts.spec.truncation = truncation;
    opts.parallel_runs = 40;
    opts.outer_updates = 15;
    opts.optimizer = OuterOptimizer::Kind::Sgd;
    opts.outer_lr = 0.05;
    opts.record_interval = 1;
    return opts;
}

bool same_bits(const Vec& a, const Vec& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * 8) == 0;
}

}  // namespace

TEST_CASE("sgd leaves eta unchanged on a zero gradient") {
    OuterOptimizer opt;
    opt.kind = OuterOptimizer::Kind::Sgd;
    opt.lr = 0.3;
    Vec eta{1.0, -2.0};
    opt.step(eta, {0.0, 0.0});
    CHECK(eta[0] == 1.0);
    CHECK(eta[1] == -2.0);
}

TEST_CASE("first adam step is the sign-scaled gradient") {
    OuterOptimizer opt;
    opt.kind = OuterOptimizer::Kind::Adam;
    opt.lr = 0.1;
    Vec eta{0.5, -0.5, 2.0};
    const Vec g{0.8, -0.03, 0.0001};
    Vec expect = eta;
    for (std::size_t i = 0; i < eta.size(); ++i)
        expect[i] += 0.1 * g[i] / (std::sqrt(g[i] * g[i]) + 1e-8);
    opt.step(eta, g);
    for (std::size_t i = 0; i < eta.size(); ++i)
        CHECK(eta[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("sgd contracts a quadratic objective geometrically") {
    OuterOptimizer opt;
    opt.kind = OuterOptimizer::Kind::Sgd;
    opt.lr = 0.1;
    Vec eta{1.0, -0.5};
    for (int i = 0; i < 100; ++i) {
        Vec g = eta;
        scale(g, -1.0);  // ascent on -|eta|^2/2
        opt.step(eta, g);
    }
    const double expect = std::pow(0.9, 100);
    CHECK(eta[0] == doctest::Approx(expect).epsilon(1e-10));
    CHECK(eta[1] == doctest::Approx(-0.5 * expect).epsilon(1e-10));
}

TEST_CASE("zero outer learning rate freezes the meta-parameters") {
    const BanditPreset preset = tiny_bandit();
    TrainOptions opts = tiny_options(EstimatorKind::SamplingCorrected, 4);
    opts.outer_lr = 0.0;
    opts.outer_updates = 5;
    const MetaParams eta0 = make_lr_bucket_params({0.5, 0.25}, {0, 3});
    const TrainResult result = run_bandit_meta(preset, eta0, opts, StreamTree{11});
    for (const CurvePoint& p : result.curve) {
        CHECK(p.eta[0] == 0.5);
        CHECK(p.eta[1] == 0.25);
    }
}

TEST_CASE("window starts are uniform over the valid positions") {
    const BanditPreset preset = tiny_bandit();  // lifetime 10
    const int truncation = 4;                   // starts 0..5
    const MetaParams eta = make_lr_bucket_params({0.4, 0.2}, {0, 3});
    const int n = 60000;
    std::vector<long> counts(static_cast<std::size_t>(preset.lifetime - truncation), 0);
    const StreamTree root{13};
    for (int i = 0; i < n; ++i) {
        const BanditLifetimeResult life = run_bandit_lifetime(
            preset, eta, HessianMode::Sampled, truncation, root.child(static_cast<std::uint64_t>(i)));
        ++counts[static_cast<std::size_t>(life.tape.window_start)];
    }
    const double expected = static_cast<double>(n) / static_cast<double>(counts.size());
    double chi2 = 0.0;
    for (long c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 5 dof, alpha = 0.01 critical value 15.09
    INFO("chi2 = ", chi2);
    CHECK(chi2 < 15.09);
}

TEST_CASE("sample accounting matches batch x lifetime x runs") {
    const BanditPreset preset = tiny_bandit();
    TrainOptions opts = tiny_options(EstimatorKind::SamplingCorrected, preset.max_truncation());
    opts.outer_updates = 7;
    const MetaParams eta0 = make_lr_bucket_params({0.4, 0.2}, {0, 3});
    const TrainResult result = run_bandit_meta(preset, eta0, opts, StreamTree{17});
    CHECK(result.env_samples ==
          7L * opts.parallel_runs * preset.lifetime * preset.batch_size);
}

TEST_CASE("curves are bit-identical across thread counts") {
    const BanditPreset preset = tiny_bandit();
    const MetaParams eta0 = make_lr_bucket_params({0.5, 0.3}, {0, 3});

    for (EstimatorKind kind : {EstimatorKind::SamplingCorrected, EstimatorKind::FiniteDifferences,
                               EstimatorKind::EvolutionStrategies}) {
        TrainOptions opts = tiny_options(kind, 4);
        opts.outer_updates = 6;
        opts.fd.samples = 30;
        opts.threads = 1;
        const TrainResult one = run_bandit_meta(preset, eta0, opts, StreamTree{19});
        opts.threads = 4;
        const TrainResult four = run_bandit_meta(preset, eta0, opts, StreamTree{19});

        REQUIRE(one.curve.size() == four.curve.size());
        CHECK(same_bits(one.final_eta, four.final_eta));
        for (std::size_t i = 0; i < one.curve.size(); ++i) {
            CHECK(one.curve[i].mean_return == four.curve[i].mean_return);
            CHECK(same_bits(one.curve[i].eta, four.curve[i].eta));
        }
    }
}

TEST_CASE("resuming from a checkpoint continues bit-identically") {
    const BanditPreset preset = tiny_bandit();
    const MetaParams eta0 = make_lr_bucket_params({0.5, 0.3}, {0, 3});
    TrainOptions opts = tiny_options(EstimatorKind::SamplingCorrected, 4);
    opts.optimizer = OuterOptimizer::Kind::Adam;
    opts.outer_lr = 0.01;
    opts.outer_updates = 12;

    const TrainResult full = run_bandit_meta(preset, eta0, opts, StreamTree{23});

    nlohmann::json checkpoint;
    TrainOptions first = opts;
    first.outer_updates = 6;
    first.checkpoint_interval = 6;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](long, const nlohmann::json& state) { checkpoint = state; };
    run_bandit_meta(preset, eta0, first, StreamTree{23}, hooks);
    REQUIRE_FALSE(checkpoint.empty());

    TrainOptions second = opts;
    second.start_update = checkpoint.at("update").get<long>();
    second.resume_state = checkpoint;
    const TrainResult resumed = run_bandit_meta(preset, eta0, second, StreamTree{23});
    CHECK(same_bits(full.final_eta, resumed.final_eta));
}

TEST_CASE("sustained divergence aborts the run") {
    BanditPreset preset = tiny_bandit();
    // non-finite rewards poison every lifetime in the first update
    preset.task.noise_sd = std::numeric_limits<double>::infinity();
    TrainOptions opts = tiny_options(EstimatorKind::SamplingCorrected, 4);
    const MetaParams eta0 = make_lr_bucket_params({0.5, 0.25}, {0, 3});
    CHECK_THROWS_AS(run_bandit_meta(preset, eta0, opts, StreamTree{29}), RunAborted);
}

TEST_CASE("online grid training smoke and determinism") {
    GridOnlinePreset preset = GridOnlinePreset::standard();
    preset.truncation = 3;
    preset.inner_batch = 2;
    preset.learner.env.flip_interval = 160;

    TrainOptions opts;
    opts.spec.kind = EstimatorKind::SamplingCorrected;
    opts.spec.lambda = 1.0;
    opts.spec.truncation = preset.truncation;
    opts.outer_updates = 4;
    opts.optimizer = OuterOptimizer::Kind::Adam;
    opts.outer_lr = 0.001;
    opts.record_interval = 1;

    const MetaParams eta0 = make_scalar_entropy_params(0.2);
    opts.threads = 1;
    const TrainResult one = run_grid_meta(preset, 6, eta0, opts, StreamTree{31});
    opts.threads = 3;
    const TrainResult three = run_grid_meta(preset, 6, eta0, opts, StreamTree{31});

    CHECK(same_bits(one.final_eta, three.final_eta));
    for (const CurvePoint& p : one.curve) {
        CHECK(p.entropy_coef > 0.0);
        CHECK(p.entropy_coef < 1.0);
        CHECK(std::isfinite(p.smoothed_return));
    }

    // es variant trains without error and stays deterministic
    TrainOptions es = opts;
    es.spec.kind = EstimatorKind::EvolutionStrategies;
    es.es.sigma = 0.1;
    es.threads = 1;
    const TrainResult es_one = run_grid_meta(preset, 6, eta0, es, StreamTree{37});
    es.threads = 3;
    const TrainResult es_three = run_grid_meta(preset, 6, eta0, es, StreamTree{37});
    CHECK(same_bits(es_one.final_eta, es_three.final_eta));
}

TEST_CASE("grid training resumes bit-identically") {
    GridOnlinePreset preset = GridOnlinePreset::standard();
    preset.truncation = 2;
    preset.inner_batch = 2;

    TrainOptions opts;
    opts.spec.kind = EstimatorKind::SamplingCorrected;
    opts.spec.lambda = 1.0;
    opts.spec.truncation = preset.truncation;
    opts.outer_updates = 6;
    opts.optimizer = OuterOptimizer::Kind::Adam;
    opts.outer_lr = 0.001;

    const MetaParams eta0 = make_scalar_entropy_params(0.0);
    const TrainResult full = run_grid_meta(preset, 4, eta0, opts, StreamTree{41});

    nlohmann::json checkpoint;
    TrainOptions first = opts;
    first.outer_updates = 3;
    first.checkpoint_interval = 3;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](long, const nlohmann::json& state) { checkpoint = state; };
    run_grid_meta(preset, 4, eta0, first, StreamTree{41}, hooks);
    REQUIRE_FALSE(checkpoint.empty());

    TrainOptions second = opts;
    second.start_update = 3;
    second.resume_state = checkpoint;
    const TrainResult resumed = run_grid_meta(preset, 4, eta0, second, StreamTree{41});
    CHECK(same_bits(full.final_eta, resumed.final_eta));
}
