#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "metagrad/rng.hpp"

using namespace metagrad;

TEST_CASE("identical seeds replay identical streams") {
    RngStream a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.bits() == b.bits());
}

TEST_CASE("stream tree children are distinct and order-free") {
    const StreamTree root{7};
    RngStream a = root.child(0).stream();
    RngStream b = root.child(1).stream();
    CHECK(a.bits() != b.bits());

    // path derivation commutes with incremental child calls
    const StreamTree nested = root.child(3).child(9);
    const StreamTree path = root.child({3, 9});
    CHECK(nested.seed == path.seed);
}

TEST_CASE("uniform stays in range") {
    RngStream rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("uniform_int covers [0, n) without obvious bias") {
    RngStream rng(3);
    const std::uint64_t n = 7;
    std::vector<long> counts(n, 0);
    const long draws = 140000;
    for (long i = 0; i < draws; ++i) ++counts[rng.uniform_int(n)];
    // chi-square, 6 dof, alpha = 0.001 critical value 22.46
    double chi2 = 0.0;
    const double expected = static_cast<double>(draws) / n;
    for (long c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 22.46);
}

TEST_CASE("normal moments") {
    RngStream rng(11);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(sd == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("categorical follows the probability vector") {
    RngStream rng(5);
    const std::vector<double> probs{0.5, 0.3, 0.2};
    std::vector<long> counts(3, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(rng.categorical(probs))];
    for (std::size_t a = 0; a < probs.size(); ++a) {
        const double frac = static_cast<double>(counts[a]) / n;
        const double se = std::sqrt(probs[a] * (1 - probs[a]) / n);
        CHECK(std::abs(frac - probs[a]) < 4.0 * se);
    }
}
