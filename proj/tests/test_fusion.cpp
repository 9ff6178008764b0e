#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "ava/folds.hpp"
#include "ava/metrics.hpp"

namespace {

std::vector<double> sine_signal(std::size_t n) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = 0.6 * std::sin(0.05 * double(i));
    return s;
}

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
    double e = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) e += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(e / double(a.size()));
}

}  // namespace

TEST_CASE("ccc_center worked example") {
    ava::RaterSet raters{{0, 1, 2}, {1, 2, 3}};
    auto merged = ava::ccc_center(raters);
    REQUIRE(merged.size() == 3);
    REQUIRE(merged[0] == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(merged[1] == Catch::Approx(1.5).margin(1e-12));
    REQUIRE(merged[2] == Catch::Approx(2.5).margin(1e-12));
}

TEST_CASE("ccc_center output carries the grand mean") {
    std::mt19937_64 rng(81);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    ava::RaterSet raters(4, std::vector<double>(50));
    double grand = 0.0;
    for (auto& r : raters)
        for (double& v : r) {
            v = dist(rng);
            grand += v;
        }
    grand /= 200.0;
    auto merged = ava::ccc_center(raters);
    double m = 0.0;
    for (double v : merged) m += v / 50.0;
    REQUIRE(m == Catch::Approx(grand).margin(1e-10));
}

TEST_CASE("fusion merges are invariant to rater order") {
    std::mt19937_64 rng(82);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    ava::RaterSet raters(3, std::vector<double>(40));
    for (auto& r : raters)
        for (double& v : r) v = dist(rng);
    ava::RaterSet permuted{raters[2], raters[0], raters[1]};
    auto a = ava::ccc_center(raters);
    auto b = ava::ccc_center(permuted);
    for (std::size_t i = 0; i < a.size(); ++i)
        REQUIRE(a[i] == Catch::Approx(b[i]).margin(1e-12));
    auto c = ava::ewe_merge(raters);
    auto d = ava::ewe_merge(permuted);
    for (std::size_t i = 0; i < c.size(); ++i)
        REQUIRE(c[i] == Catch::Approx(d[i]).margin(1e-12));
}

TEST_CASE("ewe downweights the noise-only rater") {
    std::mt19937_64 rng(83);
    std::normal_distribution<double> small(0.0, 0.05), big(0.0, 1.0);
    auto truth = sine_signal(500);
    ava::RaterSet raters(3, truth);
    for (double& v : raters[0]) v += small(rng);
    for (double& v : raters[1]) v += small(rng);
    for (double& v : raters[2]) v = big(rng);  // uncorrelated noise
    auto merged = ava::ewe_merge(raters);
    std::vector<double> unweighted(500, 0.0);
    for (const auto& r : raters)
        for (std::size_t i = 0; i < 500; ++i) unweighted[i] += r[i] / 3.0;
    REQUIRE(rmse(merged, truth) < rmse(unweighted, truth));
    REQUIRE(ava::ccc(merged, truth) > ava::ccc(unweighted, truth));
}

TEST_CASE("ewe of identical raters is the rater itself") {
    auto truth = sine_signal(100);
    ava::RaterSet raters(3, truth);
    auto merged = ava::ewe_merge(raters);
    for (std::size_t i = 0; i < truth.size(); ++i)
        REQUIRE(merged[i] == Catch::Approx(truth[i]).margin(1e-12));
}

TEST_CASE("ccc_center corrects systematic rater offsets") {
    std::mt19937_64 rng(84);
    std::normal_distribution<double> small(0.0, 0.02);
    auto truth = sine_signal(400);
    ava::RaterSet raters(3, truth);
    double offsets[] = {0.4, -0.4, 0.0};
    for (std::size_t k = 0; k < 3; ++k)
        for (double& v : raters[k]) v += offsets[k] + small(rng);
    auto centered = ava::ccc_center(raters);
    REQUIRE(ava::ccc(centered, truth) > 0.99);
}

TEST_CASE("fusion contract violations") {
    REQUIRE_THROWS_AS(ava::ccc_center({{1, 2, 3}}), ava::DegenerateRaters);
    REQUIRE_THROWS_AS(ava::ewe_merge({{1, 2, 3}}), ava::DegenerateRaters);
    REQUIRE_THROWS_AS(ava::ccc_center({{1, 2, 3}, {1, 2}}), ava::LengthMismatch);
    REQUIRE_THROWS_AS(ava::ccc_center({{1, 1, 1}, {2, 2, 2}}), ava::DegenerateRaters);
    REQUIRE_THROWS_AS(ava::ewe_merge({{0, 0, 0}, {0, 0, 0}}), ava::DegenerateRaters);
}

TEST_CASE("clip clamps to [-1,1] and rejects non-finite input") {
    auto out = ava::clip({-2.0, -1.0, 0.25, 1.0, 7.5});
    REQUIRE(out == std::vector<double>{-1.0, -1.0, 0.25, 1.0, 1.0});
    REQUIRE_THROWS_AS(ava::clip({0.0, std::nan("")}), ava::NonFiniteInput);
    REQUIRE_THROWS_AS(ava::clip({std::numeric_limits<double>::infinity()}), ava::NonFiniteInput);
}
