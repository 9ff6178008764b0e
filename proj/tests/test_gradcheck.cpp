#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ava/metrics.hpp"
#include "ava/tensor.hpp"
#include "test_util.hpp"

using ava::Tensor;
using testutil::grad_check;
using testutil::random_tensor;

namespace {
constexpr double kTol = 1e-4;
constexpr int kReps = 10;  // the acceptance suite runs the full 100

Tensor squash(const Tensor& t) { return ava::mean_all(ava::mul(t, t)); }
}  // namespace

TEST_CASE("gradcheck: elementwise and scalar ops") {
    std::mt19937_64 rng(101);
    for (int rep = 0; rep < kReps; ++rep) {
        std::vector<Tensor> leaves{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
        auto f = [](std::vector<Tensor>& l) {
            return squash(ava::add(ava::mul(l[0], l[1]), ava::mul_scalar(ava::add_scalar(l[0], 0.7), 1.3)));
        };
        REQUIRE(grad_check(f, leaves) < kTol);
    }
}

TEST_CASE("gradcheck: relu") {
    std::mt19937_64 rng(102);
    for (int rep = 0; rep < kReps; ++rep) {
        std::vector<Tensor> leaves{random_tensor({4, 4}, rng)};
        // Keep values away from the kink where the derivative is undefined.
        for (double& v : leaves[0].data())
            if (std::abs(v) < 5e-3) v = 0.1;
        auto f = [](std::vector<Tensor>& l) { return squash(ava::relu(l[0])); };
        REQUIRE(grad_check(f, leaves) < kTol);
    }
}

TEST_CASE("gradcheck: matmul and transpose") {
    std::mt19937_64 rng(103);
    for (int rep = 0; rep < kReps; ++rep) {
        std::vector<Tensor> leaves{random_tensor({3, 5}, rng), random_tensor({5, 2}, rng)};
        auto f = [](std::vector<Tensor>& l) {
            return squash(ava::matmul(ava::transpose(ava::matmul(l[0], l[1])), l[0]));
        };
        REQUIRE(grad_check(f, leaves) < kTol);
    }
}

TEST_CASE("gradcheck: softmax_rows") {
    std::mt19937_64 rng(104);
    for (int rep = 0; rep < kReps; ++rep) {
        std::vector<Tensor> leaves{random_tensor({3, 6}, rng, 2.0)};
        Tensor probe = random_tensor({3, 6}, rng, 1.0, false);
        auto f = [probe](std::vector<Tensor>& l) {
            return ava::mean_all(ava::mul(ava::softmax_rows(l[0]), probe));
        };
        REQUIRE(grad_check(f, leaves) < kTol);
    }
}

TEST_CASE("gradcheck: conv1d_causal") {
    std::mt19937_64 rng(105);
    for (int rep = 0; rep < kReps; ++rep) {
        std::vector<Tensor> leaves{random_tensor({2, 9}, rng), random_tensor({3, 2, 3}, rng)};
        std::size_t dil = 1 + rep % 3;
        auto f = [dil](std::vector<Tensor>& l) {
            return squash(ava::conv1d_causal(l[0], l[1], dil));
        };
        REQUIRE(grad_check(f, leaves) < kTol);
    }
}

TEST_CASE("gradcheck: conv2d, maxpool2, global_avg_pool") {
    std::mt19937_64 rng(106);
    for (int rep = 0; rep < kReps; ++rep) {
        std::vector<Tensor> leaves{random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng)};
        auto f = [](std::vector<Tensor>& l) {
            return squash(ava::global_avg_pool(ava::maxpool2(ava::conv2d(l[0], l[1]))));
        };
        REQUIRE(grad_check(f, leaves) < kTol);
    }
}

TEST_CASE("gradcheck: concat, slices, reshape") {
    std::mt19937_64 rng(107);
    for (int rep = 0; rep < kReps; ++rep) {
        std::vector<Tensor> leaves{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
        auto f = [](std::vector<Tensor>& l) {
            Tensor c = ava::concat({l[0], l[1]}, 1);
            Tensor s = ava::slice_cols(c, 1, 4);
            return squash(ava::reshape(ava::slice_rows(s, 0, 2), {4, 2}));
        };
        REQUIRE(grad_check(f, leaves) < kTol);
    }
}

TEST_CASE("gradcheck: reductions, broadcast, layer_norm, affine") {
    std::mt19937_64 rng(108);
    for (int rep = 0; rep < kReps; ++rep) {
        std::vector<Tensor> leaves{random_tensor({4, 3}, rng), random_tensor({3}, rng),
                                   random_tensor({3}, rng), random_tensor({3, 2}, rng),
                                   random_tensor({2}, rng)};
        auto f = [](std::vector<Tensor>& l) {
            Tensor ln = ava::layer_norm(l[0], l[1], l[2]);
            Tensor aff = ava::affine(ln, l[3], l[4]);
            Tensor v = ava::variance_all(aff);
            return ava::add(v, squash(ava::sub_bcast(aff, ava::mean_all(aff))));
        };
        REQUIRE(grad_check(f, leaves) < kTol);
    }
}

TEST_CASE("gradcheck: ccc_loss composition") {
    std::mt19937_64 rng(109);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int rep = 0; rep < kReps; ++rep) {
        std::vector<Tensor> leaves{random_tensor({12}, rng)};
        std::vector<double> gold(12);
        for (double& v : gold) v = dist(rng);
        auto f = [gold](std::vector<Tensor>& l) { return ava::ccc_loss(l[0], gold); };
        REQUIRE(grad_check(f, leaves, 1e-5) < 1e-5);
    }
}
