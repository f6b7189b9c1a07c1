#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>
#include <tuple>

#include "das/gradcheck.hpp"
#include "das/ops.hpp"
#include "das/scan.hpp"
#include "test_util.hpp"

using namespace das;
using namespace das::scan;
using das::testing::random_tensor;
using das::testing::weighted_sum;

namespace {

using Order = std::vector<std::size_t>;

// Oracles: sort patches by a key that describes each strategy.
Order sorted_by(std::size_t H, std::size_t W, auto key) {
    Order o(H * W);
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) {
        return key(a / W, a % W) < key(b / W, b % W);
    });
    return o;
}

Order snake_oracle(std::size_t H, std::size_t W) {
    return sorted_by(H, W, [](std::size_t h, std::size_t w) {
        return std::make_tuple(h, h % 2 ? -static_cast<long>(w) : static_cast<long>(w));
    });
}

Order local_oracle(std::size_t H, std::size_t W, std::size_t k) {
    return sorted_by(H, W, [k](std::size_t h, std::size_t w) { return std::make_tuple(h / k, w / k, h, w); });
}

Opn make_opn(std::size_t channels, Rng& rng, bool zero_head) {
    Opn o;
    o.dw_weight = random_tensor({channels, 1, 3, 3}, rng, -0.5, 0.5);
    o.dw_bias = Tensor::zeros({channels});
    o.norm_gamma = Tensor::ones({channels});
    o.norm_beta = Tensor::zeros({channels});
    o.head_weight = zero_head ? Tensor::zeros({channels, 2}) : random_tensor({channels, 2}, rng, -0.5, 0.5);
    o.head_bias = zero_head ? Tensor::zeros({2}) : random_tensor({2}, rng, -0.2, 0.2);
    return o;
}

}  // namespace

TEST(Sweeping, RasterOrder) {
    EXPECT_EQ(sweeping_scan(2, 2).order, (Order{0, 1, 2, 3}));
    EXPECT_EQ(sweeping_scan(1, 5).order, (Order{0, 1, 2, 3, 4}));
    auto p = sweeping_scan(3, 4);
    auto inv = inverse_order(p.order);
    for (std::size_t s = 0; s < p.size(); ++s) EXPECT_EQ(inv[p.order[s]], s);
}

TEST(Continuous, SnakeExamples) {
    EXPECT_EQ(continuous_scan(2, 3).order, (Order{0, 1, 2, 5, 4, 3}));
    EXPECT_EQ(continuous_scan(1, 4).order, (Order{0, 1, 2, 3}));
}

TEST(Local, WindowExamples) {
    EXPECT_EQ(local_scan(4, 4, 2).order, (Order{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15}));
    EXPECT_EQ(local_scan(3, 5, 1).order, sweeping_scan(3, 5).order);
    EXPECT_EQ(local_scan(4, 4, 4).order, sweeping_scan(4, 4).order);
    EXPECT_THROW(local_scan(3, 3, 4), DomainError);
    EXPECT_THROW(local_scan(3, 3, 0), DomainError);
}

TEST(Strategies, ExhaustiveAgainstOraclesUpToFive) {
    for (std::size_t H = 1; H <= 5; ++H)
        for (std::size_t W = 1; W <= 5; ++W) {
            auto sw = sweeping_scan(H, W), sn = continuous_scan(H, W);
            ASSERT_TRUE(is_bijection(sw.order));
            ASSERT_TRUE(is_bijection(sn.order));
            ASSERT_EQ(sn.order, snake_oracle(H, W));
            for (std::size_t s = 1; s < sn.size(); ++s) {
                const long a = long(sn.order[s - 1]), b = long(sn.order[s]);
                ASSERT_EQ(std::abs(a / long(W) - b / long(W)) + std::abs(a % long(W) - b % long(W)), 1);
            }
            for (std::size_t k = 1; k <= std::max(H, W); ++k) {
                auto lp = local_scan(H, W, k);
                ASSERT_TRUE(is_bijection(lp.order));
                ASSERT_EQ(lp.order, local_oracle(H, W, k)) << H << "x" << W << " k=" << k;
            }
            auto id = sampler::identity_grid(H, W);
            ASSERT_EQ(sw.source.coords, id.coords);
            ASSERT_EQ(sn.source.coords, id.coords);
        }
}

TEST(Plan, BijectionCheck) {
    EXPECT_TRUE(is_bijection(Order{2, 0, 1}));
    EXPECT_FALSE(is_bijection(Order{0, 0, 1}));
    EXPECT_FALSE(is_bijection(Order{0, 3, 1}));
    EXPECT_THROW(inverse_order(Order{1, 1}), ContractError);
}

TEST(Plan, ApplySweepingFlattensRowMajor) {
    Rng rng(1);
    Tensor x = random_tensor({3, 4, 2}, rng);
    Tensor s = apply_plan(x, sweeping_scan(3, 4));
    ASSERT_EQ(s.shape(), (Shape{12, 2}));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(s.data()[i], x.data()[i]);
}

TEST(Plan, ApplyContinuousTwoByThree) {
    Tensor x({2, 3, 1}, {10, 11, 12, 13, 14, 15});
    Tensor s = apply_plan(x, continuous_scan(2, 3));
    EXPECT_EQ(std::vector<double>(s.data().begin(), s.data().end()), (std::vector<double>{10, 11, 12, 15, 14, 13}));
}

TEST(Plan, RoundTripAllPermutationsSmall) {
    Rng rng(2);
    // Every permutation for N <= 6, random ones up to N = 12.
    for (std::size_t H = 1; H <= 3; ++H)
        for (std::size_t W = 1; W <= 4; ++W) {
            const std::size_t N = H * W;
            Tensor x = random_tensor({2, H, W, 3}, rng);
            ScanPlan p = sweeping_scan(H, W);
            auto check = [&] {
                Tensor back = unapply_plan(apply_plan(x, p), p);
                ASSERT_EQ(back.shape(), x.shape());
                for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(back.data()[i], x.data()[i]);
            };
            if (N <= 6) {
                std::sort(p.order.begin(), p.order.end());
                do check(); while (std::next_permutation(p.order.begin(), p.order.end()));
            } else {
                for (int t = 0; t < 200; ++t) {
                    for (std::size_t i = N - 1; i > 0; --i) std::swap(p.order[i], p.order[rng.below(i + 1)]);
                    check();
                }
            }
        }
}

TEST(Plan, InvalidPlanIsContractError) {
    Tensor x = Tensor::zeros({2, 2, 1});
    ScanPlan p = sweeping_scan(2, 2);
    p.order[1] = 0;
    EXPECT_THROW(apply_plan(x, p), ContractError);
    EXPECT_THROW(unapply_plan(Tensor::zeros({4, 1}), p), ContractError);
    EXPECT_THROW(apply_plan(x, sweeping_scan(2, 3)), ContractError);
}

TEST(Plan, WritePlanFormat) {
    std::ostringstream os;
    write_plan(os, continuous_scan(1, 2));
    EXPECT_EQ(os.str(), "0, -1, 0\n1, 1, 0\n");
}

TEST(Opn, ZeroHeadGivesZeroOffsets) {
    Rng rng(3);
    Opn o = make_opn(4, rng, true);
    Tensor off = opn_forward(random_tensor({5, 6, 4}, rng), o);
    ASSERT_EQ(off.shape(), (Shape{5, 6, 2}));
    for (double v : off.data()) EXPECT_EQ(v, 0.0);
}

// Zero padding in the depthwise conv makes border patches differ; the
// constant-field property holds on interior patches.
TEST(Opn, ConstantInputGivesConstantInteriorOffsets) {
    Rng rng(4);
    Opn o = make_opn(3, rng, false);
    Tensor x = Tensor::full({6, 7, 3}, 0.0);
    for (std::size_t i = 0; i < x.numel(); ++i) x.mutable_data()[i] = 0.3 * double(i % 3) - 0.2;
    Tensor off = opn_forward(x, o);
    for (std::size_t h = 1; h < 5; ++h)
        for (std::size_t w = 1; w < 6; ++w)
            for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(off.at({h, w, k}), off.at({1, 1, k}));
}

TEST(Opn, OffsetsBoundedByRange) {
    Rng rng(5);
    Opn o = make_opn(4, rng, false);
    o.head_weight = random_tensor({4, 2}, rng, -20, 20);
    for (double range : {0.1, 0.5, 2.0}) {
        Tensor off = opn_forward(random_tensor({2, 5, 5, 4}, rng, -5, 5), o, range);
        for (double v : off.data()) ASSERT_LE(std::abs(v), range);
    }
}

TEST(Das, ZeroOffsetsReproduceFeaturesAndSweepingPlan) {
    Rng rng(6);
    Opn o = make_opn(4, rng, true);
    Tensor x = random_tensor({2, 4, 5, 4}, rng);
    auto r = dynamic_adaptive_scan(x, o);
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(r.resampled.data()[i], x.data()[i]);
    auto plan = r.plan(1);
    auto sweep = sweeping_scan(4, 5);
    EXPECT_EQ(plan.order, sweep.order);
    EXPECT_EQ(plan.source.coords, sweep.source.coords);
    Tensor a = apply_plan(r.resampled, plan), b = apply_plan(x, sweep);
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
}

TEST(Das, OffsetsToCornerCollapseOntoFirstPatch) {
    Rng rng(7);
    Opn o = make_opn(2, rng, true);
    o.head_bias = Tensor({2}, {-100.0, -100.0});
    Tensor x = random_tensor({3, 4, 2}, rng);
    auto r = dynamic_adaptive_scan(x, o, 10.0);
    for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 4; ++w)
            for (std::size_t c = 0; c < 2; ++c) ASSERT_EQ(r.resampled.at({h, w, c}), x.at({0, 0, c}));
    for (double v : r.raw_coords.data()) EXPECT_LT(v, -1.0);
}

TEST(Das, ResampledValuesStayWithinFeatureRange) {
    Rng rng(8);
    Opn o = make_opn(3, rng, false);
    Tensor x = random_tensor({6, 6, 3}, rng);
    auto r = dynamic_adaptive_scan(x, o, 1.0);
    const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
    for (double v : r.resampled.data()) {
        ASSERT_GE(v, *lo - 1e-12);
        ASSERT_LE(v, *hi + 1e-12);
    }
}

TEST(Das, GradientReachesOpnAndFeatures) {
    Rng rng(9);
    Opn o = make_opn(3, rng, false);
    o.dw_bias = random_tensor({3}, rng, -0.1, 0.1);
    Tensor x = random_tensor({4, 4, 3}, rng);
    auto loss = [&] { return weighted_sum(dynamic_adaptive_scan(x, o, 0.3).resampled); };
    std::vector<Tensor> leaves{x, o.dw_weight, o.dw_bias, o.norm_gamma, o.norm_beta, o.head_weight, o.head_bias};
    auto r = gradcheck(loss, leaves);
    EXPECT_LT(r.max_rel_error, 1e-4);
    for (auto& t : leaves) {
        double norm = 0.0;
        for (double g : t.grad()) norm += g * g;
        EXPECT_GT(norm, 0.0);
    }
}
