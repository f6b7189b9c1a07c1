#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "das/gradcheck.hpp"
#include "das/ops.hpp"
#include "das/tensor_io.hpp"
#include "test_util.hpp"

using namespace das;
using das::testing::random_tensor;
using das::testing::weighted_sum;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Elementwise, AddMatchesDefinition) {
    Tensor a({2}, {1, 2});
    Tensor b({2}, {3, 4});
    EXPECT_EQ(values(add(a, b)), (std::vector<double>{4, 6}));
}

TEST(Elementwise, MulByOnesIsIdentity) {
    Rng rng(1);
    Tensor x = random_tensor({3, 4}, rng);
    EXPECT_EQ(values(mul(x, Tensor::ones({3, 4}))), values(x));
}

TEST(Elementwise, SoftplusAtZeroIsLn2) {
    EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), std::log(2.0), 1e-15);
}

TEST(Elementwise, ShapeMismatchThrows) {
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 1, 2})), ShapeError);
}

// Broadcasting must agree with materializing the tiled operands, for every
// pair of shapes with rank <= 3 and extents in {1, 2, 3}.
TEST(Elementwise, BroadcastEqualsExplicitTiling) {
    std::vector<Shape> shapes;
    for (std::size_t rank = 0; rank <= 3; ++rank) {
        std::size_t count = 1;
        for (std::size_t i = 0; i < rank; ++i) count *= 3;
        for (std::size_t code = 0; code < count; ++code) {
            Shape s;
            std::size_t c = code;
            for (std::size_t i = 0; i < rank; ++i) {
                s.push_back(c % 3 + 1);
                c /= 3;
            }
            shapes.push_back(s);
        }
    }
    Rng rng(7);
    std::size_t checked = 0;
    for (const auto& sa : shapes)
        for (const auto& sb : shapes) {
            Shape out;
            try {
                out = broadcast_shapes(sa, sb);
            } catch (const ShapeError&) {
                continue;
            }
            Tensor a = random_tensor(sa, rng);
            Tensor b = random_tensor(sb, rng);
            // Tile by hand: out index -> operand index with extent-1 axes pinned to 0.
            auto tile = [&](const Tensor& t) {
                std::vector<double> v(shape_numel(out));
                const Shape& s = t.shape();
                for (std::size_t k = 0; k < v.size(); ++k) {
                    std::size_t rem = k, src = 0, mulf = 1;
                    for (std::size_t d = out.size(); d-- > 0;) {
                        std::size_t i = rem % out[d];
                        rem /= out[d];
                        std::size_t sd = d + s.size() >= out.size() ? d + s.size() - out.size() : SIZE_MAX;
                        if (sd != SIZE_MAX) {
                            src += (s[sd] == 1 ? 0 : i) * mulf;
                            mulf *= s[sd];
                        }
                    }
                    v[k] = t.data()[src];
                }
                return Tensor(out, v);
            };
            for (auto kind : {BinaryKind::add, BinaryKind::sub, BinaryKind::mul}) {
                Tensor direct = elementwise(kind, a, b);
                Tensor tiled = elementwise(kind, tile(a), tile(b));
                ASSERT_EQ(direct.shape(), out);
                ASSERT_EQ(values(direct), values(tiled));
            }
            ++checked;
        }
    EXPECT_GT(checked, 100u);
}

TEST(Elementwise, BroadcastGradientReducesOverTiledAxes) {
    Rng rng(3);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({3, 1}, rng);
    auto r = gradcheck([&] { return weighted_sum(mul(a, b)); }, {a, b});
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Elementwise, UnaryGradcheck) {
    Rng rng(5);
    for (auto kind : {UnaryKind::neg, UnaryKind::exp, UnaryKind::tanh, UnaryKind::sigmoid,
                      UnaryKind::softplus, UnaryKind::gelu, UnaryKind::silu, UnaryKind::square}) {
        Tensor x = random_tensor({3, 5}, rng);
        auto r = gradcheck([&] { return weighted_sum(elementwise(kind, x)); }, {x});
        EXPECT_LT(r.max_rel_error, 1e-4) << static_cast<int>(kind);
    }
    Tensor pos = random_tensor({4}, rng, 0.5, 2.0);
    EXPECT_LT(gradcheck([&] { return weighted_sum(log(pos)); }, {pos}).max_rel_error, 1e-4);
    EXPECT_LT(gradcheck([&] { return weighted_sum(sqrt(pos)); }, {pos}).max_rel_error, 1e-4);
}

TEST(Matmul, IdentityAndHandProduct) {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor m({2, 2}, {3, -1, 2.5, 7});
    EXPECT_EQ(values(matmul(eye, m)), values(m));
    Tensor a({1, 2}, {1, 2});
    Tensor b({2, 1}, {3, 4});
    Tensor c = matmul(a, b);
    EXPECT_EQ(c.shape(), (Shape{1, 1}));
    EXPECT_EQ(c.item(), 11.0);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Matmul, Gradcheck) {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    auto r = gradcheck([&] { return weighted_sum(matmul(a, b)); }, {a, b});
    EXPECT_LT(r.max_rel_error, 1e-4);
    EXPECT_EQ(r.entries, 20u);
}

TEST(Linear, MatchesMatmulPlusBiasAndGradchecks) {
    Rng rng(12);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5}, rng);
    Tensor y = linear(x, w, b);
    Tensor ref = add(matmul(reshape(x, {6, 4}), w), b);
    ASSERT_EQ(y.shape(), (Shape{2, 3, 5}));
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-12);
    EXPECT_LT(gradcheck([&] { return weighted_sum(linear(x, w, b)); }, {x, w, b}).max_rel_error, 1e-4);
}

TEST(Conv2d, UnitKernelIsIdentity) {
    Rng rng(2);
    Tensor x = random_tensor({1, 3, 3}, rng);
    Tensor w({1, 1, 1, 1}, {1.0});
    Tensor y = conv2d(x, w, {}, 1, 0, 1);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_EQ(values(y), values(x));
}

TEST(Conv2d, OnesKernelWithPaddingSumsNeighbourhood) {
    Tensor x = Tensor::ones({1, 2, 2});
    Tensor w = Tensor::ones({1, 1, 3, 3});
    Tensor y = conv2d(x, w, {}, 1, 1, 1);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 2}));
    EXPECT_EQ(values(y), (std::vector<double>{4, 4, 4, 4}));
}

TEST(Conv2d, OutputExtentFormula) {
    Tensor x = Tensor::zeros({2, 3, 9, 7});
    Tensor w = Tensor::zeros({4, 3, 3, 3});
    Tensor y = conv2d(x, w, {}, 2, 1, 1);
    EXPECT_EQ(y.shape(), (Shape{2, 4, (9 + 2 - 3) / 2 + 1, (7 + 2 - 3) / 2 + 1}));
}

TEST(Conv2d, ErrorsOnBadGeometry) {
    EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), {}, 1, 0, 1), ShapeError);
    EXPECT_THROW(conv2d(Tensor::zeros({3, 4, 4}), Tensor::zeros({3, 1, 3, 3}), {}, 1, 1, 2), ShapeError);
}

TEST(Conv2d, DepthwiseGradcheck) {
    Rng rng(4);
    Tensor x = random_tensor({2, 3, 5, 5}, rng);
    Tensor w = random_tensor({3, 1, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    auto r = gradcheck([&] { return weighted_sum(conv2d(x, w, b, 1, 1, 3)); }, {x, w, b});
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Conv2d, StridedDenseGradcheck) {
    Rng rng(6);
    Tensor x = random_tensor({1, 2, 6, 6}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    auto r = gradcheck([&] { return weighted_sum(conv2d(x, w, {}, 2, 1, 1)); }, {x, w});
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Norms, LayernormOfConstantIsZero) {
    Tensor x = Tensor::full({5}, 3.25);
    Tensor y = layernorm(x, 0);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Norms, LayernormAxisOutOfRange) {
    EXPECT_THROW(layernorm(Tensor::zeros({2, 3}), 2), ShapeError);
}

TEST(Norms, LayernormInnerAxisGradcheck) {
    Rng rng(8);
    Tensor x = random_tensor({2, 4, 3}, rng);
    Tensor g = random_tensor({4}, rng);
    Tensor b = random_tensor({4}, rng);
    auto r = gradcheck([&] { return weighted_sum(layernorm(x, 1, g, b)); }, {x, g, b});
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Norms, BatchnormTrainGradcheckAndInferIsAffine) {
    Rng rng(9);
    Tensor x = random_tensor({3, 2, 4}, rng);
    Tensor g = random_tensor({4}, rng);
    Tensor b = random_tensor({4}, rng);
    auto r = gradcheck([&] { return weighted_sum(batchnorm_train(x, g, b, nullptr)); }, {x, g, b});
    EXPECT_LT(r.max_rel_error, 1e-4);

    std::vector<double> mu{0.5, -1, 0, 2}, var{1, 4, 0.25, 9};
    Tensor y = batchnorm_infer(x, mu, var, g, b);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        std::size_t k = i % 4;
        double expect = (x.data()[i] - mu[k]) / std::sqrt(var[k] + kBatchNormEps) * g.data()[k] + b.data()[k];
        EXPECT_NEAR(y.data()[i], expect, 1e-14);
    }
}

TEST(Activations, GeluAtZeroAndTanhForm) {
    EXPECT_EQ(gelu(Tensor::scalar(0.0)).item(), 0.0);
    const double x = 1.3;
    const double ref = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
    EXPECT_NEAR(gelu(Tensor::scalar(x)).item(), ref, 1e-15);
}

TEST(Pooling, GlobalAvgPoolIsMean) {
    Tensor x({2, 2, 1}, {1, 3, 5, 7});
    Tensor y = global_avg_pool(x);
    EXPECT_EQ(y.shape(), (Shape{1}));
    EXPECT_EQ(y.item(), 4.0);
    Rng rng(10);
    Tensor z = random_tensor({2, 3, 2, 4}, rng);
    EXPECT_LT(gradcheck([&] { return weighted_sum(global_avg_pool(z)); }, {z}).max_rel_error, 1e-4);
}

TEST(Shape, PermuteNarrowTakeConcatGradcheck) {
    Rng rng(13);
    Tensor x = random_tensor({2, 3, 4}, rng);
    EXPECT_EQ(permute(x, {2, 0, 1}).shape(), (Shape{4, 2, 3}));
    EXPECT_EQ(permute(x, {2, 0, 1}).at({3, 1, 2}), x.at({1, 2, 3}));
    EXPECT_THROW(permute(x, {0, 0, 1}), ShapeError);
    std::vector<std::size_t> idx{3, 0, 0, 2};
    EXPECT_LT(gradcheck([&] { return weighted_sum(permute(x, {1, 2, 0})); }, {x}).max_rel_error, 1e-4);
    EXPECT_LT(gradcheck([&] { return weighted_sum(narrow(x, 2, 1, 2)); }, {x}).max_rel_error, 1e-4);
    EXPECT_LT(gradcheck([&] { return weighted_sum(take(x, 2, idx)); }, {x}).max_rel_error, 1e-4);
    Tensor y = random_tensor({2, 1, 4}, rng);
    EXPECT_LT(gradcheck([&] { return weighted_sum(concat({x, y}, 1)); }, {x, y}).max_rel_error, 1e-4);
}

TEST(CrossEntropy, SmoothedLossAndGradient) {
    Tensor logits({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
    std::vector<int> labels{1, 2};
    // Hand value for the first row without smoothing.
    Tensor one = cross_entropy(narrow(logits, 0, 0, 1), std::span<const int>(labels).first(1));
    const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5));
    EXPECT_NEAR(one.item(), lse - 2.0, 1e-14);
    Tensor l = logits.detach();
    EXPECT_LT(gradcheck([&] { return cross_entropy(l, labels, 0.1); }, {l}).max_rel_error, 1e-4);
    EXPECT_THROW(cross_entropy(logits, std::vector<int>{0, 3}), DomainError);
}

TEST(Backward, SumGivesOnesAndSquareGivesTwoX) {
    Tensor x({2}, {1, 2}, true);
    sum(x).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1}));
    x.zero_grad();
    sum(square(x)).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, RepeatedCallsAccumulate) {
    Tensor x({2}, {1, 2}, true);
    Tensor loss = sum(square(x));
    loss.backward();
    loss.backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{4, 8}));
}

TEST(Backward, NonScalarLossIsContractError) {
    Tensor x({2}, {1, 2}, true);
    EXPECT_THROW(square(x).backward(), ContractError);
}

TEST(Backward, DiamondGraphVisitsEachNodeOnce) {
    Tensor x({3}, {0.5, -1, 2}, true);
    Tensor y = exp(x);
    Tensor z = add(mul(y, y), y);  // y consumed three times
    Tensor loss = sum(z);
    Graph g = Graph::build(loss);
    std::vector<const detail::Node*> seen;
    for (auto* n : g.order) {
        EXPECT_EQ(std::count(seen.begin(), seen.end(), n), 0);
        for (auto& p : n->parents)
            if (p->requires_grad) EXPECT_NE(std::find(seen.begin(), seen.end(), p.get()), seen.end());
        seen.push_back(n);
    }
    loss.backward();
    for (std::size_t i = 0; i < 3; ++i) {
        double e = std::exp(x.data()[i]);
        EXPECT_NEAR(x.grad()[i], 2 * e * e + e, 1e-12);
    }
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor x({2}, {1, 2}, true);
    NoGradGuard guard;
    Tensor y = square(x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
}

TEST(Determinism, IdenticalInputsGiveBitIdenticalOutputs) {
    Rng r1(77), r2(77);
    Tensor a = random_tensor({4, 6}, r1), b = random_tensor({4, 6}, r2);
    Tensor w1 = random_tensor({6, 3}, r1), w2 = random_tensor({6, 3}, r2);
    EXPECT_EQ(values(gelu(linear(a, w1))), values(gelu(linear(b, w2))));
}

TEST(TensorFile, HeaderLayout) {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    std::ostringstream os;
    write_tensor(os, t);
    const std::string s = os.str();
    ASSERT_EQ(s.size(), 4u + 3u + 2u * 8u + 6u * 8u);
    EXPECT_EQ(s.substr(0, 4), "DTNS");
    EXPECT_EQ(static_cast<int>(s[4]), 1);
    EXPECT_EQ(static_cast<int>(s[5]), 1);
    EXPECT_EQ(static_cast<int>(s[6]), 2);
    EXPECT_EQ(static_cast<unsigned char>(s[7]), 2);  // first extent, little-endian
    EXPECT_EQ(static_cast<unsigned char>(s[15]), 3);
}

// Random shapes and values, including awkward doubles, must survive a round
// trip bit for bit; the f32 path is exact for f32-representable values.
TEST(TensorFile, RoundTripIsBitExact) {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        Shape s;
        const std::size_t rank = rng.below(5);
        for (std::size_t i = 0; i < rank; ++i) s.push_back(rng.below(4) + (trial % 7 == 0 ? 0 : 1));
        std::vector<double> v(shape_numel(s));
        for (auto& x : v) x = rng.normal() * std::pow(10.0, static_cast<double>(rng.below(40)) - 20.0);
        if (!v.empty()) v[0] = -0.0;
        Tensor t(s, v);
        std::stringstream ss;
        write_tensor(ss, t);
        Tensor back = read_tensor(ss);
        ASSERT_EQ(back.shape(), s);
        for (std::size_t i = 0; i < v.size(); ++i)
            ASSERT_EQ(std::bit_cast<std::uint64_t>(back.data()[i]), std::bit_cast<std::uint64_t>(v[i]));

        std::vector<double> f(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<double>(static_cast<float>(v[i]));
        std::stringstream sf;
        write_tensor(sf, Tensor(s, f), DType::f32);
        Tensor fb = read_tensor(sf);
        for (std::size_t i = 0; i < f.size(); ++i)
            ASSERT_EQ(std::bit_cast<std::uint64_t>(fb.data()[i]), std::bit_cast<std::uint64_t>(f[i]));
    }
}

TEST(TensorFile, RejectsCorruptHeader) {
    std::stringstream ss("DTNX\x01\x01\x00");
    EXPECT_THROW(read_tensor(ss), FormatError);
}
