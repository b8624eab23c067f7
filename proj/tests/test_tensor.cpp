#include <gtest/gtest.h>

#include <cmath>

#include "eae/errors.hpp"
#include "eae/tensor.hpp"
#include "support.hpp"

using namespace eae;
using eae::testing::check_gradients;
using eae::testing::random_tensor;

namespace {

void expect_data(const Tensor& t, std::vector<double> want, double tol = 0.0) {
    ASSERT_EQ(t.numel(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.at(i), want[i], tol) << "index " << i;
}

// Direct loops, no im2col.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(n * f * oh * ow, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < f; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double s = 0.0;
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v) {
                                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(w)) continue;
                                s += x.at(((b * c + ch) * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(q)) *
                                     k.at(((o * c + ch) * kh + u) * kw + v);
                            }
                    out[((b * f + o) * oh + i) * ow + j] = s;
                }
    return out;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor b({2, 2}, {5, 6, 7, 8});
    expect_data(matmul(eye, b), {5, 6, 7, 8});
}

TEST(Matmul, RowTimesColumnIsDot) {
    const auto r = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
    EXPECT_EQ(r.shape(), (Shape{1, 1}));
    EXPECT_EQ(r.item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto a = random_tensor({4, 3}, seed);
        const auto b = random_tensor({3, 2}, seed + 100);
        const auto c = matmul(a, b);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < 3; ++k) s += a.at(i * 3 + k) * b.at(k * 2 + j);
                EXPECT_NEAR(c.at(i * 2 + j), s, 1e-12);
            }
    }
}

TEST(Matmul, InnerMismatchThrows) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
    EXPECT_THROW(matmul(Tensor::zeros({6}), Tensor::zeros({6, 1})), DimensionError);
}

TEST(Elementwise, Examples) {
    expect_data(relu(Tensor({3}, {-1, 0, 2})), {0, 0, 2});
    expect_data(add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4})), {4, 6});
    expect_data(exp(log(Tensor({1}, {2.5}))), {2.5}, 1e-12);
    expect_data(elementwise(ElementwiseOp::scale, Tensor({2}, {1, -2}), nullptr, 3.0), {3, -6});
    const Tensor rhs({2}, {2, 5});
    expect_data(elementwise(ElementwiseOp::mul, Tensor({2}, {3, 4}), &rhs), {6, 20});
    expect_data(elementwise(ElementwiseOp::neg, Tensor({2}, {3, -4})), {-3, 4});
    expect_data(sub(Tensor({2}, {3, 4}), Tensor::scalar(1.0)), {2, 3});
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
    EXPECT_THROW(log(Tensor({2}, {1.0, 0.0})), DomainError);
    EXPECT_THROW(log(Tensor({1}, {-3.0})), DomainError);
}

TEST(Elementwise, ShapeMismatchThrows) {
    EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
    const Tensor rhs = Tensor::zeros({3});
    EXPECT_THROW(elementwise(ElementwiseOp::add, Tensor::zeros({2}), nullptr), ContractError);
    EXPECT_THROW(elementwise(ElementwiseOp::mul, Tensor::zeros({2}), &rhs), DimensionError);
}

TEST(Backward, SquareGradient) {
    GradTape tape;
    Tensor w({1}, {3.0}, true);
    backward(sum(mul(w, w)));
    EXPECT_EQ(w.grad()[0], 6.0);
}

TEST(Backward, ProductRule) {
    GradTape tape;
    Tensor a({1}, {2.0}, true), b({1}, {5.0}, true);
    backward(sum(mul(a, b)));
    EXPECT_EQ(a.grad()[0], 5.0);
    EXPECT_EQ(b.grad()[0], 2.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
    GradTape tape;
    Tensor w({1}, {3.0}, true);
    const auto root = sum(mul(w, w));
    backward(root);
    backward(root);
    EXPECT_EQ(w.grad()[0], 12.0);
    w.zero_grad();
    EXPECT_FALSE(w.has_grad());
}

TEST(Backward, NonScalarRootIsContractError) {
    GradTape tape;
    Tensor w({2}, {1, 2}, true);
    EXPECT_THROW(backward(mul(w, w)), ContractError);
}

TEST(Backward, RootOutsideActiveTapeIsContractError) {
    Tensor w({1}, {1.0}, true);
    Tensor root;
    {
        GradTape tape;
        root = sum(w);
    }
    EXPECT_THROW(backward(root), ContractError);
    GradTape other;
    EXPECT_THROW(backward(root), ContractError);
}

TEST(Backward, UntrackedTensorsRecordNothing) {
    GradTape tape;
    const auto before = tape.size();
    const auto r = add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}));
    EXPECT_EQ(tape.size(), before);
    EXPECT_FALSE(r.has_node());
}

TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
    Tensor x = random_tensor({5, 4}, 1);
    Tensor w1 = random_tensor({4, 6}, 2, -1, 1, true);
    Tensor b1 = random_tensor({6}, 3, -1, 1, true);
    Tensor w2 = random_tensor({6, 3}, 4, -1, 1, true);
    Tensor b2 = random_tensor({3}, 5, -1, 1, true);
    auto loss = [&] {
        auto h = relu(add_row_bias(matmul(x, w1), b1));
        auto z = add_row_bias(matmul(h, w2), b2);
        return sum(mul(z, z));
    };
    const auto r = check_gradients(loss, {w1, b1, w2, b2});
    EXPECT_EQ(r.checked, 24u + 6 + 18 + 3);
    EXPECT_LT(r.max_rel, 1e-6);
}

TEST(Backward, EveryElementwiseOpMatchesFiniteDifferences) {
    Tensor a = random_tensor({7}, 10, -2, 2, true);
    Tensor b = random_tensor({7}, 11, -2, 2, true);
    Tensor pos = random_tensor({7}, 12, 0.5, 2, true);
    Tensor s = Tensor::scalar(0.7, true);
    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"add", [&] { return sum(mul(add(a, b), a)); }},
        {"sub", [&] { return sum(mul(sub(a, b), b)); }},
        {"mul", [&] { return sum(mul(mul(a, b), a)); }},
        {"relu", [&] { return sum(mul(relu(a), b)); }},
        {"exp", [&] { return sum(exp(a)); }},
        {"log", [&] { return sum(mul(log(pos), a)); }},
        {"neg", [&] { return sum(mul(neg(a), b)); }},
        {"scale", [&] { return sum(mul(scale(a, -1.3), a)); }},
        {"scalar-broadcast", [&] { return sum(mul(mul(a, s), b)); }},
        {"reshape", [&] { return sum(mul(a.reshape({7, 1}), b.reshape({7, 1}))); }},
    };
    for (const auto& [name, f] : cases) {
        const auto r = check_gradients(f, {a, b, pos, s});
        EXPECT_LT(r.max_rel, 1e-6) << name;
    }
}

TEST(Conv2d, OnesGiveNine) {
    const auto r = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), 1, 0);
    EXPECT_EQ(r.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(r.item(), 9.0);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
    const auto x = random_tensor({2, 1, 5, 5}, 3);
    Tensor k = Tensor::zeros({1, 1, 3, 3});
    k.mutable_data()[4] = 1.0;
    const auto r = conv2d(x, k, 1, 1);
    ASSERT_EQ(r.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(r.at(i), x.at(i));
}

TEST(Conv2d, MatchesDirectLoops) {
    const auto x = random_tensor({2, 3, 9, 9}, 7);
    const auto k = random_tensor({4, 3, 3, 3}, 8);
    for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}}) {
        const auto r = conv2d(x, k, stride, pad);
        const auto want = conv_oracle(x, k, stride, pad);
        ASSERT_EQ(r.numel(), want.size());
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(r.at(i), want[i], 1e-10);
    }
}

TEST(Conv2d, NonIntegralOutputIsDimensionError) {
    EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 6, 6}), Tensor::zeros({1, 1, 3, 3}), 2, 0), DimensionError);
    EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 6, 6}), Tensor::zeros({1, 1, 3, 3}), 1, 0), DimensionError);
    EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), 1, 0), DimensionError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    Tensor x = random_tensor({2, 2, 5, 5}, 20, -2, 2, true);
    Tensor k = random_tensor({3, 2, 3, 3}, 21, -1, 1, true);
    Tensor b = random_tensor({3}, 22, -1, 1, true);
    const Tensor probe = random_tensor({2, 3, 3, 3}, 23);
    auto loss = [&] { return sum(mul(conv2d(x, k, b, 2, 1), probe)); };
    const auto r = check_gradients(loss, {x, k, b});
    EXPECT_LT(r.max_rel, 1e-6);
}

TEST(MaxPool, PicksWindowMaxAndRoutesGradient) {
    GradTape tape;
    Tensor x({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 8, 7}, true);
    const auto y = maxpool2x2(x);
    expect_data(y, {5, 8});
    backward(sum(y));
    expect_data(Tensor({8}, {x.grad().begin(), x.grad().end()}), {0, 1, 0, 0, 0, 0, 1, 0});
}

TEST(MaxPool, FlattenAndPoolGradientsMatchFiniteDifferences) {
    Tensor x = random_tensor({2, 3, 4, 6}, 30, -2, 2, true);
    const Tensor probe = random_tensor({2, 18}, 31);
    auto loss = [&] { return sum(mul(flatten(maxpool2x2(x)), probe)); };
    EXPECT_LT(check_gradients(loss, {x}).max_rel, 1e-6);
}

TEST(Properties, BackwardIsLinear) {
    const double alpha = 1.7, beta = -0.4;
    Tensor w = random_tensor({6}, 40, -2, 2, true);
    const Tensor c = random_tensor({6}, 41);
    auto f = [&] { return sum(mul(exp(w), c)); };
    auto g = [&] { return sum(mul(mul(w, w), w)); };
    auto grad_of = [&](const std::function<Tensor()>& h) {
        GradTape tape;
        w.zero_grad();
        backward(h());
        std::vector<double> out(w.grad().begin(), w.grad().end());
        w.zero_grad();
        return out;
    };
    const auto gf = grad_of(f), gg = grad_of(g);
    const auto gc = grad_of([&] { return add(scale(f(), alpha), scale(g(), beta)); });
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(gc[i], alpha * gf[i] + beta * gg[i], 1e-10);
}

TEST(Properties, ForwardIsBitIdenticalAcrossCalls) {
    const auto x = random_tensor({3, 2, 6, 6}, 50);
    const auto k = random_tensor({4, 2, 3, 3}, 51);
    const auto w = random_tensor({36, 5}, 52);
    auto run = [&] { return matmul(flatten(maxpool2x2(relu(conv2d(x, k, 1, 1)))), w); };
    const auto a = run(), b = run();
    ASSERT_EQ(a.numel(), b.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}

TEST(Counters, ParameterGuardHidesParameters) {
    Tensor p({2}, {1, 2}, true);
    p.set_parameter(true);
    Tensor x({2}, {3, 4}, true);
    const auto before = snapshot_passes();
    {
        GradTape tape;
        ParameterGradsDisabled guard;
        backward(sum(mul(p, x)));
    }
    const auto d = snapshot_passes() - before;
    EXPECT_EQ(d.input_grad_passes, 1u);
    EXPECT_EQ(d.param_backward_passes, 0u);
    EXPECT_FALSE(p.has_grad());
    EXPECT_EQ(x.grad()[0], 1.0);
}
