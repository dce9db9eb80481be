#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "graphfuse/nn_ops.hpp"
#include "graphfuse/tensor.hpp"
#include "test_util.hpp"

using namespace graphfuse;
using gftest::expect_all_near;
using gftest::make;
using gftest::random_tensor;

namespace {

// Independent triple-loop oracle for matrix products.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::int64_t m, std::int64_t k, std::int64_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
    return c;
}

// Independent sliding-window oracle for cross-correlation with zero padding.
std::vector<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                                  std::int64_t sh, std::int64_t sw, std::int64_t ph,
                                  std::int64_t pw, Dims& out_dims) {
    const std::int64_t B = x.dims[0], Cin = x.dims[1], H = x.dims[2], W = x.dims[3];
    const std::int64_t Cout = w.dims[0], kh = w.dims[2], kw = w.dims[3];
    const std::int64_t OH = (H + 2 * ph - kh) / sh + 1;
    const std::int64_t OW = (W + 2 * pw - kw) / sw + 1;
    out_dims = {B, Cout, OH, OW};
    std::vector<double> out(B * Cout * OH * OW, 0.0);
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t co = 0; co < Cout; ++co)
            for (std::int64_t oh = 0; oh < OH; ++oh)
                for (std::int64_t ow = 0; ow < OW; ++ow) {
                    double acc = 0.0;
                    for (std::int64_t ci = 0; ci < Cin; ++ci)
                        for (std::int64_t r = 0; r < kh; ++r)
                            for (std::int64_t c = 0; c < kw; ++c) {
                                const std::int64_t ih = oh * sh - ph + r;
                                const std::int64_t iw = ow * sw - pw + c;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.data[((b * Cin + ci) * H + ih) * W + iw] *
                                       w.data[((co * Cin + ci) * kh + r) * kw + c];
                            }
                    out[((b * Cout + co) * OH + oh) * OW + ow] = acc;
                }
    return out;
}

}  // namespace

TEST(Matmul, IdentityCase) {
    auto I = make<double>({2, 2}, {1, 0, 0, 1});
    auto a = make<double>({2, 2}, {1, 2, 3, 4});
    auto c = matmul(I, a);
    expect_all_near(*c, {1, 2, 3, 4}, 0.0);
}

TEST(Matmul, HandComputedProduct) {
    auto a = make<double>({2, 2}, {1, 2, 3, 4});
    auto b = make<double>({2, 2}, {5, 6, 7, 8});
    auto c = matmul(a, b);
    expect_all_near(*c, {19, 22, 43, 50}, 0.0);
}

TEST(Matmul, ShapeContract) {
    Rng rng(7);
    auto a = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({4, 5}, rng);
    EXPECT_EQ(matmul(a, b)->dims, (Dims{3, 5}));
}

TEST(Matmul, MismatchNamesBothShapes) {
    auto a = Tensor<double>::zeros({3, 4});
    auto b = Tensor<double>::zeros({5, 2});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("(3,4)"), std::string::npos) << msg;
        EXPECT_NE(msg.find("(5,2)"), std::string::npos) << msg;
    }
}

TEST(Matmul, MatchesOracleOnRandomShapes) {
    Rng rng(11);
    for (int it = 0; it < 30; ++it) {
        const std::int64_t m = 1 + rng.uniform_int(6), k = 1 + rng.uniform_int(6),
                           n = 1 + rng.uniform_int(6);
        auto a = random_tensor<double>({m, k}, rng);
        auto b = random_tensor<double>({k, n}, rng);
        auto c = matmul(a, b);
        auto ref = matmul_oracle(a->data, b->data, m, k, n);
        expect_all_near(*c, ref, 1e-12, "matmul vs oracle");
    }
}

TEST(Conv2d, OneByOneIdentityKernel) {
    Rng rng(3);
    auto x = random_tensor<double>({1, 1, 4, 5}, rng);
    auto w = make<double>({1, 1, 1, 1}, {1.0});
    auto y = conv2d(x, w);
    expect_all_near(*y, x->data, 0.0);
}

TEST(Conv2d, AllOnesWindowSum) {
    auto x = make<double>({1, 1, 2, 2}, {1, 2, 3, 4});
    auto w = Tensor<double>::full({1, 1, 2, 2}, 1.0);
    auto y = conv2d(x, w);
    ASSERT_EQ(y->dims, (Dims{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y->data[0], 10.0);
}

TEST(Conv2d, TemporalShapeContract) {
    Rng rng(5);
    auto x = random_tensor<double>({1, 3, 9, 20}, rng);
    auto w = random_tensor<double>({4, 3, 9, 1}, rng);
    ConvSpec spec;
    spec.pad_h = 4;
    auto y = conv2d(x, w, spec);
    EXPECT_EQ(y->dims, (Dims{1, 4, 9, 20}));
}

TEST(Conv2d, KernelLargerThanPaddedInput) {
    auto x = Tensor<double>::zeros({1, 1, 3, 3});
    auto w = Tensor<double>::zeros({1, 1, 5, 1});
    EXPECT_THROW(conv2d(x, w), ShapeError);
}

TEST(Conv2d, MatchesOracleOnRandomShapes) {
    Rng rng(13);
    for (int it = 0; it < 25; ++it) {
        const std::int64_t B = 1 + rng.uniform_int(2), Cin = 1 + rng.uniform_int(3),
                           Cout = 1 + rng.uniform_int(3);
        const std::int64_t H = 3 + rng.uniform_int(6), W = 3 + rng.uniform_int(6);
        ConvSpec spec;
        spec.stride_h = 1 + rng.uniform_int(2);
        spec.stride_w = 1 + rng.uniform_int(2);
        spec.pad_h = rng.uniform_int(3);
        spec.pad_w = rng.uniform_int(3);
        const std::int64_t kh = 1 + rng.uniform_int(std::min<std::int64_t>(3, H + 2 * spec.pad_h));
        const std::int64_t kw = 1 + rng.uniform_int(std::min<std::int64_t>(3, W + 2 * spec.pad_w));
        auto x = random_tensor<double>({B, Cin, H, W}, rng);
        auto w = random_tensor<double>({Cout, Cin, kh, kw}, rng);
        auto y = conv2d(x, w, spec);
        Dims ref_dims;
        auto ref = conv2d_oracle(*x, *w, spec.stride_h, spec.stride_w, spec.pad_h, spec.pad_w,
                                 ref_dims);
        ASSERT_EQ(y->dims, ref_dims);
        expect_all_near(*y, ref, 1e-12, "conv2d vs oracle");
    }
}

TEST(BatchNorm, ConstantInputNormalizesToZero) {
    auto x = Tensor<double>::full({4, 2, 3}, 7.5);
    auto gamma = Tensor<double>::full({2}, 1.0);
    auto beta = Tensor<double>::zeros({2});
    auto rm = Tensor<double>::zeros({2});
    auto rv = Tensor<double>::full({2}, 1.0);
    auto y = batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
    for (auto v : y->data) EXPECT_NEAR(v, 0.0, 1e-9);
    // running stats moved toward the batch statistics
    EXPECT_NEAR(rm->data[0], 0.75, 1e-12);
    EXPECT_NEAR(rv->data[0], 0.9, 1e-12);  // unbiased var 0, momentum 0.1
}

TEST(BatchNorm, BetaShift) {
    auto x = Tensor<double>::full({2, 3, 4}, -2.0);
    auto gamma = Tensor<double>::full({3}, 1.0);
    auto beta = Tensor<double>::full({3}, 5.0);
    auto rm = Tensor<double>::zeros({3});
    auto rv = Tensor<double>::full({3}, 1.0);
    auto y = batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
    for (auto v : y->data) EXPECT_NEAR(v, 5.0, 1e-9);
}

TEST(BatchNorm, UnitVarianceHandCheck) {
    // per channel values {-1, 1}: mean 0, biased var 1
    auto x = make<double>({2, 1, 1}, {-1.0, 1.0});
    auto gamma = Tensor<double>::full({1}, 1.0);
    auto beta = Tensor<double>::zeros({1});
    auto rm = Tensor<double>::zeros({1});
    auto rv = Tensor<double>::full({1}, 1.0);
    auto y = batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-12);
    EXPECT_NEAR(y->data[0], -1.0, 1e-6);
    EXPECT_NEAR(y->data[1], 1.0, 1e-6);
}

TEST(BatchNorm, EvalModeUsesRunningStats) {
    auto x = make<double>({1, 1, 2}, {3.0, 5.0});
    auto gamma = Tensor<double>::full({1}, 2.0);
    auto beta = Tensor<double>::full({1}, 1.0);
    auto rm = Tensor<double>::full({1}, 4.0);
    auto rv = Tensor<double>::full({1}, 4.0);
    auto y = batch_norm(x, gamma, beta, rm, rv, false, 0.1, 1e-12);
    EXPECT_NEAR(y->data[0], 2.0 * (3.0 - 4.0) / 2.0 + 1.0, 1e-6);
    EXPECT_NEAR(y->data[1], 2.0 * (5.0 - 4.0) / 2.0 + 1.0, 1e-6);
}

TEST(BatchNorm, NonPositiveEpsRejected) {
    auto x = Tensor<double>::zeros({1, 1, 2});
    auto p = Tensor<double>::zeros({1});
    EXPECT_THROW(batch_norm(x, p, p, p, p, true, 0.1, 0.0), ConfigError);
}

TEST(CrossEntropy, UniformLogits) {
    auto logits = Tensor<double>::zeros({1, 27});
    auto loss = softmax_cross_entropy(logits, {0});
    EXPECT_NEAR(loss->item(), std::log(27.0), 1e-9);  // ~3.2958
}

TEST(CrossEntropy, ClosedFormPeakedLogits) {
    auto logits = make<double>({1, 3}, {10.0, 0.0, 0.0});
    auto loss = softmax_cross_entropy(logits, {0});
    const double expected = std::log1p(2.0 * std::exp(-10.0));  // ~9.08e-5
    EXPECT_NEAR(loss->item(), expected, 1e-12);
}

TEST(CrossEntropy, BatchMeanInvariance) {
    auto one = make<double>({1, 4}, {0.3, -0.2, 1.1, 0.0});
    auto two = make<double>({2, 4}, {0.3, -0.2, 1.1, 0.0, 0.3, -0.2, 1.1, 0.0});
    EXPECT_NEAR(softmax_cross_entropy(one, {2})->item(),
                softmax_cross_entropy(two, {2, 2})->item(), 1e-12);
}

TEST(CrossEntropy, NonNegativeAndApproachesZero) {
    Rng rng(17);
    for (int it = 0; it < 50; ++it) {
        auto logits = random_tensor<double>({2, 5}, rng, -3.0, 3.0);
        const std::int64_t label = rng.uniform_int(5);
        EXPECT_GE(softmax_cross_entropy(logits, {label, label})->item(), 0.0);
    }
    auto peaked = make<double>({1, 3}, {60.0, 0.0, 0.0});
    EXPECT_LT(softmax_cross_entropy(peaked, {0})->item(), 1e-20);
}

TEST(CrossEntropy, LabelOutOfRange) {
    auto logits = Tensor<double>::zeros({1, 3});
    EXPECT_THROW(softmax_cross_entropy(logits, {3}), DataError);
    EXPECT_THROW(softmax_cross_entropy(logits, {-1}), DataError);
}

TEST(Elementwise, ReluValues) {
    auto x = make<double>({3}, {-1.0, 0.0, 2.0});
    expect_all_near(*relu(x), {0.0, 0.0, 2.0}, 0.0);
}

TEST(Elementwise, ConcatChannelLayout) {
    // (1,3,T,N) + (1,6,T,N) -> (1,9,T,N): the (1+S)*C channel layout with S=2
    Rng rng(19);
    auto a = random_tensor<double>({1, 3, 4, 5}, rng);
    auto b = random_tensor<double>({1, 6, 4, 5}, rng);
    auto c = concat<double>({a, b}, 1);
    EXPECT_EQ(c->dims, (Dims{1, 9, 4, 5}));
}

TEST(Elementwise, GlobalAveragePoolConstant) {
    auto x = Tensor<double>::full({2, 3, 4, 5}, 2.5);
    auto y = global_avg_pool(x, 2);
    ASSERT_EQ(y->dims, (Dims{2, 3}));
    for (auto v : y->data) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(Elementwise, ConcatThenSliceRecoversInputs) {
    Rng rng(23);
    for (int it = 0; it < 20; ++it) {
        const std::size_t axis = static_cast<std::size_t>(rng.uniform_int(3));
        Dims d{1 + rng.uniform_int(3), 1 + rng.uniform_int(3), 1 + rng.uniform_int(3)};
        Dims d2 = d;
        d2[axis] = 1 + rng.uniform_int(4);
        auto a = random_tensor<double>(d, rng);
        auto b = random_tensor<double>(d2, rng);
        auto c = concat<double>({a, b}, axis);
        auto ra = slice(c, axis, 0, d[axis]);
        auto rb = slice(c, axis, d[axis], d2[axis]);
        gftest::expect_tensors_equal(*ra, *a, "first part");
        gftest::expect_tensors_equal(*rb, *b, "second part");
    }
}

TEST(Elementwise, BroadcastRepeat) {
    auto x = make<double>({1, 3}, {1.0, 2.0, 3.0});
    auto y = broadcast_repeat(x, 0, 4);
    ASSERT_EQ(y->dims, (Dims{4, 3}));
    for (int r = 0; r < 4; ++r) {
        EXPECT_EQ(y->data[r * 3 + 0], 1.0);
        EXPECT_EQ(y->data[r * 3 + 2], 3.0);
    }
    EXPECT_THROW(broadcast_repeat(make<double>({2}, {1, 2}), 0, 5), ShapeError);
}

TEST(Elementwise, IncompatibleConcatShapes) {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({2, 4});
    EXPECT_THROW(concat<double>({a, b}, 0), ShapeError);
}

TEST(Backward, SumOfSquares) {
    Rng rng(29);
    auto x = random_tensor<double>({6}, rng, -2.0, 2.0, true);
    auto loss = sum_all(mul(x, x));
    backward(loss);
    for (std::int64_t i = 0; i < x->numel(); ++i) {
        EXPECT_NEAR(x->grad[i], 2.0 * x->data[i], 1e-12);
    }
}

TEST(Backward, LinearMapGradIsColumnSums) {
    // loss = sum(A x) => dloss/dx = A^T 1
    auto A = make<double>({2, 3}, {1, 2, 3, 4, 5, 6});
    auto x = make<double>({3, 1}, {0.5, -1.0, 2.0}, true);
    auto loss = sum_all(matmul(A, x));
    backward(loss);
    EXPECT_NEAR(x->grad[0], 5.0, 1e-12);
    EXPECT_NEAR(x->grad[1], 7.0, 1e-12);
    EXPECT_NEAR(x->grad[2], 9.0, 1e-12);
}

TEST(Backward, UntrackedLeafHasNoGrad) {
    auto x = Tensor<double>::full({3}, 2.0);  // not tracked
    auto y = Tensor<double>::full({3}, 3.0, true);
    auto loss = sum_all(mul(x, y));
    backward(loss);
    EXPECT_TRUE(x->grad.empty());
    ASSERT_EQ(y->grad.size(), 3u);
}

TEST(Backward, SecondCallDoublesLeafGradients) {
    auto x = make<double>({2}, {1.0, -2.0}, true);
    auto loss = sum_all(mul(x, x));
    backward(loss);
    std::vector<double> g1 = x->grad;
    backward(loss);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(x->grad[i], 2.0 * g1[i], 1e-12);
}

TEST(Backward, NonScalarRootRejected) {
    auto x = make<double>({2}, {1.0, 2.0}, true);
    auto y = mul(x, x);
    EXPECT_THROW(backward(y), UsageError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
    // loss = sum(x*x + x*x) = 2*sum(x^2) => grad 4x
    auto x = make<double>({3}, {1.0, 2.0, 3.0}, true);
    auto sq = mul(x, x);
    auto loss = sum_all(add(sq, sq));
    backward(loss);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(x->grad[i], 4.0 * x->data[i], 1e-12);
}

TEST(ShapeProperties, RandomShapeTuples) {
    Rng rng(31);
    for (int it = 0; it < 120; ++it) {
        // matmul: (m,k) x (k,n) -> (m,n)
        const std::int64_t m = 1 + rng.uniform_int(5), k = 1 + rng.uniform_int(5),
                           n = 1 + rng.uniform_int(5);
        EXPECT_EQ(matmul(Tensor<double>::zeros({m, k}), Tensor<double>::zeros({k, n}))->dims,
                  (Dims{m, n}));

        // conv2d shape formula
        const std::int64_t H = 2 + rng.uniform_int(8), W = 2 + rng.uniform_int(8);
        ConvSpec spec;
        spec.stride_h = 1 + rng.uniform_int(2);
        spec.stride_w = 1 + rng.uniform_int(2);
        spec.pad_h = rng.uniform_int(2);
        spec.pad_w = rng.uniform_int(2);
        const std::int64_t kh = 1 + rng.uniform_int(H + 2 * spec.pad_h);
        const std::int64_t kw = 1 + rng.uniform_int(W + 2 * spec.pad_w);
        auto y = conv2d(Tensor<double>::zeros({2, 3, H, W}), Tensor<double>::zeros({4, 3, kh, kw}),
                        spec);
        EXPECT_EQ(y->dims[2], (H + 2 * spec.pad_h - kh) / spec.stride_h + 1);
        EXPECT_EQ(y->dims[3], (W + 2 * spec.pad_w - kw) / spec.stride_w + 1);

        // concat along a random axis of rank-3 tensors
        const std::size_t axis = static_cast<std::size_t>(rng.uniform_int(3));
        Dims base{1 + rng.uniform_int(4), 1 + rng.uniform_int(4), 1 + rng.uniform_int(4)};
        Dims other = base;
        other[axis] = 1 + rng.uniform_int(4);
        auto c = concat<double>({Tensor<double>::zeros(base), Tensor<double>::zeros(other)}, axis);
        EXPECT_EQ(c->dims[axis], base[axis] + other[axis]);

        // permute shapes follow the permutation
        auto x = Tensor<double>::zeros({1 + rng.uniform_int(4), 1 + rng.uniform_int(4),
                                        1 + rng.uniform_int(4), 1 + rng.uniform_int(4)});
        std::vector<std::size_t> perm{0, 1, 2, 3};
        for (std::size_t i = 3; i > 0; --i) {
            std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
        }
        auto p = permute(x, perm);
        for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p->dims[i], x->dims[perm[i]]);

        // mean over a random axis drops it
        auto r = reduce_mean(x, {static_cast<std::size_t>(rng.uniform_int(4))});
        EXPECT_EQ(r->ndim(), 3u);
    }
}

TEST(ShapeProperties, FiniteAfterRandomOpChain) {
    Rng rng(37);
    for (int it = 0; it < 20; ++it) {
        auto x = random_tensor<double>({2, 3, 4, 5}, rng, -5.0, 5.0);
        auto w = random_tensor<double>({4, 3, 3, 1}, rng);
        ConvSpec spec;
        spec.pad_h = 1;
        auto y = relu(conv2d(x, w, spec));
        auto z = reduce_mean(add(y, y), {2, 3});
        auto s = softmax(z, 1);
        EXPECT_TRUE(all_finite(*s));
        EXPECT_TRUE(all_finite(*sum_all(s)));
    }
}

TEST(Permute, ValueContract) {
    // element (m,c,s,t) must land at (m,c,t,s)
    Rng rng(41);
    auto x = random_tensor<double>({2, 3, 4, 5}, rng);
    auto y = permute(x, {0, 1, 3, 2});
    for (std::int64_t m = 0; m < 2; ++m)
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t s = 0; s < 4; ++s)
                for (std::int64_t t = 0; t < 5; ++t) {
                    EXPECT_EQ(x->data[((m * 3 + c) * 4 + s) * 5 + t],
                              y->data[((m * 3 + c) * 5 + t) * 4 + s]);
                }
}

TEST(Reshape, RoundTrip) {
    Rng rng(43);
    auto x = random_tensor<double>({3, 4}, rng);
    auto y = reshape(reshape(x, {2, 6}), {3, 4});
    gftest::expect_tensors_equal(*x, *y);
    EXPECT_THROW(reshape(x, {5, 2}), ShapeError);
}
