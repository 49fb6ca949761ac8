#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stylekernel/tensor.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"

using sk::Tensor;
using sk::TensorD;

namespace {

template <typename S>
sk::TensorT<S> random_tensor(sk::Shape shape, std::mt19937_64& rng, S scale = S(1)) {
    return sk::TensorT<S>::randn(std::move(shape), rng, scale);
}

template <typename S>
S max_abs_diff(const std::vector<S>& a, const std::vector<S>& b) {
    REQUIRE(a.size() == b.size());
    S worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace

TEST_CASE("elementwise basics") {
    auto a = Tensor::from({2}, {1, 2});
    auto b = Tensor::from({2}, {3, 4});
    auto s = sk::add(a, b);
    CHECK(s.data() == std::vector<float>{4, 6});

    auto r = sk::relu(Tensor::from({2}, {-1, 2}));
    CHECK(r.data() == std::vector<float>{0, 2});

    auto sg = sk::sign(Tensor::from({3}, {-2, 0, 3}));
    CHECK(sg.data() == std::vector<float>{0, 0, 1});

    CHECK_THROWS_WITH_AS(sk::add(Tensor::zeros({2, 3}), Tensor::zeros({4})),
                         doctest::Contains("[2,3]"), std::runtime_error);
}

TEST_CASE("scalar broadcasting") {
    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto y = sk::mul(a, 2.0f);
    CHECK(y.data() == std::vector<float>{2, 4, 6, 8});
    auto z = sk::sub(1.0f, a);
    CHECK(z.data() == std::vector<float>{0, -1, -2, -3});
}

TEST_CASE("matmul identity and small case") {
    auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(sk::matmul(eye, m).data() == m.data());

    auto a = Tensor::from({1, 2}, {1, 0});
    auto b = Tensor::from({2, 1}, {2, 5});
    CHECK(sk::matmul(a, b).value() == 2.0f);

    CHECK_THROWS_AS(sk::matmul(Tensor::zeros({3, 4}), Tensor::zeros({5, 2})),
                    std::runtime_error);
}

TEST_CASE("matmul agrees with triple-loop oracle") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 10; ++rep) {
        const int M = 3, K = 4, N = 2;
        auto a = random_tensor<float>({M, K}, rng);
        auto b = random_tensor<float>({K, N}, rng);
        auto got = sk::matmul(a, b);
        auto ref = oracle::matmul(a.data(), b.data(), M, K, N);
        CHECK(max_abs_diff(got.data(), ref) < 1e-6f);
    }
}

TEST_CASE("softmax rows: symmetry, stability, row sums") {
    auto u = sk::softmax_rows(Tensor::from({1, 2}, {0, 0}));
    CHECK(u.at({0, 0}) == doctest::Approx(0.5));

    auto big = sk::softmax_rows(Tensor::from({1, 2}, {1000, 0}));
    CHECK(std::isfinite(big.at({0, 0})));
    CHECK(big.at({0, 0}) == doctest::Approx(1.0));
    CHECK(big.at({0, 1}) == doctest::Approx(0.0));

    std::mt19937_64 rng(5);
    auto x = random_tensor<float>({4, 7}, rng, 3.0f);
    auto y = sk::softmax_rows(x);
    for (int i = 0; i < 4; ++i) {
        float s = 0;
        for (int j = 0; j < 7; ++j) s += y.at({i, j});
        CHECK(std::abs(s - 1.0f) < 1e-5f);
    }
}

TEST_CASE("softmax rows: permutation equivariance over columns") {
    std::mt19937_64 rng(17);
    auto x = random_tensor<float>({3, 6}, rng, 2.0f);
    std::vector<int> perm{4, 2, 0, 5, 1, 3};
    std::vector<float> px(x.numel());
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 6; ++j) px[i * 6 + j] = x.at({i, perm[j]});
    auto y = sk::softmax_rows(x);
    auto py = sk::softmax_rows(Tensor::from({3, 6}, px));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 6; ++j)
            CHECK(py.at({i, j}) == doctest::Approx(y.at({i, perm[j]})).epsilon(1e-6));
}

TEST_CASE("conv2d pointwise identity and all-ones kernel") {
    auto x = Tensor::from({2, 2, 1}, {1, 2, 3, 4});
    auto w = Tensor::from({1, 1, 1, 1}, {1});
    auto b = Tensor::zeros({1});
    CHECK(sk::conv2d(x, w, b).data() == x.data());

    auto ones_x = Tensor::full({5, 5, 1}, 1.0f);
    auto ones_w = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto y = sk::conv2d(ones_x, ones_w, b, 1, 1);
    CHECK(y.dim(0) == 5);
    CHECK(y.at({2, 2, 0}) == 9.0f);
    CHECK(y.at({0, 0, 0}) == 4.0f);
}

TEST_CASE("conv2d agrees with six-loop oracle") {
    std::mt19937_64 rng(23);
    struct Case {
        int H, W, Cin, Cout, k, stride, pad;
    };
    for (Case cs : {Case{6, 5, 3, 4, 3, 1, 1}, Case{8, 8, 2, 3, 3, 2, 1}, Case{5, 7, 4, 2, 1, 1, 0},
                    Case{9, 6, 1, 5, 5, 2, 2}}) {
        auto x = random_tensor<float>({cs.H, cs.W, cs.Cin}, rng);
        auto w = random_tensor<float>({cs.Cout, cs.Cin, cs.k, cs.k}, rng);
        auto b = random_tensor<float>({cs.Cout}, rng);
        auto got = sk::conv2d(x, w, b, cs.stride, cs.pad);
        auto ref = oracle::conv2d(x.data(), w.data(), b.data(), cs.H, cs.W, cs.Cin, cs.Cout,
                                  cs.k, cs.k, cs.stride, cs.pad);
        CHECK(max_abs_diff(got.data(), ref) < 1e-5f);
    }
}

TEST_CASE("conv2d rejects bad geometry") {
    CHECK_THROWS_WITH_AS(
        sk::conv2d(Tensor::zeros({4, 4, 3}), Tensor::zeros({2, 5, 3, 3}), Tensor::zeros({2})),
        doctest::Contains("channels"), std::runtime_error);
    CHECK_THROWS_WITH_AS(
        sk::conv2d(Tensor::zeros({2, 2, 1}), Tensor::zeros({1, 1, 5, 5}), Tensor::zeros({1})),
        doctest::Contains("nonpositive"), std::runtime_error);
}

TEST_CASE("upsample nearest 2x") {
    auto x = Tensor::from({2, 2, 1}, {1, 2, 3, 4});
    auto y = sk::upsample_nearest2x(x);
    CHECK(y.shape() == sk::Shape{4, 4, 1});
    CHECK(y.data() == std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});

    std::mt19937_64 rng(3);
    auto r = random_tensor<float>({3, 5, 4}, rng);
    auto u = sk::upsample_nearest2x(r);
    CHECK(u.dim(2) == 4);
    CHECK(sk::sum(u).value() == doctest::Approx(4.0 * sk::sum(r).value()).epsilon(1e-5));
}

TEST_CASE("instance norm stats") {
    auto c5 = Tensor::full({3, 3, 1}, 5.0f);
    auto [mu, sigma] = sk::instance_norm_stats(c5);
    CHECK(mu.value() == doctest::Approx(5.0f));
    CHECK(sigma.value() == doctest::Approx(1e-5f));

    auto pm = Tensor::from({1, 2, 1}, {-1, 1});
    auto [mu2, sg2] = sk::instance_norm_stats(pm);
    CHECK(mu2.value() == doctest::Approx(0.0f));
    CHECK(sg2.value() == doctest::Approx(1.0f));

    std::mt19937_64 rng(9);
    auto x = random_tensor<float>({6, 7, 3}, rng, 2.0f);
    auto xn = sk::instance_normalize(x);
    auto [m3, s3] = sk::instance_norm_stats(xn);
    for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(m3.data()[c]) < 1e-5f);
        CHECK(s3.data()[c] == doctest::Approx(1.0f).epsilon(1e-4));
    }
}

TEST_CASE("maxpool 2x2") {
    auto x = Tensor::from({2, 2, 1}, {1, 5, 2, 3});
    auto y = sk::maxpool2x2(x);
    CHECK(y.value() == 5.0f);
}

TEST_CASE("backward: analytic toy cases") {
    auto x = Tensor::from({3}, {1, 2, 3});
    x.set_requires_grad(true);
    auto loss = sk::sum(sk::mul(x, x));
    sk::backward(loss);
    CHECK(x.grad() == std::vector<float>{2, 4, 6});

    auto x2 = Tensor::from({2}, {-1, 2});
    x2.set_requires_grad(true);
    sk::backward(sk::sum(sk::relu(x2)));
    CHECK(x2.grad() == std::vector<float>{0, 1});
}

TEST_CASE("backward: fan-out accumulates additively") {
    auto x = Tensor::from({2}, {1.5f, -0.5f});
    x.set_requires_grad(true);

    auto both = sk::add(sk::sum(sk::mul(x, x)), sk::sum(sk::mul(x, 3.0f)));
    sk::backward(both);
    auto g_both = x.grad();

    x.zero_grad();
    sk::backward(sk::sum(sk::mul(x, x)));
    auto g1 = x.grad();
    x.zero_grad();
    sk::backward(sk::sum(sk::mul(x, 3.0f)));
    auto g2 = x.grad();

    for (std::size_t i = 0; i < g_both.size(); ++i)
        CHECK(g_both[i] == doctest::Approx(g1[i] + g2[i]));
}

TEST_CASE("backward: untouched leaves report zero grad") {
    auto x = Tensor::from({2}, {1, 2});
    auto y = Tensor::from({2}, {3, 4});
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    sk::backward(sk::sum(x));
    CHECK(y.grad() == std::vector<float>{0, 0});
}

TEST_CASE("backward rejects non-scalar roots") {
    auto x = Tensor::from({2}, {1, 2});
    x.set_requires_grad(true);
    auto y = sk::mul(x, x);
    CHECK_THROWS_WITH_AS(sk::backward(y), doctest::Contains("scalar"), std::runtime_error);
}

TEST_CASE("grad_check: linear function is exact") {
    std::mt19937_64 rng(2);
    auto x = random_tensor<double>({5}, rng);
    double err = sk::grad_check<double>(
        [](const TensorD& t) { return sk::sum(sk::mul(t, 3.0)); }, x);
    CHECK(err < 1e-9);
}

TEST_CASE("grad_check: elementwise and reduction ops") {
    std::mt19937_64 rng(7);
    for (int seed = 0; seed < 20; ++seed) {
        auto x = random_tensor<double>({3, 4}, rng, 1.5);
        auto y = random_tensor<double>({3, 4}, rng, 1.5);

        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::mul(t, sk::tanh(y))); }, x) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::mean(sk::mul(sk::exp(sk::mul(t, 0.3)), y)); },
                  x) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) {
                      return sk::sum(sk::div(t, sk::add(sk::mul(y, y), 1.0)));
                  },
                  x) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::maximum(t, y)); }, x) < 1e-4);
    }
}

TEST_CASE("grad_check: softmax composite") {
    std::mt19937_64 rng(13);
    for (int seed = 0; seed < 20; ++seed) {
        auto x = random_tensor<double>({3, 5}, rng, 2.0);
        auto w = random_tensor<double>({3, 5}, rng);
        double err = sk::grad_check<double>(
            [&](const TensorD& t) { return sk::sum(sk::mul(sk::softmax_rows(t), w)); }, x);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("grad_check: matmul, transpose, reshape, slicing") {
    std::mt19937_64 rng(29);
    for (int seed = 0; seed < 20; ++seed) {
        auto x = random_tensor<double>({3, 4}, rng);
        auto b = random_tensor<double>({4, 2}, rng);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::matmul(t, b)); }, x) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) {
                      return sk::sum(sk::matmul(sk::transpose(t), sk::mul(t, 0.5)));
                  },
                  x) < 1e-4);

        auto m = random_tensor<double>({2, 3, 4}, rng);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) {
                      auto lo = sk::slice_channels(t, 0, 2);
                      auto hi = sk::slice_channels(t, 2, 4);
                      return sk::sum(sk::mul(sk::concat_channels<double>({hi, lo}), 2.0));
                  },
                  m) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) {
                      return sk::sum(sk::mul(sk::reshape(t, {4, 6}), 1.5));
                  },
                  m) < 1e-4);
    }
}

TEST_CASE("grad_check: conv2d, pooling, upsampling") {
    std::mt19937_64 rng(31);
    for (int seed = 0; seed < 20; ++seed) {
        auto x = random_tensor<double>({4, 4, 2}, rng);
        auto w = random_tensor<double>({3, 2, 3, 3}, rng);
        auto b = random_tensor<double>({3}, rng);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::conv2d(t, w, b, 1, 1)); }, x) <
              1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::conv2d(x, t, b, 1, 1)); }, w) <
              1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::conv2d(x, w, t, 2, 1)); }, b) <
              1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::mean(sk::upsample_nearest2x(t)); }, x) <
              1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) {
                      return sk::sum(sk::mul(sk::maxpool2x2(t), 0.7));
                  },
                  x) < 1e-4);
    }
}

TEST_CASE("grad_check: channel statistics and normalization") {
    std::mt19937_64 rng(37);
    for (int seed = 0; seed < 20; ++seed) {
        auto x = random_tensor<double>({3, 4, 2}, rng, 1.5);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::channel_mean(t)); }, x) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::channel_std(t)); }, x) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) {
                      return sk::mean(sk::mul(sk::instance_normalize(t), t));
                  },
                  x) < 1e-4);
    }
}

TEST_CASE("grad_check: row operations") {
    std::mt19937_64 rng(41);
    for (int seed = 0; seed < 20; ++seed) {
        auto x = random_tensor<double>({4, 5}, rng, 2.0);
        auto v = random_tensor<double>({4}, rng);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::scale_rows(t, v)); }, x) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::mul(sk::shift_rows(x, t), x)); },
                  v) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) {
                      return sk::sum(sk::mul(sk::normalize_rows(t, 1e-8), v.numel() == 4
                                                                              ? sk::transpose(x)
                                                                              : x));
                  },
                  sk::TensorD::randn({5, 4}, rng)) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::min_rows(t)); }, x) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::sum(sk::min_cols(t)); }, x) < 1e-4);
        CHECK(sk::grad_check<double>(
                  [&](const TensorD& t) { return sk::mean(sk::row_mean(t)); }, x) < 1e-4);
    }
}

TEST_CASE("no-grad mode records nothing") {
    auto x = Tensor::from({2}, {1, 2});
    x.set_requires_grad(true);
    sk::NoGrad ng;
    auto y = sk::sum(sk::mul(x, x));
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite outputs on bounded random inputs") {
    std::mt19937_64 rng(43);
    for (int rep = 0; rep < 5; ++rep) {
        auto x = Tensor::uniform({4, 4, 3}, rng, -3.0f, 3.0f);
        auto w = Tensor::uniform({2, 3, 3, 3}, rng, -3.0f, 3.0f);
        auto b = Tensor::uniform({2}, rng, -3.0f, 3.0f);
        for (float v : sk::conv2d(x, w, b, 1, 1).data()) CHECK(std::isfinite(v));
        for (float v : sk::softmax_rows(sk::reshape(x, {8, 6})).data()) CHECK(std::isfinite(v));
        for (float v : sk::instance_normalize(x).data()) CHECK(std::isfinite(v));
        for (float v : sk::exp(Tensor::uniform({5}, rng, -3.0f, 3.0f)).data())
            CHECK(std::isfinite(v));
    }
}
