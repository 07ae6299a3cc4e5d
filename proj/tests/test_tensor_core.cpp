#include <doctest.h>

#include <cmath>
#include <numbers>

#include "earu/ops.hpp"
#include "support.hpp"

using namespace earu;
using earu::test::fd_check;
using earu::test::random_tensor;

namespace {

ConvParams<double> conv_params(std::mt19937_64& gen, std::size_t in_c, std::size_t out_c, std::size_t k,
                               std::size_t stride, std::size_t pad, std::size_t groups, bool bias) {
  ConvParams<double> p;
  p.weight = random_tensor<double>(Shape{out_c, in_c / groups, k, k}, gen);
  if (bias) p.bias = random_tensor<double>(Shape{out_c, 1, 1, 1}, gen);
  p.stride = stride;
  p.padding = pad;
  p.groups = groups;
  return p;
}

Tensor<double> ones_like(const Tensor<double>& t) { return Tensor<double>(t.shape(), 1.0); }

}  // namespace

TEST_CASE("tensor indexing and elementwise helpers") {
  Tensor<float> t(Shape{2, 3, 4, 5});
  CHECK(t.numel() == 120);
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t[119] == 7.0f);
  CHECK(t.index(1, 0, 0, 0) == 60);
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
  CHECK_THROWS_AS(t.reshaped(Shape{1, 1, 1, 7}), ShapeError);

  Tensor<float> a(Shape{1, 2, 1, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor<float> b(Shape{1, 1, 1, 2}, std::vector<float>{5, 6});
  const auto cat = concat_channels(a, b);
  CHECK(cat.shape() == Shape{1, 3, 1, 2});
  CHECK(cat.storage() == std::vector<float>{1, 2, 3, 4, 5, 6});
  const auto [ga, gb] = split_channels(cat, 2);
  CHECK(ga.storage() == a.storage());
  CHECK(gb.storage() == b.storage());
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK(add(a, a).storage() == std::vector<float>{2, 4, 6, 8});

  std::vector<Tensor<float>> parts{a, a};
  const auto stacked = concat_batch<float>(parts);
  CHECK(stacked.shape() == Shape{2, 2, 1, 2});
  CHECK(slice_batch(stacked, 1, 1).storage() == a.storage());

  t.grad()[0] = 1.0f;
  t.accumulate_grad(std::vector<float>(120, 0.5f));
  CHECK(t.grad()[0] == 1.5f);
  t.drop_grad();
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("conv2d matches hand-computed 3x3 example") {
  // 3x3 input 1..9, all-ones 3x3 kernel, padding 1: each output is the sum of
  // its in-bounds neighbourhood.
  Tensor<double> x(Shape{1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  ConvParams<double> p;
  p.weight = Tensor<double>(Shape{1, 1, 3, 3}, 1.0);
  p.padding = 1;
  const auto y = conv2d(x, p);
  CHECK(y.storage() == std::vector<double>{12, 21, 16, 27, 45, 33, 24, 39, 28});
  p.stride = 2;
  CHECK(conv2d(x, p).storage() == std::vector<double>{12, 16, 24, 28});
}

TEST_CASE("conv2d, grouped and depthwise agree with the nested-loop oracle") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t groups = trial % 3 == 0 ? 1 : (trial % 3 == 1 ? dim(gen) : 0);
    std::size_t in_c, out_c, g;
    if (groups == 0) {  // depthwise
      in_c = out_c = g = dim(gen);
    } else {
      g = groups;
      in_c = g * ((dim(gen) + g - 1) / g);
      out_c = g * ((dim(gen) + g - 1) / g);
      if (in_c > 6) in_c = g;
      if (out_c > 6) out_c = g;
    }
    const std::size_t k = std::vector<std::size_t>{1, 3, 5}[trial % 3];
    const std::size_t h = std::max(k, dim(gen)), w = std::max(k, dim(gen));
    const std::size_t stride = 1 + trial % 2, pad = k / 2;
    auto x = random_tensor<float>(Shape{1 + std::size_t(trial % 2), in_c, h, w}, gen);
    ConvParams<float> p;
    p.weight = random_tensor<float>(Shape{out_c, in_c / g, k, k}, gen);
    if (trial % 2) p.bias = random_tensor<float>(Shape{out_c, 1, 1, 1}, gen);
    p.stride = stride;
    p.padding = pad;
    p.groups = g;
    const auto y = conv2d(x, p);
    const auto ref = earu::test::naive_conv(x, p.weight, p.bias ? &*p.bias : nullptr, stride, pad, g);
    REQUIRE(y.shape() == ref.shape());
    CHECK(earu::test::max_abs_diff(y, ref) <= 1e-5);
  }
}

TEST_CASE("conv2d rejects inconsistent configurations") {
  ConvParams<float> p;
  p.weight = Tensor<float>(Shape{3, 1, 3, 3});
  p.groups = 2;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.groups = 1;
  CHECK_THROWS_AS(conv2d(Tensor<float>(Shape{1, 2, 4, 4}), p), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor<float>(Shape{1, 1, 2, 2}), p), ShapeError);
  p.bias = Tensor<float>(Shape{2, 1, 1, 1});
  CHECK_THROWS_AS(conv2d(Tensor<float>(Shape{1, 1, 4, 4}), p), ShapeError);
}

TEST_CASE("conv2d backward matches finite differences") {
  std::mt19937_64 gen(3);
  struct Case {
    std::size_t in_c, out_c, k, stride, groups;
    bool bias;
  };
  for (const Case c : {Case{2, 3, 3, 1, 1, true}, Case{4, 4, 3, 2, 4, false}, Case{4, 6, 1, 1, 2, true},
                       Case{3, 3, 5, 2, 3, true}}) {
    auto x = random_tensor<double>(Shape{2, c.in_c, 5, 6}, gen);
    auto p = conv_params(gen, c.in_c, c.out_c, c.k, c.stride, c.k / 2, c.groups, c.bias);
    const auto y = conv2d(x, p);
    const auto r = random_tensor<double>(y.shape(), gen);
    const auto g = conv2d_backward(x, p, r);
    std::vector<Tensor<double>*> in{&x, &p.weight};
    std::vector<std::vector<double>> an{g.grad_x.storage(), g.grad_weight.storage()};
    if (c.bias) {
      in.push_back(&*p.bias);
      an.push_back(g.grad_bias->storage());
    }
    const auto res = fd_check(in, [&] { return conv2d(x, p); }, r, an);
    CHECK(res.max_error < 1e-5);
  }
}

TEST_CASE("batchnorm train mode normalises and updates running statistics") {
  Tensor<double> x(Shape{2, 1, 1, 2}, std::vector<double>{1, 2, 3, 4});
  auto s = BatchNormState<double>::identity(1, 0.0, 0.1);
  const auto y = batchnorm2d(x, s, Mode::train);
  // mean 2.5, biased var 1.25, unbiased var 5/3.
  const double is = 1.0 / std::sqrt(1.25);
  CHECK(y[0] == doctest::Approx(-1.5 * is).epsilon(1e-12));
  CHECK(y[3] == doctest::Approx(1.5 * is).epsilon(1e-12));
  CHECK(s.running_mean[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.running_var[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0).epsilon(1e-12));

  s.gamma[0] = 2.0;
  s.beta[0] = 1.0;
  s.running_mean[0] = 1.0;
  s.running_var[0] = 4.0;
  const auto yi = batchnorm2d(x, s, Mode::infer);
  CHECK(yi[2] == doctest::Approx(2.0 * (3.0 - 1.0) / 2.0 + 1.0));
  CHECK(s.running_mean[0] == 1.0);

  Tensor<double> single(Shape{1, 1, 1, 1}, 3.0);
  CHECK_THROWS_AS(batchnorm2d(single, s, Mode::train), DegenerateBatchError);
  CHECK_NOTHROW(batchnorm2d(single, s, Mode::infer));
  CHECK_THROWS_AS(batchnorm2d(Tensor<double>(Shape{1, 2, 2, 2}), s, Mode::infer), ShapeError);
}

TEST_CASE("batchnorm backward matches finite differences") {
  std::mt19937_64 gen(5);
  auto x = random_tensor<double>(Shape{2, 3, 3, 2}, gen);
  auto s = BatchNormState<double>::identity(3);
  s.gamma = random_tensor<double>(Shape{3, 1, 1, 1}, gen, 0.5, 1.5);
  s.beta = random_tensor<double>(Shape{3, 1, 1, 1}, gen);
  BatchNormCache<double> cache;
  const auto y = batchnorm2d(x, s, Mode::train, &cache);
  const auto r = random_tensor<double>(y.shape(), gen);
  const auto g = batchnorm2d_backward(s, cache, r);
  auto f = [&] {
    auto tmp = s;
    return batchnorm2d(x, tmp, Mode::train);
  };
  const auto res = fd_check({&x, &s.gamma, &s.beta}, f, r,
                            {g.grad_x.storage(), g.grad_gamma.storage(), g.grad_beta.storage()});
  CHECK(res.max_error < 1e-5);

  BatchNormCache<double> icache;
  batchnorm2d(x, s, Mode::infer, &icache);
  const auto gi = batchnorm2d_backward(s, icache, r);
  auto fi = [&] {
    auto tmp = s;
    return batchnorm2d(x, tmp, Mode::infer);
  };
  CHECK(fd_check({&x}, fi, r, {gi.grad_x.storage()}).max_error < 1e-5);
}

TEST_CASE("activations: values and derivatives") {
  Tensor<double> x(Shape{1, 1, 1, 4}, std::vector<double>{-2.0, -0.5, 0.7, 3.0});
  const auto relu = activate(x, Activation::relu);
  CHECK(relu.storage() == std::vector<double>{0, 0, 0.7, 3.0});
  const auto sw = activate(x, Activation::swish);
  CHECK(sw[2] == doctest::Approx(0.7 / (1 + std::exp(-0.7))).epsilon(1e-14));
  const auto sg = activate(x, Activation::sigmoid);
  CHECK(sg[0] == doctest::Approx(1 / (1 + std::exp(2.0))).epsilon(1e-14));
  CHECK(sigmoid(0.0) == 0.5);

  Tensor<float> big(Shape{1, 1, 1, 2}, std::vector<float>{100.0f, -200.0f});
  const auto sb = activate(big, Activation::sigmoid);
  CHECK(sb[0] < 1.0f);
  CHECK(sb[1] > 0.0f);

  std::mt19937_64 gen(8);
  for (auto kind : {Activation::relu, Activation::swish, Activation::sigmoid}) {
    auto in = random_tensor<double>(Shape{2, 2, 3, 3}, gen, -3, 3);
    // Keep relu inputs away from the kink.
    for (auto& v : in.values())
      if (std::fabs(v) < 0.05) v += 0.1;
    const auto r = random_tensor<double>(in.shape(), gen);
    const auto g = activate_backward(in, r, kind);
    CHECK(fd_check({&in}, [&] { return activate(in, kind); }, r, {g.storage()}).max_error < 1e-5);
  }
}

TEST_CASE("global average pooling and its gradient") {
  Tensor<double> x(Shape{1, 2, 1, 2}, std::vector<double>{1, 3, -2, 6});
  const auto y = global_avg_pool(x);
  CHECK(y.storage() == std::vector<double>{2, 2});
  std::mt19937_64 gen(9);
  auto in = random_tensor<double>(Shape{2, 3, 4, 3}, gen);
  const auto r = random_tensor<double>(Shape{2, 3, 1, 1}, gen);
  const auto g = global_avg_pool_backward(in.shape(), r);
  CHECK(fd_check({&in}, [&] { return global_avg_pool(in); }, r, {g.storage()}).max_error < 1e-5);
}

TEST_CASE("bilinear 2x upsampling uses half-pixel centres") {
  Tensor<double> x(Shape{1, 1, 1, 2}, std::vector<double>{0, 4});
  const auto y = upsample_bilinear_2x(x);
  REQUIRE(y.shape() == Shape{1, 1, 2, 4});
  // Source x coordinates -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
  CHECK(y.storage() == std::vector<double>{0, 1, 3, 4, 0, 1, 3, 4});
  Tensor<double> c(Shape{1, 1, 3, 3}, 5.0);
  const auto up = upsample_bilinear_2x(c);
  for (double v : up.values()) CHECK(v == 5.0);

  std::mt19937_64 gen(10);
  auto in = random_tensor<double>(Shape{2, 2, 3, 2}, gen);
  const auto r = random_tensor<double>(Shape{2, 2, 6, 4}, gen);
  const auto g = upsample_bilinear_2x_backward(in.shape(), r);
  CHECK(fd_check({&in}, [&] { return upsample_bilinear_2x(in); }, r, {g.storage()}).max_error < 1e-5);
}

TEST_CASE("linear layer values and gradients") {
  LinearParams<double> p{Tensor<double>(Shape{1, 1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}),
                         Tensor<double>(Shape{3, 1, 1, 1}, std::vector<double>{0.5, 0, -1})};
  Tensor<double> x(Shape{1, 2, 1, 1}, std::vector<double>{1, -1});
  CHECK(linear(x, p).storage() == std::vector<double>{-2.5, -3, -4});
  CHECK_THROWS_AS(linear(Tensor<double>(Shape{1, 3, 1, 1}), p), ShapeError);

  std::mt19937_64 gen(12);
  auto in = random_tensor<double>(Shape{3, 4, 1, 1}, gen);
  LinearParams<double> q{random_tensor<double>(Shape{1, 1, 4, 2}, gen), random_tensor<double>(Shape{2, 1, 1, 1}, gen)};
  const auto r = random_tensor<double>(Shape{3, 2, 1, 1}, gen);
  const auto g = linear_backward(in, q, r);
  const auto res = fd_check({&in, &q.weight, &q.bias}, [&] { return linear(in, q); }, r,
                            {g.grad_x.storage(), g.grad_weight.storage(), g.grad_bias.storage()});
  CHECK(res.max_error < 1e-5);
}

TEST_CASE("drop-connect drops whole samples and rescales survivors") {
  Tensor<double> x(Shape{400, 1, 1, 2}, 1.0);
  Rng rng(4);
  std::vector<double> scales;
  const auto y = drop_connect(x, 0.75, Mode::train, rng, &scales);
  std::size_t kept = 0;
  for (std::size_t n = 0; n < 400; ++n) {
    CHECK(y[2 * n] == y[2 * n + 1]);
    if (y[2 * n] != 0.0) {
      ++kept;
      CHECK(y[2 * n] == doctest::Approx(1.0 / 0.75));
    }
  }
  CHECK(kept > 260);
  CHECK(kept < 340);
  const auto g = drop_connect_backward(ones_like(y), scales);
  CHECK(g.storage() == y.storage());

  Rng r2(4);
  const auto inf = drop_connect(x, 0.5, Mode::infer, r2);
  CHECK(inf.storage() == x.storage());
  CHECK(r2 == Rng(4));
  CHECK_THROWS_AS(drop_connect(x, 0.0, Mode::train, r2), ParameterError);
  CHECK_THROWS_AS(drop_connect(x, 1.5, Mode::train, r2), ParameterError);
}

TEST_CASE("rng state round trip and integer draws") {
  Rng a(99);
  a.uniform();
  const auto st = a.state();
  Rng b(1);
  b.set_state(st);
  CHECK(a.uniform() == b.uniform());
  for (int i = 0; i < 100; ++i) CHECK(a.below(7) < 7);
  CHECK_THROWS_AS(a.below(0), ParameterError);
  double sum = 0, sq = 0;
  for (int i = 0; i < 20000; ++i) {
    const double v = a.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::fabs(sum / 20000) < 0.05);
  CHECK(std::fabs(sq / 20000 - 1.0) < 0.05);
}
