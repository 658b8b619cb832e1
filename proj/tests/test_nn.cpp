#include <cmath>
#include <sstream>

#include "doctest.h"
#include "svkit/gradcheck_suite.hpp"
#include "svkit/layers.hpp"

using namespace svkit;
using namespace svkit::nn;

namespace {

template <typename T>
Tensor<T> filled(std::vector<int> shape, std::vector<T> values) {
  Tensor<T> t(std::move(shape));
  REQUIRE(t.numel() == values.size());
  t.values = std::move(values);
  return t;
}

}  // namespace

TEST_CASE("conv2d: identity kernel reproduces the input") {
  Rng rng(1);
  ParamStore<double> store;
  Conv2d<double> conv(store, "c", 2, 2, rng);
  // delta kernel: center tap (df=1, dt=1), ci == co
  auto& w = conv.weight()->tensor.values;
  std::fill(w.begin(), w.end(), 0.0);
  const int Cin = 2, Cout = 2;
  for (int c = 0; c < 2; ++c) w[size_t((1 * 3 + 1) * Cin + c) * Cout + c] = 1.0;

  Tensor<double> x({1, 4, 5, 2});
  Rng r2(2);
  for (auto& v : x.values) v = r2.normal();
  Tensor<double> y = conv.forward(x, false);
  REQUIRE(y.shape == x.shape);
  for (size_t i = 0; i < x.numel(); ++i) CHECK(y.values[i] == doctest::Approx(x.values[i]));
}

TEST_CASE("conv2d: 1x1 spatial input sees only the center tap") {
  Rng rng(3);
  ParamStore<double> store;
  Conv2d<double> conv(store, "c", 1, 1, rng);
  auto& w = conv.weight()->tensor.values;
  for (size_t i = 0; i < w.size(); ++i) w[i] = double(i + 1);  // distinct taps
  conv.bias()->tensor.values[0] = 0.25;

  Tensor<double> x = filled<double>({1, 1, 1, 1}, {2.0});
  Tensor<double> y = conv.forward(x, false);
  // center tap is index (df=1, dt=1) -> flat tap 4 -> weight value 5
  CHECK(y.values[0] == doctest::Approx(2.0 * 5.0 + 0.25));
}

TEST_CASE("conv2d: channel mismatch throws") {
  Rng rng(4);
  ParamStore<double> store;
  Conv2d<double> conv(store, "c", 3, 4, rng);
  Tensor<double> x({1, 4, 4, 2});
  CHECK_THROWS_AS(conv.forward(x, false), NnError);
}

TEST_CASE("maxpool_time hand cases") {
  MaxPoolTime<double> pool;
  // time series [1,5,2,2,9] -> [5,2], floor drops the 9
  Tensor<double> x = filled<double>({1, 1, 5, 1}, {1, 5, 2, 2, 9});
  Tensor<double> y = pool.forward(x, false);
  REQUIRE(y.shape == std::vector<int>({1, 1, 2, 1}));
  CHECK(y.values[0] == 5.0);
  CHECK(y.values[1] == 2.0);

  // 37 -> 18
  Tensor<double> z({2, 3, 37, 4});
  CHECK(pool.forward(z, false).dim(2) == 18);

  // constant input stays constant
  Tensor<double> c({1, 2, 6, 2});
  std::fill(c.values.begin(), c.values.end(), 3.3);
  for (double v : pool.forward(c, false).values) CHECK(v == 3.3);

  Tensor<double> too_short({1, 1, 1, 1});
  CHECK_THROWS_AS(pool.forward(too_short, false), NnError);
}

TEST_CASE("hetero_freq_maxpool hand case [1,3,2,4]") {
  HeteroFreqPool<double> pool;
  Tensor<double> x = filled<double>({1, 4, 1, 1}, {1, 3, 2, 4});
  Tensor<double> y = pool.forward(x, false);
  REQUIRE(y.shape == std::vector<int>({1, 2, 1, 3}));
  // all three branches give [3, 4] on this column
  for (int b = 0; b < 3; ++b) {
    CHECK(y.values[size_t(b)] == 3.0);
    CHECK(y.values[size_t(3 + b)] == 4.0);
  }
}

TEST_CASE("hetero_freq_maxpool shapes and edge cases") {
  HeteroFreqPool<double> pool;
  Tensor<double> x({2, 40, 5, 3});
  Rng rng(5);
  for (auto& v : x.values) v = rng.normal();
  Tensor<double> y = pool.forward(x, false);
  CHECK(y.shape == std::vector<int>({2, 20, 5, 9}));

  // constant input value v -> all outputs v (padding never wins)
  Tensor<double> c({1, 6, 2, 2});
  std::fill(c.values.begin(), c.values.end(), -7.5);
  for (double v : pool.forward(c, false).values) CHECK(v == -7.5);

  Tensor<double> odd({1, 5, 2, 1});
  CHECK_THROWS_AS(pool.forward(odd, false), NnError);
}

TEST_CASE("global average pool over time") {
  GlobalAvgPoolTime<double> pool;
  Tensor<double> x = filled<double>({1, 1, 3, 1}, {2, 4, 6});
  Tensor<double> y = pool.forward(x, false);
  REQUIRE(y.shape == std::vector<int>({1, 1, 1, 1}));
  CHECK(y.values[0] == doctest::Approx(4.0));

  // T = 1 is the identity
  Tensor<double> one = filled<double>({1, 2, 1, 1}, {1.5, -2.5});
  Tensor<double> y1 = pool.forward(one, false);
  CHECK(y1.values == one.values);

  // 10x18x512 -> 10x1x512
  Tensor<double> big({1, 10, 18, 512});
  CHECK(pool.forward(big, false).shape == std::vector<int>({1, 10, 1, 512}));
}

TEST_CASE("linear layer hand case") {
  Rng rng(6);
  ParamStore<double> store;
  Linear<double> fc(store, "fc", 2, 2, rng);
  fc.weight()->tensor.values = {1, 1, 0, 1};  // rows: [1,1], [0,1]
  fc.bias()->tensor.values = {0, 1};
  Tensor<double> x = filled<double>({1, 2}, {1, 2});
  Tensor<double> y = fc.forward(x, false);
  CHECK(y.values[0] == doctest::Approx(3.0));
  CHECK(y.values[1] == doctest::Approx(3.0));

  // identity weights, zero bias
  fc.weight()->tensor.values = {1, 0, 0, 1};
  fc.bias()->tensor.values = {0, 0};
  Tensor<double> y2 = fc.forward(x, false);
  CHECK(y2.values == x.values);

  Tensor<double> bad({1, 3});
  CHECK_THROWS_AS(fc.forward(bad, false), NnError);
}

TEST_CASE("relu and dropout") {
  Relu<double> relu;
  Tensor<double> x = filled<double>({1, 2}, {-3.0, 3.0});
  Tensor<double> y = relu.forward(x, false);
  CHECK(y.values[0] == 0.0);
  CHECK(y.values[1] == 3.0);

  Dropout<double> dp(0.5);
  Rng rng(7);
  Tensor<double> in({4, 50});
  for (auto& v : in.values) v = 1.0;

  // eval mode is an exact identity
  Tensor<double> ev = dp.forward(in, false, rng, false);
  CHECK(ev.values == in.values);

  // train mode: kept units scaled by 2, about half survive
  Tensor<double> tr = dp.forward(in, true, rng, false);
  int kept = 0;
  for (double v : tr.values) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 60);
  CHECK(kept < 140);

  CHECK_THROWS_AS(Dropout<double>(1.0), NnError);
}

TEST_CASE("batch norm statistics") {
  Rng rng(8);
  ParamStore<double> store;
  BatchNorm<double> bn(store, "bn", 3);
  bn.gamma()->tensor.values = {2.0, 0.5, 1.5};
  bn.beta()->tensor.values = {1.0, -1.0, 0.0};

  Tensor<double> x({8, 4, 5, 3});
  for (auto& v : x.values) v = rng.normal(2.0, 3.0);
  Tensor<double> y = bn.forward(x, true, false);

  const ptrdiff_t rows = ptrdiff_t(x.numel()) / 3;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (ptrdiff_t r = 0; r < rows; ++r) mean += y.values[size_t(r * 3 + c)];
    mean /= double(rows);
    for (ptrdiff_t r = 0; r < rows; ++r) {
      double d = y.values[size_t(r * 3 + c)] - mean;
      var += d * d;
    }
    var /= double(rows);
    CHECK(std::fabs(mean - bn.beta()->tensor.values[size_t(c)]) < 1e-5);
    CHECK(std::fabs(std::sqrt(var) - bn.gamma()->tensor.values[size_t(c)]) < 1e-3);
  }

  // batch of 1 in train mode is rejected
  Tensor<double> single({1, 4, 5, 3});
  CHECK_THROWS_AS(bn.forward(single, true, false), NnError);

  // eval mode uses running statistics and is deterministic
  Tensor<double> e1 = bn.forward(x, false, false);
  Tensor<double> e2 = bn.forward(x, false, false);
  CHECK(e1.values == e2.values);
}

TEST_CASE("softmax cross-entropy oracles") {
  // uniform logits -> ln K
  const int K = 11;
  Tensor<double> logits({3, K});
  std::fill(logits.values.begin(), logits.values.end(), 0.7);
  double loss = softmax_cross_entropy<double>(logits, {0, 5, 10});
  CHECK(loss == doctest::Approx(std::log(double(K))).epsilon(1e-6));

  // saturated correct logit -> ~0, no overflow
  Tensor<double> sat({1, 4});
  sat.values = {1000.0, 0.0, 0.0, 0.0};
  CHECK(softmax_cross_entropy<double>(sat, {0}) < 1e-6);
  CHECK(std::isfinite(softmax_cross_entropy<double>(sat, {1})));

  CHECK_THROWS_AS(softmax_cross_entropy<double>(sat, {4}), NnError);
  CHECK_THROWS_AS(softmax_cross_entropy<double>(sat, {-1}), NnError);
}

TEST_CASE("contrastive loss oracles") {
  const double m = 10.0;
  std::vector<double> a(6, 0.0), b(6, 0.0);

  // genuine with identical embeddings
  CHECK(contrastive_loss(a, b, 0, m) == 0.0);

  // genuine at distance 6 -> 3.0
  a.assign(6, 0.0);
  a[0] = 6.0;
  CHECK(contrastive_loss(a, b, 0, m) == doctest::Approx(3.0).epsilon(1e-12));

  // impostor at distance 4 with margin 10 -> 3.0
  a[0] = 4.0;
  CHECK(contrastive_loss(a, b, 1, m) == doctest::Approx(3.0).epsilon(1e-12));

  // impostor beyond the margin -> exactly 0
  a[0] = 12.0;
  CHECK(contrastive_loss(a, b, 1, m) == 0.0);
  a[0] = 10.0;
  CHECK(contrastive_loss(a, b, 1, m) == 0.0);

  // non-negative over random pairs
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    for (auto& v : a) v = rng.normal(0, 5);
    for (auto& v : b) v = rng.normal(0, 5);
    CHECK(contrastive_loss(a, b, int(rng.uniform_index(2)), m) >= 0.0);
  }

  std::vector<double> short_vec(3, 0.0);
  CHECK_THROWS_AS(contrastive_loss(a, short_vec, 0, m), NnError);
  CHECK_THROWS_AS(contrastive_loss(a, b, 0, 0.0), NnError);
}

TEST_CASE("sgd with momentum hand iteration") {
  ParamStore<double> store;
  auto* p = store.create("w", {1});
  p->tensor.values = {1.0};
  SgdMomentum<double> opt(0.9, 0.0);

  // g = 1: v = 1, w = 0.9; again: v = 1.9, w = 0.71
  p->tensor.ensure_grad();
  p->tensor.grad = {1.0};
  opt.step(store, 0.1);
  CHECK(p->tensor.values[0] == doctest::Approx(0.9).epsilon(1e-12));
  p->tensor.grad = {1.0};
  opt.step(store, 0.1);
  CHECK(p->tensor.values[0] == doctest::Approx(0.71).epsilon(1e-12));
}

TEST_CASE("sgd: zero gradient, zero decay leaves weights") {
  ParamStore<double> store;
  auto* p = store.create("w", {4});
  p->tensor.values = {1, 2, 3, 4};
  p->tensor.ensure_grad();
  SgdMomentum<double> opt(0.9, 0.0);
  opt.step(store, 0.1);
  CHECK(p->tensor.values == std::vector<double>({1, 2, 3, 4}));
}

TEST_CASE("sgd: frozen parameters and zero learning rate") {
  ParamStore<double> store;
  auto* frozen = store.create("f", {2}, /*trainable=*/false);
  frozen->tensor.values = {5.0, 6.0};
  frozen->tensor.ensure_grad();
  frozen->tensor.grad = {1.0, 1.0};

  auto* live = store.create("w", {2});
  live->tensor.values = {1.0, 1.0};
  live->tensor.ensure_grad();
  live->tensor.grad = {1.0, 1.0};

  SgdMomentum<double> opt(0.9, 0.0005);
  opt.step(store, 0.1);
  CHECK(frozen->tensor.values == std::vector<double>({5.0, 6.0}));
  CHECK(live->tensor.values[0] < 1.0);

  // alpha = 0 changes nothing even with gradients
  ParamStore<double> store2;
  auto* w = store2.create("w", {2});
  w->tensor.values = {1.0, 2.0};
  w->tensor.ensure_grad();
  w->tensor.grad = {3.0, 4.0};
  SgdMomentum<double> opt2(0.9, 0.0005);
  opt2.step(store2, 0.0);
  CHECK(w->tensor.values == std::vector<double>({1.0, 2.0}));
}

TEST_CASE("finite-difference gradcheck suite at 1e-4, 10 seeds") {
  std::ostringstream os;
  auto reports = run_gradcheck_suite(1e-4, 10, os);
  CHECK(suite_passed(reports, 1e-4));
  // every operator is listed by name
  const std::string text = os.str();
  for (const char* name :
       {"conv2d", "fully_connected", "batch_norm", "relu", "maxpool_time", "hetero_freq_maxpool",
        "avgpool_time_global", "dropout", "softmax_cross_entropy", "contrastive_loss"})
    CHECK(text.find(name) != std::string::npos);
}

TEST_CASE("gradcheck harness: linear map is exact, relu away from 0 is tight") {
  // f(x) = 3x summed: analytic gradient 3 everywhere
  std::vector<double> x = {0.4, -1.2, 2.0};
  std::vector<double> g = {3.0, 3.0, 3.0};
  auto loss = [&]() { return 3.0 * (x[0] + x[1] + x[2]); };
  auto rep = finite_diff_gradcheck("linear3x", {{"x", x.data(), g.data(), 3}}, loss);
  CHECK(rep.max_rel_error < 1e-9);

  Relu<double> relu;
  Tensor<double> in = filled<double>({1, 3}, {0.5, -0.5, 1.7});
  Tensor<double> proj = filled<double>({1, 3}, {1.0, 2.0, -1.0});
  auto rloss = [&]() {
    Tensor<double> out = relu.forward(in, false);
    double s = 0.0;
    for (size_t i = 0; i < 3; ++i) s += out.values[i] * proj.values[i];
    return s;
  };
  relu.forward(in, true);
  Tensor<double> dx = relu.backward(proj);
  auto rrep = finite_diff_gradcheck("relu_probe",
                                    {{"x", in.values.data(), dx.values.data(), 3}}, rloss);
  CHECK(rrep.max_rel_error < 1e-6);
}
