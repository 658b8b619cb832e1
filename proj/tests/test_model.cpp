#include <cmath>

#include "doctest.h"
#include "svkit/gradcheck.hpp"
#include "svkit/model.hpp"

using namespace svkit;

namespace {

VerifierConfig toy_config(int n_classes) {
  VerifierConfig cfg;
  cfg.n_classes = n_classes;
  return cfg;
}

Tensor<Scalar> random_input(int n, int t, uint64_t seed) {
  Tensor<Scalar> x({n, 40, t, 3});
  Rng rng(seed);
  for (auto& v : x.values) v = Scalar(rng.normal());
  return x;
}

Tensor<Scalar> random_prosody(int n, uint64_t seed) {
  Tensor<Scalar> p({n, 18});
  Rng rng(seed);
  for (auto& v : p.values) v = Scalar(rng.normal());
  return p;
}

}  // namespace

TEST_CASE("a 40x300x3 input traces every Table-1 output shape") {
  Verifier verifier(toy_config(2), 7);
  Rng rng(0);
  std::vector<std::vector<int>> trace;
  Tensor<Scalar> x = random_input(1, 300, 3);
  Tensor<Scalar> f7 = verifier.tower().cnn_forward(x, false, rng, false, &trace);

  const std::vector<std::vector<int>> expected = {
      {1, 40, 300, 64}, {1, 40, 150, 64}, {1, 40, 150, 128}, {1, 40, 75, 128}, {1, 20, 75, 384},
      {1, 20, 75, 256}, {1, 20, 37, 256}, {1, 20, 37, 256},  {1, 20, 18, 256}, {1, 10, 18, 768},
      {1, 10, 18, 512}, {1, 10, 1, 512},  {1, 1024},         {1, 128},
  };
  REQUIRE(trace.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i) CHECK(trace[i] == expected[i]);
  CHECK(f7.shape == std::vector<int>({1, 128}));
}

TEST_CASE("same seed builds bit-identical weights") {
  Verifier a(toy_config(3), 123);
  Verifier b(toy_config(3), 123);
  REQUIRE(a.store().size() == b.store().size());
  for (size_t i = 0; i < a.store().size(); ++i) {
    CHECK(a.store().at(i)->name == b.store().at(i)->name);
    CHECK(a.store().at(i)->tensor.values == b.store().at(i)->tensor.values);
  }
  Verifier c(toy_config(3), 124);
  CHECK(a.store().find("conv1.weight")->tensor.values !=
        c.store().find("conv1.weight")->tensor.values);
}

TEST_CASE("trainable parameter count matches the analytic sum") {
  const int K = 5;
  Verifier verifier(toy_config(K), 3);

  auto conv_params = [](int cin, int cout) { return size_t(9) * cin * cout + cout; };
  auto fc_params = [](int in, int out) { return size_t(in) * out + out; };
  size_t expected = 0;
  expected += conv_params(3, 64) + conv_params(64, 128) + conv_params(384, 256) +
              conv_params(256, 256) + conv_params(768, 512);
  expected += 2 * (64 + 128 + 256 + 256 + 512);  // batch-norm gamma/beta
  expected += fc_params(5120, 1024) + fc_params(1024, 128);
  expected += fc_params(18, 64) + fc_params(64, 64) + fc_params(64, 32);
  expected += fc_params(160, 128);
  expected += fc_params(128, K) + fc_params(32, K) + fc_params(128, K);

  size_t got = 0;
  for (const auto& p : verifier.store())
    if (p->trainable) got += p->tensor.numel();
  CHECK(got == expected);
}

TEST_CASE("embedding is 128-dimensional, deterministic, and zero for identical inputs") {
  Verifier verifier(toy_config(0), 11);
  Tensor<Scalar> x = random_input(2, 300, 5);
  // make both rows identical
  const size_t per = x.numel() / 2;
  std::copy(x.values.begin(), x.values.begin() + ptrdiff_t(per),
            x.values.begin() + ptrdiff_t(per));
  Tensor<Scalar> p = random_prosody(2, 6);
  std::copy(p.values.begin(), p.values.begin() + 18, p.values.begin() + 18);

  Tensor<Scalar> z = verifier.embed_eval(x, p);
  REQUIRE(z.shape == std::vector<int>({2, 128}));
  for (Scalar v : z.values) CHECK(std::isfinite(v));

  std::vector<Scalar> za(z.values.begin(), z.values.begin() + 128);
  std::vector<Scalar> zb(z.values.begin() + 128, z.values.end());
  CHECK(pair_distance(za, zb) == 0.0);

  // eval-mode repeat is bit-identical
  Tensor<Scalar> z2 = verifier.embed_eval(x, p);
  CHECK(z.values == z2.values);
}

TEST_CASE("embedding dimension is independent of the input time length") {
  Verifier verifier(toy_config(0), 11);
  Tensor<Scalar> x300 = random_input(1, 300, 5);
  Tensor<Scalar> x400 = random_input(1, 400, 5);
  Tensor<Scalar> p = random_prosody(1, 6);
  CHECK(verifier.embed_eval(x300, p).shape == std::vector<int>({1, 128}));
  CHECK(verifier.embed_eval(x400, p).shape == std::vector<int>({1, 128}));
}

TEST_CASE("classifier heads") {
  const int K = 4;
  Verifier verifier(toy_config(K), 2);
  Tower& tower = verifier.tower();
  Rng rng(0);

  Tensor<Scalar> x = random_input(1, 300, 9);
  Tensor<Scalar> f7 = tower.cnn_forward(x, false, rng, false);
  Tensor<Scalar> logits = tower.head_forward(ClassifierStage::cnn_only, f7, false);
  CHECK(logits.shape == std::vector<int>({1, K}));

  // the cnn-only path never sees the prosodic vector: same window, same logits
  Tensor<Scalar> f7b = tower.cnn_forward(x, false, rng, false);
  Tensor<Scalar> logits2 = tower.head_forward(ClassifierStage::cnn_only, f7b, false);
  CHECK(logits.values == logits2.values);

  Tensor<Scalar> p = random_prosody(1, 1);
  Tensor<Scalar> m = tower.mlp_forward(p, false, rng, false);
  CHECK(tower.head_forward(ClassifierStage::mlp_only, m, false).shape ==
        std::vector<int>({1, K}));

  Tensor<Scalar> z = tower.fc8_forward(f7, m, false);
  CHECK(z.shape == std::vector<int>({1, 128}));
  CHECK(tower.head_forward(ClassifierStage::joint, z, false).shape == std::vector<int>({1, K}));

  // no heads when n_classes is 0
  Verifier bare(toy_config(0), 2);
  Tensor<Scalar> f = bare.tower().cnn_forward(x, false, rng, false);
  CHECK_THROWS_AS(bare.tower().head_forward(ClassifierStage::cnn_only, f, false), NnError);
}

TEST_CASE("pair_distance") {
  std::vector<Scalar> a(8, 0.f), b(8, 0.f);
  CHECK(pair_distance(a, a) == 0.0);
  a[0] = 3.f;
  b[1] = 4.f;
  CHECK(pair_distance(a, b) == doctest::Approx(5.0).epsilon(1e-7));
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    for (auto& v : a) v = Scalar(rng.normal());
    for (auto& v : b) v = Scalar(rng.normal());
    CHECK(pair_distance(a, b) == doctest::Approx(pair_distance(b, a)).epsilon(1e-12));
  }
  std::vector<Scalar> c(4, 0.f);
  CHECK_THROWS_AS(pair_distance(a, c), NnError);
}

TEST_CASE("joint head gradcheck through the full stack (single precision)") {
  const uint64_t seed = 99;
  Verifier verifier(toy_config(2), seed);
  Tower& tower = verifier.tower();

  Tensor<Scalar> x = random_input(2, 300, 21);
  Tensor<Scalar> p = random_prosody(2, 22);
  std::vector<int> labels = {0, 1};

  auto loss = [&]() -> double {
    Rng rng(seed ^ 0x55);
    Tensor<Scalar> z = tower.embed_forward(x, p, /*train=*/true, rng, false);
    Tensor<Scalar> logits = tower.head_forward(ClassifierStage::joint, z, false);
    return nn::softmax_cross_entropy(logits, labels);
  };

  verifier.store().zero_grads();
  {
    Rng rng(seed ^ 0x55);
    Tensor<Scalar> z = tower.embed_forward(x, p, /*train=*/true, rng, true);
    Tensor<Scalar> logits = tower.head_forward(ClassifierStage::joint, z, true);
    Tensor<Scalar> dlogits;
    nn::softmax_cross_entropy(logits, labels, &dlogits);
    Tensor<Scalar> dz = tower.head_backward(ClassifierStage::joint, dlogits);
    tower.embed_backward(dz);
  }

  // float-precision finite differences over a few parameters of each block
  Rng pick(3);
  double worst = 0.0;
  for (const char* name : {"conv1.weight", "conv5.bias", "fc6.weight", "fc8.weight",
                           "mlp1.weight", "head_joint.weight", "bn3.gamma"}) {
    auto* param = verifier.store().find(name);
    REQUIRE(param != nullptr);
    for (int probe = 0; probe < 3; ++probe) {
      const size_t i = pick.uniform_index(param->tensor.numel());
      const float orig = param->tensor.values[i];
      const float h = 1e-2f;
      param->tensor.values[i] = orig + h;
      const double up = loss();
      param->tensor.values[i] = orig - h;
      const double down = loss();
      param->tensor.values[i] = orig;
      const double numeric = (up - down) / (2.0 * double(h));
      const double analytic = param->tensor.grad[i];
      const double rel =
          std::fabs(analytic - numeric) / std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-3);
}
