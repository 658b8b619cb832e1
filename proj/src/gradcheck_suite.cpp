#include "svkit/gradcheck_suite.hpp"

#include <functional>
#include <map>
#include <ostream>

#include "svkit/layers.hpp"

namespace svkit::nn {

namespace {

using D = double;

Tensor<D> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<D> t(std::move(shape));
  for (auto& v : t.values) v = rng.normal(0.0, scale);
  return t;
}

double dot_proj(const Tensor<D>& t, const Tensor<D>& proj) {
  double s = 0.0;
  for (size_t i = 0; i < t.numel(); ++i) s += t.values[i] * proj.values[i];
  return s;
}

struct Case {
  GradCheckReport report;
};

GradCheckReport check_conv2d(uint64_t seed) {
  Rng rng(seed);
  ParamStore<D> store;
  Conv2d<D> conv(store, "conv", 2, 3, rng);
  Tensor<D> x = random_tensor({2, 5, 6, 2}, rng);
  Tensor<D> proj = random_tensor({2, 5, 6, 3}, rng);

  auto loss = [&]() { return dot_proj(conv.forward(x, false), proj); };
  store.zero_grads();
  conv.forward(x, true);
  Tensor<D> dx = conv.backward(proj);

  std::vector<GradSlot> slots = {
      {"input", x.values.data(), dx.values.data(), x.numel()},
      {"weight", conv.weight()->tensor.values.data(), conv.weight()->tensor.grad.data(),
       conv.weight()->tensor.numel()},
      {"bias", conv.bias()->tensor.values.data(), conv.bias()->tensor.grad.data(),
       conv.bias()->tensor.numel()}};
  return finite_diff_gradcheck("conv2d", slots, loss, 1e-5, 64, seed);
}

GradCheckReport check_linear(uint64_t seed) {
  Rng rng(seed);
  ParamStore<D> store;
  Linear<D> fc(store, "fc", 8, 5, rng);
  Tensor<D> x = random_tensor({3, 8}, rng);
  Tensor<D> proj = random_tensor({3, 5}, rng);

  auto loss = [&]() { return dot_proj(fc.forward(x, false), proj); };
  store.zero_grads();
  fc.forward(x, true);
  Tensor<D> dx = fc.backward(proj);

  std::vector<GradSlot> slots = {
      {"input", x.values.data(), dx.values.data(), x.numel()},
      {"weight", fc.weight()->tensor.values.data(), fc.weight()->tensor.grad.data(),
       fc.weight()->tensor.numel()},
      {"bias", fc.bias()->tensor.values.data(), fc.bias()->tensor.grad.data(),
       fc.bias()->tensor.numel()}};
  return finite_diff_gradcheck("fully_connected", slots, loss, 1e-5, 64, seed);
}

GradCheckReport check_batch_norm(uint64_t seed) {
  Rng rng(seed);
  ParamStore<D> store;
  BatchNorm<D> bn(store, "bn", 3);
  Tensor<D> x = random_tensor({4, 2, 3, 3}, rng);
  for (auto& v : bn.gamma()->tensor.values) v = 0.5 + rng.uniform();
  for (auto& v : bn.beta()->tensor.values) v = rng.normal();
  Tensor<D> proj = random_tensor({4, 2, 3, 3}, rng);

  auto loss = [&]() { return dot_proj(bn.forward(x, true, false), proj); };
  store.zero_grads();
  bn.forward(x, true, true);
  Tensor<D> dx = bn.backward(proj);

  std::vector<GradSlot> slots = {
      {"input", x.values.data(), dx.values.data(), x.numel()},
      {"gamma", bn.gamma()->tensor.values.data(), bn.gamma()->tensor.grad.data(),
       bn.gamma()->tensor.numel()},
      {"beta", bn.beta()->tensor.values.data(), bn.beta()->tensor.grad.data(),
       bn.beta()->tensor.numel()}};
  return finite_diff_gradcheck("batch_norm", slots, loss, 1e-5, 64, seed);
}

GradCheckReport check_relu(uint64_t seed) {
  Rng rng(seed);
  Relu<D> relu;
  Tensor<D> x({3, 4, 2, 2});
  for (auto& v : x.values) {
    // probe away from the kink at 0
    double m = rng.normal();
    v = (m >= 0 ? 1.0 : -1.0) * (0.1 + std::fabs(m));
  }
  Tensor<D> proj = random_tensor({3, 4, 2, 2}, rng);

  auto loss = [&]() { return dot_proj(relu.forward(x, false), proj); };
  relu.forward(x, true);
  Tensor<D> dx = relu.backward(proj);

  std::vector<GradSlot> slots = {{"input", x.values.data(), dx.values.data(), x.numel()}};
  return finite_diff_gradcheck("relu", slots, loss, 1e-5, 64, seed);
}

GradCheckReport check_maxpool_time(uint64_t seed) {
  Rng rng(seed);
  MaxPoolTime<D> pool;
  Tensor<D> x = random_tensor({2, 3, 7, 2}, rng);
  Tensor<D> proj = random_tensor({2, 3, 3, 2}, rng);

  auto loss = [&]() { return dot_proj(pool.forward(x, false), proj); };
  pool.forward(x, true);
  Tensor<D> dx = pool.backward(proj);

  std::vector<GradSlot> slots = {{"input", x.values.data(), dx.values.data(), x.numel()}};
  return finite_diff_gradcheck("maxpool_time", slots, loss, 1e-5, 64, seed);
}

GradCheckReport check_hetero_pool(uint64_t seed) {
  Rng rng(seed);
  HeteroFreqPool<D> pool;
  Tensor<D> x = random_tensor({2, 6, 3, 2}, rng);
  Tensor<D> proj = random_tensor({2, 3, 3, 6}, rng);

  auto loss = [&]() { return dot_proj(pool.forward(x, false), proj); };
  pool.forward(x, true);
  Tensor<D> dx = pool.backward(proj);

  std::vector<GradSlot> slots = {{"input", x.values.data(), dx.values.data(), x.numel()}};
  return finite_diff_gradcheck("hetero_freq_maxpool", slots, loss, 1e-5, 64, seed);
}

GradCheckReport check_avgpool(uint64_t seed) {
  Rng rng(seed);
  GlobalAvgPoolTime<D> pool;
  Tensor<D> x = random_tensor({2, 3, 5, 2}, rng);
  Tensor<D> proj = random_tensor({2, 3, 1, 2}, rng);

  auto loss = [&]() { return dot_proj(pool.forward(x, false), proj); };
  pool.forward(x, true);
  Tensor<D> dx = pool.backward(proj);

  std::vector<GradSlot> slots = {{"input", x.values.data(), dx.values.data(), x.numel()}};
  return finite_diff_gradcheck("avgpool_time_global", slots, loss, 1e-5, 64, seed);
}

GradCheckReport check_dropout(uint64_t seed) {
  Rng rng(seed);
  Dropout<D> dp(0.5);
  Tensor<D> x = random_tensor({3, 10}, rng);
  Tensor<D> proj = random_tensor({3, 10}, rng);

  // fixed mask: the closure reseeds the mask RNG on every call
  auto loss = [&]() {
    Rng mask_rng(seed ^ 0xabcd);
    return dot_proj(dp.forward(x, true, mask_rng, false), proj);
  };
  Rng mask_rng(seed ^ 0xabcd);
  dp.forward(x, true, mask_rng, true);
  Tensor<D> dx = dp.backward(proj);

  std::vector<GradSlot> slots = {{"input", x.values.data(), dx.values.data(), x.numel()}};
  return finite_diff_gradcheck("dropout", slots, loss, 1e-5, 64, seed);
}

GradCheckReport check_softmax_ce(uint64_t seed) {
  Rng rng(seed);
  Tensor<D> logits = random_tensor({4, 7}, rng);
  std::vector<int> labels;
  for (int n = 0; n < 4; ++n) labels.push_back(int(rng.uniform_index(7)));

  auto loss = [&]() { return softmax_cross_entropy<D>(logits, labels, nullptr); };
  Tensor<D> dlogits;
  softmax_cross_entropy<D>(logits, labels, &dlogits);

  std::vector<GradSlot> slots = {
      {"logits", logits.values.data(), dlogits.values.data(), logits.numel()}};
  return finite_diff_gradcheck("softmax_cross_entropy", slots, loss, 1e-5, 64, seed);
}

GradCheckReport check_contrastive(uint64_t seed) {
  Rng rng(seed);
  const double margin = 10.0;
  Tensor<D> za = random_tensor({4, 6}, rng);
  Tensor<D> zb = random_tensor({4, 6}, rng);
  // keep distances away from 0 and from the margin kink
  for (int n = 0; n < 4; ++n) za.values[size_t(n) * 6] += 3.0;
  std::vector<int> labels = {0, 1, 0, 1};

  auto loss = [&]() {
    return contrastive_loss_batch<D>(za, zb, labels, margin, nullptr, nullptr);
  };
  Tensor<D> dza, dzb;
  contrastive_loss_batch<D>(za, zb, labels, margin, &dza, &dzb);

  std::vector<GradSlot> slots = {{"z_i", za.values.data(), dza.values.data(), za.numel()},
                                 {"z_j", zb.values.data(), dzb.values.data(), zb.numel()}};
  return finite_diff_gradcheck("contrastive_loss", slots, loss, 1e-5, 64, seed);
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(double tolerance, int n_seeds,
                                                 std::ostream& out) {
  using CheckFn = GradCheckReport (*)(uint64_t);
  const std::vector<std::pair<const char*, CheckFn>> checks = {
      {"conv2d", &check_conv2d},
      {"fully_connected", &check_linear},
      {"batch_norm", &check_batch_norm},
      {"relu", &check_relu},
      {"maxpool_time", &check_maxpool_time},
      {"hetero_freq_maxpool", &check_hetero_pool},
      {"avgpool_time_global", &check_avgpool},
      {"dropout", &check_dropout},
      {"softmax_cross_entropy", &check_softmax_ce},
      {"contrastive_loss", &check_contrastive},
  };

  std::vector<GradCheckReport> worst;
  for (const auto& [name, fn] : checks) {
    GradCheckReport agg;
    agg.name = name;
    for (int s = 0; s < n_seeds; ++s) {
      GradCheckReport r = fn(0xc0ffee00ULL + uint64_t(s) * 7919ULL);
      agg.probes += r.probes;
      if (r.max_rel_error > agg.max_rel_error) {
        agg.max_rel_error = r.max_rel_error;
        agg.worst_slot = r.worst_slot;
      }
    }
    out << (agg.passed(tolerance) ? "pass" : "FAIL") << "  " << agg.name
        << "  max_rel_error=" << agg.max_rel_error << "  probes=" << agg.probes << "\n";
    worst.push_back(agg);
  }
  return worst;
}

bool suite_passed(const std::vector<GradCheckReport>& reports, double tolerance) {
  for (const auto& r : reports)
    if (!r.passed(tolerance)) return false;
  return true;
}

}  // namespace svkit::nn
