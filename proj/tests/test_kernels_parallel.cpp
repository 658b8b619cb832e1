// The OpenMP kernels against their serial references, and thread-count
// independence of the parallel builds (every output element is owned by one
// thread and accumulated in a fixed order, so results must match bit for bit
// across thread counts).

#include <omp.h>

#include <vector>

#include "doctest.h"
#include "svkit/kernels.hpp"
#include "svkit/rng.hpp"

using namespace svkit;

namespace {

struct ConvCase {
  int N, F, T, Cin, Cout;
};

std::vector<float> randv(size_t n, Rng& rng, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.normal(0.0, scale));
  return v;
}

}  // namespace

TEST_CASE("conv2d forward/backward match the serial reference") {
  const ConvCase cases[] = {{2, 6, 9, 3, 8}, {1, 4, 7, 5, 16}, {2, 8, 5, 48, 32}};
  for (const auto& c : cases) {
    Rng rng(uint64_t(c.Cin) * 131 + c.Cout);
    auto x = randv(size_t(c.N) * c.F * c.T * c.Cin, rng);
    auto w = randv(size_t(9) * c.Cin * c.Cout, rng, 0.2);
    auto b = randv(size_t(c.Cout), rng);
    auto dout = randv(size_t(c.N) * c.F * c.T * c.Cout, rng);

    std::vector<float> out_omp(dout.size()), out_ref(dout.size());
    kernels::conv2d_forward(x.data(), w.data(), b.data(), out_omp.data(), c.N, c.F, c.T, c.Cin,
                            c.Cout);
    kernels::ref::conv2d_forward(x.data(), w.data(), b.data(), out_ref.data(), c.N, c.F, c.T,
                                 c.Cin, c.Cout);
    for (size_t i = 0; i < out_ref.size(); ++i)
      CHECK(out_omp[i] == doctest::Approx(out_ref[i]).epsilon(1e-5));

    // dW/db
    std::vector<float> dw_omp(w.size(), 0.f), db_omp(b.size(), 0.f);
    std::vector<float> dw_ref(w.size(), 0.f), db_ref(b.size(), 0.f);
    kernels::conv2d_backward_params(x.data(), dout.data(), dw_omp.data(), db_omp.data(), c.N, c.F,
                                    c.T, c.Cin, c.Cout);
    kernels::ref::conv2d_backward_params(x.data(), dout.data(), dw_ref.data(), db_ref.data(), c.N,
                                         c.F, c.T, c.Cin, c.Cout);
    for (size_t i = 0; i < dw_ref.size(); ++i)
      CHECK(dw_omp[i] == doctest::Approx(dw_ref[i]).epsilon(1e-4));
    for (size_t i = 0; i < db_ref.size(); ++i)
      CHECK(db_omp[i] == doctest::Approx(db_ref[i]).epsilon(1e-4));

    // dX (the parallel kernel takes tap-transposed weights)
    std::vector<float> w_t(w.size());
    for (int tap = 0; tap < 9; ++tap)
      for (int ci = 0; ci < c.Cin; ++ci)
        for (int co = 0; co < c.Cout; ++co)
          w_t[(size_t(tap) * c.Cout + co) * c.Cin + ci] =
              w[(size_t(tap) * c.Cin + ci) * c.Cout + co];
    std::vector<float> dx_omp(x.size()), dx_ref(x.size());
    kernels::conv2d_backward_input(dout.data(), w_t.data(), dx_omp.data(), c.N, c.F, c.T, c.Cin,
                                   c.Cout);
    kernels::ref::conv2d_backward_input(dout.data(), w.data(), dx_ref.data(), c.N, c.F, c.T,
                                        c.Cin, c.Cout);
    for (size_t i = 0; i < dx_ref.size(); ++i)
      CHECK(dx_omp[i] == doctest::Approx(dx_ref[i]).epsilon(1e-4));
  }
}

TEST_CASE("linear forward/backward match the serial reference") {
  Rng rng(17);
  const int N = 5, In = 37, Out = 29;
  auto x = randv(size_t(N) * In, rng);
  auto w = randv(size_t(Out) * In, rng, 0.3);
  auto b = randv(size_t(Out), rng);
  auto dout = randv(size_t(N) * Out, rng);

  std::vector<float> o1(size_t(N) * Out), o2(size_t(N) * Out);
  kernels::linear_forward(x.data(), w.data(), b.data(), o1.data(), N, In, Out);
  kernels::ref::linear_forward(x.data(), w.data(), b.data(), o2.data(), N, In, Out);
  for (size_t i = 0; i < o1.size(); ++i) CHECK(o1[i] == doctest::Approx(o2[i]).epsilon(1e-5));

  std::vector<float> dx1(x.size()), dx2(x.size());
  kernels::linear_backward_input(dout.data(), w.data(), dx1.data(), N, In, Out);
  kernels::ref::linear_backward_input(dout.data(), w.data(), dx2.data(), N, In, Out);
  for (size_t i = 0; i < dx1.size(); ++i) CHECK(dx1[i] == doctest::Approx(dx2[i]).epsilon(1e-5));

  std::vector<float> dw1(w.size(), 0.f), db1(b.size(), 0.f), dw2(w.size(), 0.f),
      db2(b.size(), 0.f);
  kernels::linear_backward_params(x.data(), dout.data(), dw1.data(), db1.data(), N, In, Out);
  kernels::ref::linear_backward_params(x.data(), dout.data(), dw2.data(), db2.data(), N, In, Out);
  for (size_t i = 0; i < dw1.size(); ++i) CHECK(dw1[i] == doctest::Approx(dw2[i]).epsilon(1e-5));
  for (size_t i = 0; i < db1.size(); ++i) CHECK(db1[i] == doctest::Approx(db2[i]).epsilon(1e-5));
}

TEST_CASE("parallel kernels are bit-identical across thread counts") {
  const int N = 2, F = 8, T = 11, Cin = 24, Cout = 40;
  Rng rng(23);
  auto x = randv(size_t(N) * F * T * Cin, rng);
  auto w = randv(size_t(9) * Cin * Cout, rng, 0.2);
  auto b = randv(size_t(Cout), rng);
  auto dout = randv(size_t(N) * F * T * Cout, rng);

  const int saved = omp_get_max_threads();
  std::vector<std::vector<float>> outs, dws;
  for (int threads : {1, 2, 4}) {
    omp_set_num_threads(threads);
    std::vector<float> out(dout.size());
    kernels::conv2d_forward(x.data(), w.data(), b.data(), out.data(), N, F, T, Cin, Cout);
    outs.push_back(std::move(out));

    std::vector<float> dw(w.size(), 0.f), db(b.size(), 0.f);
    kernels::conv2d_backward_params(x.data(), dout.data(), dw.data(), db.data(), N, F, T, Cin,
                                    Cout);
    dws.push_back(std::move(dw));
  }
  omp_set_num_threads(saved);

  CHECK(outs[0] == outs[1]);
  CHECK(outs[0] == outs[2]);
  CHECK(dws[0] == dws[1]);
  CHECK(dws[0] == dws[2]);
}
