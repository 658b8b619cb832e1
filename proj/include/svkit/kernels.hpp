#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

// Hot array kernels behind the layer objects. Each kernel has an OpenMP
// build (this namespace) and a plain serial reference (kernels::ref) used by
// the tests and the benchmark. Both accumulate in the same index order, and
// the parallel builds assign every output element to exactly one thread, so
// results do not depend on the thread count.
//
// Layouts: activations are row-major {N, F, T, C} with channels innermost;
// conv weights are {3, 3, C_in, C_out}; linear weights are {out, in}.

namespace svkit::kernels {

namespace detail {

template <typename T>
void gemm_acc_kblock(const T* A, const T* B, T* C, int M, int K, int N, int lda, int ldc);

// C[M x N] += A[M x K] * B[K x N], row-major with row strides lda/ldc for A/C
// (B is dense K x N). Register-tiled 4 rows x 48 columns; K is processed in
// L1-sized blocks so the active B slab stays cache-resident. Accumulation
// order per element is k ascending, independent of the blocking.
template <typename T>
void gemm_acc(const T* A, const T* B, T* C, int M, int K, int N, int lda, int ldc) {
  constexpr int KB = 128;
  for (int k0 = 0; k0 < K; k0 += KB)
    gemm_acc_kblock(A + k0, B + ptrdiff_t(k0) * N, C, M, std::min(KB, K - k0), N, lda, ldc);
}

template <typename T>
void gemm_acc_kblock(const T* A, const T* B, T* C, int M, int K, int N, int lda, int ldc) {
  constexpr int NB = 48;
  constexpr int NB2 = 16;
  int m0 = 0;
  for (; m0 + 4 <= M; m0 += 4) {
    const T *a0 = A + ptrdiff_t(m0) * lda, *a1 = a0 + lda, *a2 = a1 + lda, *a3 = a2 + lda;
    T *c0 = C + ptrdiff_t(m0) * ldc, *c1 = c0 + ldc, *c2 = c1 + ldc, *c3 = c2 + ldc;
    int n0 = 0;
    for (; n0 + NB <= N; n0 += NB) {
      T t0[NB], t1[NB], t2[NB], t3[NB];
      for (int j = 0; j < NB; ++j) {
        t0[j] = c0[n0 + j];
        t1[j] = c1[n0 + j];
        t2[j] = c2[n0 + j];
        t3[j] = c3[n0 + j];
      }
      for (int k = 0; k < K; ++k) {
        const T* b = B + ptrdiff_t(k) * N + n0;
        const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
#pragma omp simd
        for (int j = 0; j < NB; ++j) {
          const T bj = b[j];
          t0[j] += v0 * bj;
          t1[j] += v1 * bj;
          t2[j] += v2 * bj;
          t3[j] += v3 * bj;
        }
      }
      for (int j = 0; j < NB; ++j) {
        c0[n0 + j] = t0[j];
        c1[n0 + j] = t1[j];
        c2[n0 + j] = t2[j];
        c3[n0 + j] = t3[j];
      }
    }
    for (; n0 + NB2 <= N; n0 += NB2) {
      T t0[NB2], t1[NB2], t2[NB2], t3[NB2];
      for (int j = 0; j < NB2; ++j) {
        t0[j] = c0[n0 + j];
        t1[j] = c1[n0 + j];
        t2[j] = c2[n0 + j];
        t3[j] = c3[n0 + j];
      }
      for (int k = 0; k < K; ++k) {
        const T* b = B + ptrdiff_t(k) * N + n0;
        const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
#pragma omp simd
        for (int j = 0; j < NB2; ++j) {
          const T bj = b[j];
          t0[j] += v0 * bj;
          t1[j] += v1 * bj;
          t2[j] += v2 * bj;
          t3[j] += v3 * bj;
        }
      }
      for (int j = 0; j < NB2; ++j) {
        c0[n0 + j] = t0[j];
        c1[n0 + j] = t1[j];
        c2[n0 + j] = t2[j];
        c3[n0 + j] = t3[j];
      }
    }
    for (; n0 < N; ++n0) {
      T s0 = c0[n0], s1 = c1[n0], s2 = c2[n0], s3 = c3[n0];
      for (int k = 0; k < K; ++k) {
        const T bj = B[ptrdiff_t(k) * N + n0];
        s0 += a0[k] * bj;
        s1 += a1[k] * bj;
        s2 += a2[k] * bj;
        s3 += a3[k] * bj;
      }
      c0[n0] = s0;
      c1[n0] = s1;
      c2[n0] = s2;
      c3[n0] = s3;
    }
  }
  // remainder rows, still column-vectorized
  for (; m0 < M; ++m0) {
    const T* a = A + ptrdiff_t(m0) * lda;
    T* c = C + ptrdiff_t(m0) * ldc;
    int n0 = 0;
    for (; n0 + NB2 <= N; n0 += NB2) {
      T t0[NB2];
      for (int j = 0; j < NB2; ++j) t0[j] = c[n0 + j];
      for (int k = 0; k < K; ++k) {
        const T* b = B + ptrdiff_t(k) * N + n0;
        const T v0 = a[k];
#pragma omp simd
        for (int j = 0; j < NB2; ++j) t0[j] += v0 * b[j];
      }
      for (int j = 0; j < NB2; ++j) c[n0 + j] = t0[j];
    }
    for (; n0 < N; ++n0) {
      T s = c[n0];
      for (int k = 0; k < K; ++k) s += a[k] * B[ptrdiff_t(k) * N + n0];
      c[n0] = s;
    }
  }
}

}  // namespace detail

// 3x3 "same" convolution, stride 1, zero padding. Taps are applied in the
// outer loop so one Cin x Cout weight block stays cache-hot across the whole
// batch; every output row is owned by one thread within each tap, and the
// per-element accumulation order (tap-major, then ci ascending) matches the
// serial reference.
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* out, int N, int F, int TT, int Cin,
                    int Cout) {
  const ptrdiff_t planes = ptrdiff_t(N) * F;
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (ptrdiff_t p = 0; p < planes; ++p) {
      T* c = out + p * TT * Cout;
      for (int t = 0; t < TT; ++t)
        for (int co = 0; co < Cout; ++co) c[ptrdiff_t(t) * Cout + co] = b[co];
    }
    for (int df = 0; df < 3; ++df) {
      for (int dt = 0; dt < 3; ++dt) {
        const T* wt = w + ptrdiff_t(df * 3 + dt) * Cin * Cout;
        const int t0 = std::max(0, 1 - dt);
        const int t1 = TT - std::max(0, dt - 1);
        if (t1 <= t0) continue;
#pragma omp for collapse(2) schedule(static)
        for (int n = 0; n < N; ++n) {
          for (int f = 0; f < F; ++f) {
            const int fs = f + df - 1;
            if (fs < 0 || fs >= F) continue;
            const T* a = x + ((ptrdiff_t(n) * F + fs) * TT + (t0 + dt - 1)) * Cin;
            T* c = out + (ptrdiff_t(n) * F + f) * TT * Cout;
            detail::gemm_acc(a, wt, c + ptrdiff_t(t0) * Cout, t1 - t0, Cin, Cout, Cin, Cout);
          }
        }
      }
    }
  }
}

// Gradient wrt the input. w_t is the tap-transposed weight {3,3,Cout,Cin}.
template <typename T>
void conv2d_backward_input(const T* dout, const T* w_t, T* dx, int N, int F, int TT, int Cin,
                           int Cout) {
  const ptrdiff_t total = ptrdiff_t(N) * F * TT * Cin;
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (ptrdiff_t i = 0; i < total; ++i) dx[i] = T(0);
    for (int df = 0; df < 3; ++df) {
      for (int dt = 0; dt < 3; ++dt) {
        const T* wt = w_t + ptrdiff_t(df * 3 + dt) * Cout * Cin;
        // ts contributes to out position ts - (dt-1)
        const int t0 = std::max(0, dt - 1);
        const int t1 = TT + std::min(0, dt - 1);
        if (t1 <= t0) continue;
#pragma omp for collapse(2) schedule(static)
        for (int n = 0; n < N; ++n) {
          for (int fs = 0; fs < F; ++fs) {
            const int fo = fs - (df - 1);
            if (fo < 0 || fo >= F) continue;
            const T* a = dout + ((ptrdiff_t(n) * F + fo) * TT + (t0 - (dt - 1))) * Cout;
            T* c = dx + (ptrdiff_t(n) * F + fs) * TT * Cin;
            detail::gemm_acc(a, wt, c + ptrdiff_t(t0) * Cin, t1 - t0, Cout, Cin, Cout, Cin);
          }
        }
      }
    }
  }
}

// Gradients wrt weights and bias; both are accumulated (+=).
template <typename T>
void conv2d_backward_params(const T* x, const T* dout, T* dw, T* db, int N, int F, int TT,
                            int Cin, int Cout) {
  constexpr int kCinBlock = 16;
  const int n_blocks = (Cin + kCinBlock - 1) / kCinBlock;
#pragma omp parallel for collapse(2) schedule(dynamic)
  for (int tap = 0; tap < 9; ++tap) {
    for (int blk = 0; blk < n_blocks; ++blk) {
      const int df = tap / 3, dt = tap % 3;
      const int ci0 = blk * kCinBlock;
      const int ci1 = std::min(Cin, ci0 + kCinBlock);
      T* dwt = dw + ptrdiff_t(tap) * Cin * Cout;
      for (int n = 0; n < N; ++n) {
        for (int f = 0; f < F; ++f) {
          const int fs = f + df - 1;
          if (fs < 0 || fs >= F) continue;
          const int t0 = std::max(0, 1 - dt);
          const int t1 = TT - std::max(0, dt - 1);
          for (int t = t0; t < t1; ++t) {
            const T* xr = x + ((ptrdiff_t(n) * F + fs) * TT + (t + dt - 1)) * Cin;
            const T* dr = dout + ((ptrdiff_t(n) * F + f) * TT + t) * Cout;
            for (int ci = ci0; ci < ci1; ++ci) {
              const T a = xr[ci];
              T* row = dwt + ptrdiff_t(ci) * Cout;
#pragma omp simd
              for (int co = 0; co < Cout; ++co) row[co] += a * dr[co];
            }
          }
        }
      }
    }
  }
  // bias gradient: one vectorized pass over dout
  const ptrdiff_t rows = ptrdiff_t(N) * F * TT;
  for (ptrdiff_t r = 0; r < rows; ++r) {
    const T* dr = dout + r * Cout;
#pragma omp simd
    for (int co = 0; co < Cout; ++co) db[co] += dr[co];
  }
}

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* out, int N, int In, int Out) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < Out; ++o) {
      const T* xr = x + ptrdiff_t(n) * In;
      const T* wr = w + ptrdiff_t(o) * In;
      T s = b[o];
#pragma omp simd reduction(+ : s)
      for (int i = 0; i < In; ++i) s += xr[i] * wr[i];
      out[ptrdiff_t(n) * Out + o] = s;
    }
  }
}

template <typename T>
void linear_backward_input(const T* dout, const T* w, T* dx, int N, int In, int Out) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    T* dxr = dx + ptrdiff_t(n) * In;
    for (int i = 0; i < In; ++i) dxr[i] = T(0);
    const T* dr = dout + ptrdiff_t(n) * Out;
    for (int o = 0; o < Out; ++o) {
      const T g = dr[o];
      const T* wr = w + ptrdiff_t(o) * In;
#pragma omp simd
      for (int i = 0; i < In; ++i) dxr[i] += g * wr[i];
    }
  }
}

template <typename T>
void linear_backward_params(const T* x, const T* dout, T* dw, T* db, int N, int In, int Out) {
#pragma omp parallel for schedule(static)
  for (int o = 0; o < Out; ++o) {
    T* dwr = dw + ptrdiff_t(o) * In;
    T acc = T(0);
    for (int n = 0; n < N; ++n) {
      const T g = dout[ptrdiff_t(n) * Out + o];
      acc += g;
      const T* xr = x + ptrdiff_t(n) * In;
#pragma omp simd
      for (int i = 0; i < In; ++i) dwr[i] += g * xr[i];
    }
    db[o] += acc;
  }
}

// ---- serial reference implementations ----

namespace ref {

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* out, int N, int F, int TT, int Cin,
                    int Cout) {
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < TT; ++t)
        for (int co = 0; co < Cout; ++co) {
          T s = b[co];
          for (int df = 0; df < 3; ++df)
            for (int dt = 0; dt < 3; ++dt) {
              const int fs = f + df - 1, ts = t + dt - 1;
              if (fs < 0 || fs >= F || ts < 0 || ts >= TT) continue;
              for (int ci = 0; ci < Cin; ++ci)
                s += x[((ptrdiff_t(n) * F + fs) * TT + ts) * Cin + ci] *
                     w[(ptrdiff_t(df * 3 + dt) * Cin + ci) * Cout + co];
            }
          out[((ptrdiff_t(n) * F + f) * TT + t) * Cout + co] = s;
        }
}

template <typename T>
void conv2d_backward_input(const T* dout, const T* w, T* dx, int N, int F, int TT, int Cin,
                           int Cout) {
  // w here is the untransposed {3,3,Cin,Cout} layout
  for (ptrdiff_t i = 0; i < ptrdiff_t(N) * F * TT * Cin; ++i) dx[i] = T(0);
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < TT; ++t)
        for (int df = 0; df < 3; ++df)
          for (int dt = 0; dt < 3; ++dt) {
            const int fs = f + df - 1, ts = t + dt - 1;
            if (fs < 0 || fs >= F || ts < 0 || ts >= TT) continue;
            for (int ci = 0; ci < Cin; ++ci) {
              T acc = T(0);
              for (int co = 0; co < Cout; ++co)
                acc += dout[((ptrdiff_t(n) * F + f) * TT + t) * Cout + co] *
                       w[(ptrdiff_t(df * 3 + dt) * Cin + ci) * Cout + co];
              dx[((ptrdiff_t(n) * F + fs) * TT + ts) * Cin + ci] += acc;
            }
          }
}

template <typename T>
void conv2d_backward_params(const T* x, const T* dout, T* dw, T* db, int N, int F, int TT,
                            int Cin, int Cout) {
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < TT; ++t)
        for (int co = 0; co < Cout; ++co) {
          const T g = dout[((ptrdiff_t(n) * F + f) * TT + t) * Cout + co];
          db[co] += g;
          for (int df = 0; df < 3; ++df)
            for (int dt = 0; dt < 3; ++dt) {
              const int fs = f + df - 1, ts = t + dt - 1;
              if (fs < 0 || fs >= F || ts < 0 || ts >= TT) continue;
              for (int ci = 0; ci < Cin; ++ci)
                dw[(ptrdiff_t(df * 3 + dt) * Cin + ci) * Cout + co] +=
                    g * x[((ptrdiff_t(n) * F + fs) * TT + ts) * Cin + ci];
            }
        }
}

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* out, int N, int In, int Out) {
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Out; ++o) {
      T s = b[o];
      for (int i = 0; i < In; ++i) s += x[ptrdiff_t(n) * In + i] * w[ptrdiff_t(o) * In + i];
      out[ptrdiff_t(n) * Out + o] = s;
    }
}

template <typename T>
void linear_backward_input(const T* dout, const T* w, T* dx, int N, int In, int Out) {
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < In; ++i) {
      T s = T(0);
      for (int o = 0; o < Out; ++o)
        s += dout[ptrdiff_t(n) * Out + o] * w[ptrdiff_t(o) * In + i];
      dx[ptrdiff_t(n) * In + i] = s;
    }
}

template <typename T>
void linear_backward_params(const T* x, const T* dout, T* dw, T* db, int N, int In, int Out) {
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Out; ++o) {
      const T g = dout[ptrdiff_t(n) * Out + o];
      db[o] += g;
      for (int i = 0; i < In; ++i) dw[ptrdiff_t(o) * In + i] += g * x[ptrdiff_t(n) * In + i];
    }
}

}  // namespace ref

}  // namespace svkit::kernels
