// AVX2 variants of the f32 kernel table. Each function reproduces the scalar
// reference bit-for-bit: vectorization runs across independent outputs, and
// reductions along contiguous axes use the same 8-lane accumulator layout and
// combine tree as the reference. No FMA instructions are used anywhere.

#include <immintrin.h>

#include "lvs/kernels.hpp"

namespace lvs::kern::avx2 {

namespace {

float combine8(const float* acc) {
  float s01 = acc[0] + acc[1], s23 = acc[2] + acc[3];
  float s45 = acc[4] + acc[5], s67 = acc[6] + acc[7];
  return (s01 + s23) + (s45 + s67);
}

float dot_blocked(const float* a, const float* b, int64_t n) {
  __m256 accv = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    accv = _mm256_add_ps(accv, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  alignas(32) float acc[8];
  _mm256_store_ps(acc, accv);
  for (; i < n; ++i) acc[i & 7] += a[i] * b[i];
  return combine8(acc);
}

float reduce_add(const float* x, int64_t n) {
  __m256 accv = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) accv = _mm256_add_ps(accv, _mm256_loadu_ps(x + i));
  alignas(32) float acc[8];
  _mm256_store_ps(acc, accv);
  for (; i < n; ++i) acc[i & 7] += x[i];
  return combine8(acc);
}

void matmul(const float* A, const float* B, float* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m) {
    int64_t n = 0;
    for (; n + 8 <= N; n += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (int64_t k = 0; k < K; ++k)
        acc = _mm256_add_ps(
            acc, _mm256_mul_ps(_mm256_set1_ps(A[m * K + k]), _mm256_loadu_ps(B + k * N + n)));
      _mm256_storeu_ps(C + m * N + n, acc);
    }
    for (; n < N; ++n) {
      float acc = 0.f;
      for (int64_t k = 0; k < K; ++k) acc += A[m * K + k] * B[k * N + n];
      C[m * N + n] = acc;
    }
  }
}

void matmul_acc_bt(const float* dC, const float* B, float* dA, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m)
    for (int64_t k = 0; k < K; ++k) dA[m * K + k] += dot_blocked(dC + m * N, B + k * N, N);
}

void matmul_acc_at(const float* A, const float* dC, float* dB, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m)
    for (int64_t k = 0; k < K; ++k) {
      float a = A[m * K + k];
      const float* dc = dC + m * N;
      float* db = dB + k * N;
      __m256 av = _mm256_set1_ps(a);
      int64_t n = 0;
      for (; n + 8 <= N; n += 8)
        _mm256_storeu_ps(db + n,
                         _mm256_add_ps(_mm256_loadu_ps(db + n),
                                       _mm256_mul_ps(av, _mm256_loadu_ps(dc + n))));
      for (; n < N; ++n) db[n] += a * dc[n];
    }
}

void conv3x3(const float* x, const float* w, const float* b, float* y, int64_t Cin, int64_t Cout,
             int64_t H, int64_t W) {
  for (int64_t co = 0; co < Cout; ++co) {
    float bias = b ? b[co] : 0.f;
    for (int64_t i = 0; i < H; ++i) {
      float* yrow = y + (co * H + i) * W;
      yrow[0] = ref::conv3x3_at(x, w, bias, co, i, int64_t(0), Cin, H, W);
      if (W == 1) continue;
      int64_t j = 1;
      // Interior columns: all three horizontal taps in bounds.
      for (; j + 8 <= W - 1; j += 8) {
        __m256 acc = _mm256_set1_ps(bias);
        for (int64_t ci = 0; ci < Cin; ++ci)
          for (int64_t di = 0; di < 3; ++di) {
            int64_t ii = i + di - 1;
            if (ii < 0 || ii >= H) continue;
            const float* xrow = x + (ci * H + ii) * W;
            const float* wrow = w + ((co * Cin + ci) * 3 + di) * 3;
            for (int64_t dj = 0; dj < 3; ++dj)
              acc = _mm256_add_ps(
                  acc, _mm256_mul_ps(_mm256_set1_ps(wrow[dj]), _mm256_loadu_ps(xrow + j + dj - 1)));
          }
        _mm256_storeu_ps(yrow + j, acc);
      }
      for (; j < W; ++j) yrow[j] = ref::conv3x3_at(x, w, bias, co, i, j, Cin, H, W);
    }
  }
}

float conv3x3_dx_at(const float* dy, const float* w, int64_t ci, int64_t p, int64_t q, int64_t Cin,
                    int64_t Cout, int64_t H, int64_t W) {
  float acc = 0.f;
  for (int64_t co = 0; co < Cout; ++co)
    for (int64_t di = 0; di < 3; ++di) {
      int64_t i = p - (di - 1);
      if (i < 0 || i >= H) continue;
      for (int64_t dj = 0; dj < 3; ++dj) {
        int64_t j = q - (dj - 1);
        if (j < 0 || j >= W) continue;
        acc += w[((co * Cin + ci) * 3 + di) * 3 + dj] * dy[(co * H + i) * W + j];
      }
    }
  return acc;
}

void conv3x3_dx(const float* dy, const float* w, float* dx, int64_t Cin, int64_t Cout, int64_t H,
                int64_t W) {
  for (int64_t ci = 0; ci < Cin; ++ci)
    for (int64_t p = 0; p < H; ++p) {
      float* dxrow = dx + (ci * H + p) * W;
      dxrow[0] += conv3x3_dx_at(dy, w, ci, p, int64_t(0), Cin, Cout, H, W);
      if (W == 1) continue;
      int64_t q = 1;
      for (; q + 8 <= W - 1; q += 8) {
        __m256 acc = _mm256_setzero_ps();
        for (int64_t co = 0; co < Cout; ++co)
          for (int64_t di = 0; di < 3; ++di) {
            int64_t i = p - (di - 1);
            if (i < 0 || i >= H) continue;
            const float* dyrow = dy + (co * H + i) * W;
            const float* wrow = w + ((co * Cin + ci) * 3 + di) * 3;
            for (int64_t dj = 0; dj < 3; ++dj)
              acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_set1_ps(wrow[dj]),
                                                     _mm256_loadu_ps(dyrow + q - (dj - 1))));
          }
        _mm256_storeu_ps(dxrow + q,
                         _mm256_add_ps(_mm256_loadu_ps(dxrow + q), acc));
      }
      for (; q < W; ++q) dxrow[q] += conv3x3_dx_at(dy, w, ci, p, q, Cin, Cout, H, W);
    }
}

void conv3x3_dw(const float* x, const float* dy, float* dw, float* db, int64_t Cin, int64_t Cout,
                int64_t H, int64_t W) {
  for (int64_t co = 0; co < Cout; ++co) {
    if (db) db[co] += reduce_add(dy + co * H * W, H * W);
    for (int64_t ci = 0; ci < Cin; ++ci)
      for (int64_t di = 0; di < 3; ++di)
        for (int64_t dj = 0; dj < 3; ++dj) {
          int64_t lo = (dj == 0) ? 1 : 0;
          int64_t hi = (dj == 2) ? W - 1 : W;
          if (hi <= lo) continue;
          float total = 0.f;
          for (int64_t i = 0; i < H; ++i) {
            int64_t ii = i + di - 1;
            if (ii < 0 || ii >= H) continue;
            total += dot_blocked(dy + (co * H + i) * W + lo, x + (ci * H + ii) * W + lo + (dj - 1),
                                 hi - lo);
          }
          dw[((co * Cin + ci) * 3 + di) * 3 + dj] += total;
        }
  }
}

void add(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_acc(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i,
                     _mm256_add_ps(_mm256_loadu_ps(out + i),
                                   _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i))));
  for (; i < n; ++i) out[i] += a[i] * b[i];
}

void scale(const float* x, float s, float* out, int64_t n) {
  __m256 sv = _mm256_set1_ps(s);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), sv));
  for (; i < n; ++i) out[i] = x[i] * s;
}

void axpy(float alpha, const float* x, float* y, int64_t n) {
  __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i),
                                          _mm256_mul_ps(av, _mm256_loadu_ps(x + i))));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

const Dispatch kAvx2 = {
    "avx2",     matmul, matmul_acc_bt, matmul_acc_at, conv3x3, conv3x3_dx,
    conv3x3_dw, add,    sub,           mul,           mul_acc, scale,
    axpy,       reduce_add, dot_blocked,
};

}  // namespace

const Dispatch& table() { return kAvx2; }

}  // namespace lvs::kern::avx2
