#pragma once

#include <cstdint>

// Scalar reference kernels. Every SIMD variant must reproduce these
// bit-for-bit, so each kernel pins an exact floating-point evaluation order:
//   * per-output reductions run in ascending index order, or
//   * reductions along a contiguous axis use 8 lane accumulators (lane = index
//     mod 8) combined as ((l0+l1)+(l2+l3)) + ((l4+l5)+(l6+l7)).
// Keep these loops free of reassociation tricks; the build disables FP
// contraction globally for the same reason.

namespace lvs::kern::ref {

template <typename T>
inline T dot_blocked(const T* a, const T* b, int64_t n) {
  T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  for (; i < n; ++i) acc[i & 7] += a[i] * b[i];
  T s01 = acc[0] + acc[1], s23 = acc[2] + acc[3];
  T s45 = acc[4] + acc[5], s67 = acc[6] + acc[7];
  return (s01 + s23) + (s45 + s67);
}

template <typename T>
inline T reduce_add(const T* x, int64_t n) {
  T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += x[i + j];
  for (; i < n; ++i) acc[i & 7] += x[i];
  T s01 = acc[0] + acc[1], s23 = acc[2] + acc[3];
  T s45 = acc[4] + acc[5], s67 = acc[6] + acc[7];
  return (s01 + s23) + (s45 + s67);
}

// C[M,N] = A[M,K] * B[K,N]; accumulation over k ascending.
template <typename T>
inline void matmul(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m)
    for (int64_t n = 0; n < N; ++n) {
      T acc = 0;
      for (int64_t k = 0; k < K; ++k) acc += A[m * K + k] * B[k * N + n];
      C[m * N + n] = acc;
    }
}

// dA[M,K] += dC[M,N] * B[K,N]^T; lane-blocked reduction over n.
template <typename T>
inline void matmul_acc_bt(const T* dC, const T* B, T* dA, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m)
    for (int64_t k = 0; k < K; ++k) dA[m * K + k] += dot_blocked(dC + m * N, B + k * N, N);
}

// dB[K,N] += A[M,K]^T * dC[M,N]; per output, contributions in ascending m.
template <typename T>
inline void matmul_acc_at(const T* A, const T* dC, T* dB, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m)
    for (int64_t k = 0; k < K; ++k) {
      T a = A[m * K + k];
      const T* dc = dC + m * N;
      T* db = dB + k * N;
      for (int64_t n = 0; n < N; ++n) db[n] += a * dc[n];
    }
}

// Single 3x3 tap sum for output texel (i,j). Out-of-bounds taps are skipped
// outright (not multiplied by zero) so boundary handling is identical across
// kernel variants. Tap order: ci, di, dj ascending.
template <typename T>
inline T conv3x3_at(const T* x, const T* w, T acc, int64_t co, int64_t i, int64_t j, int64_t Cin,
                    int64_t H, int64_t W) {
  for (int64_t ci = 0; ci < Cin; ++ci)
    for (int64_t di = 0; di < 3; ++di) {
      int64_t ii = i + di - 1;
      if (ii < 0 || ii >= H) continue;
      for (int64_t dj = 0; dj < 3; ++dj) {
        int64_t jj = j + dj - 1;
        if (jj < 0 || jj >= W) continue;
        acc += w[((co * Cin + ci) * 3 + di) * 3 + dj] * x[(ci * H + ii) * W + jj];
      }
    }
  return acc;
}

// y[Cout,H,W] = conv3x3(x[Cin,H,W], w[Cout,Cin,3,3]) + b[Cout], zero padding.
template <typename T>
inline void conv3x3(const T* x, const T* w, const T* b, T* y, int64_t Cin, int64_t Cout, int64_t H,
                    int64_t W) {
  for (int64_t co = 0; co < Cout; ++co)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j)
        y[(co * H + i) * W + j] = conv3x3_at(x, w, b ? b[co] : T(0), co, i, j, Cin, H, W);
}

// dx[Cin,H,W] += correlation of dy[Cout,H,W] with the flipped kernel.
// Tap order: co, di, dj ascending.
template <typename T>
inline void conv3x3_dx(const T* dy, const T* w, T* dx, int64_t Cin, int64_t Cout, int64_t H,
                       int64_t W) {
  for (int64_t ci = 0; ci < Cin; ++ci)
    for (int64_t p = 0; p < H; ++p)
      for (int64_t q = 0; q < W; ++q) {
        T acc = 0;
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
        dx[(ci * H + p) * W + q] += acc;
      }
}

// dw[Cout,Cin,3,3] += grad wrt weights, db[Cout] += grad wrt bias. Each dw
// element is a plane reduction: rows ascending, lane-blocked dot within a row.
template <typename T>
inline void conv3x3_dw(const T* x, const T* dy, T* dw, T* db, int64_t Cin, int64_t Cout, int64_t H,
                       int64_t W) {
  for (int64_t co = 0; co < Cout; ++co) {
    if (db) db[co] += reduce_add(dy + co * H * W, H * W);
    for (int64_t ci = 0; ci < Cin; ++ci)
      for (int64_t di = 0; di < 3; ++di)
        for (int64_t dj = 0; dj < 3; ++dj) {
          int64_t lo = (dj == 0) ? 1 : 0;
          int64_t hi = (dj == 2) ? W - 1 : W;
          if (hi <= lo) continue;
          T total = 0;
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

template <typename T>
inline void add(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
inline void sub(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
inline void mul(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

// out += a * b elementwise.
template <typename T>
inline void mul_acc(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

template <typename T>
inline void scale(const T* x, T s, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] * s;
}

// y += alpha * x.
template <typename T>
inline void axpy(T alpha, const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace lvs::kern::ref
