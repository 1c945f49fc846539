#include <cstring>

#include "doctest.h"
#include "lvs/kernels.hpp"
#include "test_util.hpp"

using namespace lvs;
using namespace lvs::test;

namespace {

// Independent matmul oracle: different loop order, double accumulation.
std::vector<double> matmul_oracle(const std::vector<double>& A, const std::vector<double>& B,
                                  int64_t M, int64_t K, int64_t N) {
  std::vector<double> C(M * N, 0.0);
  for (int64_t k = 0; k < K; ++k)
    for (int64_t m = 0; m < M; ++m)
      for (int64_t n = 0; n < N; ++n) C[m * N + n] += A[m * K + k] * B[k * N + n];
  return C;
}

// Independent conv oracle: explicit zero padding instead of tap skipping.
std::vector<double> conv_oracle(const std::vector<double>& x, const std::vector<double>& w,
                                const std::vector<double>& b, int64_t Cin, int64_t Cout, int64_t H,
                                int64_t W) {
  std::vector<double> y(Cout * H * W, 0.0);
  for (int64_t co = 0; co < Cout; ++co)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        double acc = b.empty() ? 0.0 : b[co];
        for (int64_t ci = 0; ci < Cin; ++ci)
          for (int64_t di = 0; di < 3; ++di)
            for (int64_t dj = 0; dj < 3; ++dj) {
              int64_t ii = i + di - 1, jj = j + dj - 1;
              double xv = (ii < 0 || ii >= H || jj < 0 || jj >= W) ? 0.0 : x[(ci * H + ii) * W + jj];
              acc += w[((co * Cin + ci) * 3 + di) * 3 + dj] * xv;
            }
        y[(co * H + i) * W + j] = acc;
      }
  return y;
}

std::vector<double> randvec(int64_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  Rng rng(seed);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

std::vector<float> to_f32(const std::vector<double>& v) {
  std::vector<float> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = float(v[i]);
  return out;
}

}  // namespace

TEST_CASE("matmul identity and zero") {
  const int64_t n = 5;
  std::vector<float> I(n * n, 0.f), A = to_f32(randvec(n * n, 7)), C(n * n);
  for (int64_t i = 0; i < n; ++i) I[i * n + i] = 1.f;
  kern::scalar_table().matmul_f32(A.data(), I.data(), C.data(), n, n, n);
  CHECK(bit_equal(A, C));
  kern::scalar_table().matmul_f32(I.data(), A.data(), C.data(), n, n, n);
  CHECK(bit_equal(A, C));
  std::vector<float> Z(n * n, 0.f);
  kern::scalar_table().matmul_f32(A.data(), Z.data(), C.data(), n, n, n);
  for (float v : C) CHECK(v == 0.f);
}

TEST_CASE("matmul matches independent oracle") {
  struct Case {
    int64_t M, K, N;
  } cases[] = {{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 1, 9}, {1, 17, 4}, {6, 32, 11}};
  uint64_t seed = 100;
  for (auto [M, K, N] : cases) {
    auto A = randvec(M * K, seed++), B = randvec(K * N, seed++);
    auto want = matmul_oracle(A, B, M, K, N);

    std::vector<double> C64(M * N);
    kern::ref::matmul(A.data(), B.data(), C64.data(), M, K, N);
    for (int64_t i = 0; i < M * N; ++i) CHECK(rel_err(C64[i], want[i]) < 1e-12);

    auto A32 = to_f32(A), B32 = to_f32(B);
    std::vector<float> C32(M * N);
    kern::scalar_table().matmul_f32(A32.data(), B32.data(), C32.data(), M, K, N);
    for (int64_t i = 0; i < M * N; ++i) CHECK(rel_err(C32[i], want[i]) < 1e-4);
  }
}

TEST_CASE("matmul gradient kernels satisfy the adjoint identity") {
  // For C = A*B and random dC: <dC, A*B> == <dA, A> == <dB, B> where
  // dA = dC*B^T and dB = A^T*dC.
  const int64_t M = 7, K = 13, N = 9;
  auto A = randvec(M * K, 21), B = randvec(K * N, 22), dC = randvec(M * N, 23);
  std::vector<double> C(M * N), dA(M * K, 0.0), dB(K * N, 0.0);
  kern::ref::matmul(A.data(), B.data(), C.data(), M, K, N);
  kern::ref::matmul_acc_bt(dC.data(), B.data(), dA.data(), M, K, N);
  kern::ref::matmul_acc_at(A.data(), dC.data(), dB.data(), M, K, N);
  double s = 0, sa = 0, sb = 0;
  for (int64_t i = 0; i < M * N; ++i) s += dC[i] * C[i];
  for (int64_t i = 0; i < M * K; ++i) sa += dA[i] * A[i];
  for (int64_t i = 0; i < K * N; ++i) sb += dB[i] * B[i];
  CHECK(rel_err(sa, s) < 1e-12);
  CHECK(rel_err(sb, s) < 1e-12);
}

TEST_CASE("dot_blocked and reduce_add match sequential sums") {
  for (int64_t n : {0, 1, 7, 8, 9, 64, 100, 1003}) {
    auto a = randvec(n, 40 + n), b = randvec(n, 80 + n);
    double want_dot = 0, want_sum = 0;
    for (int64_t i = 0; i < n; ++i) {
      want_dot += a[i] * b[i];
      want_sum += a[i];
    }
    CHECK(std::abs(kern::ref::dot_blocked(a.data(), b.data(), n) - want_dot) < 1e-10);
    CHECK(std::abs(kern::ref::reduce_add(a.data(), n) - want_sum) < 1e-10);
  }
}

TEST_CASE("conv3x3 delta kernel is identity") {
  const int64_t C = 2, H = 6, W = 5;
  auto x = to_f32(randvec(C * H * W, 55));
  // w[co][ci] = delta at center iff co == ci.
  std::vector<float> w(C * C * 9, 0.f);
  for (int64_t c = 0; c < C; ++c) w[((c * C + c) * 3 + 1) * 3 + 1] = 1.f;
  std::vector<float> y(C * H * W);
  kern::scalar_table().conv3x3_f32(x.data(), w.data(), nullptr, y.data(), C, C, H, W);
  CHECK(bit_equal(x, y));
}

TEST_CASE("conv3x3 box kernel counts in-bounds taps") {
  const int64_t H = 4, W = 7;
  std::vector<float> x(H * W, 1.f), w(9, 1.f), y(H * W);
  kern::scalar_table().conv3x3_f32(x.data(), w.data(), nullptr, y.data(), 1, 1, H, W);
  CHECK(y[0] == 4.f);                       // corner
  CHECK(y[3] == 6.f);                       // top edge
  CHECK(y[1 * W + 0] == 6.f);               // left edge
  CHECK(y[1 * W + 3] == 9.f);               // interior
  CHECK(y[(H - 1) * W + (W - 1)] == 4.f);   // opposite corner
}

TEST_CASE("conv3x3 matches independent oracle") {
  struct Case {
    int64_t Cin, Cout, H, W;
  } cases[] = {{1, 1, 3, 3}, {2, 3, 5, 9}, {4, 2, 1, 13}, {3, 3, 8, 8}, {1, 2, 2, 2}};
  uint64_t seed = 200;
  for (auto [Cin, Cout, H, W] : cases) {
    auto x = randvec(Cin * H * W, seed++);
    auto w = randvec(Cout * Cin * 9, seed++);
    auto b = randvec(Cout, seed++);
    auto want = conv_oracle(x, w, b, Cin, Cout, H, W);

    std::vector<double> y64(Cout * H * W);
    kern::ref::conv3x3(x.data(), w.data(), b.data(), y64.data(), Cin, Cout, H, W);
    for (size_t i = 0; i < want.size(); ++i) CHECK(std::abs(y64[i] - want[i]) < 1e-12);

    auto x32 = to_f32(x), w32 = to_f32(w), b32 = to_f32(b);
    std::vector<float> y32(Cout * H * W);
    kern::scalar_table().conv3x3_f32(x32.data(), w32.data(), b32.data(), y32.data(), Cin, Cout, H,
                                     W);
    for (size_t i = 0; i < want.size(); ++i) CHECK(std::abs(double(y32[i]) - want[i]) < 1e-5);
  }
}

TEST_CASE("conv3x3 gradients match directional finite differences") {
  const int64_t Cin = 2, Cout = 3, H = 5, W = 6;
  auto x = randvec(Cin * H * W, 301);
  auto w = randvec(Cout * Cin * 9, 302);
  auto b = randvec(Cout, 303);
  auto dy = randvec(Cout * H * W, 304);

  // s(x, w, b) = <dy, conv(x; w, b)>
  auto eval = [&](const std::vector<double>& xx, const std::vector<double>& ww,
                  const std::vector<double>& bb) {
    std::vector<double> y(Cout * H * W);
    kern::ref::conv3x3(xx.data(), ww.data(), bb.data(), y.data(), Cin, Cout, H, W);
    double s = 0;
    for (size_t i = 0; i < y.size(); ++i) s += dy[i] * y[i];
    return s;
  };

  std::vector<double> dx(x.size(), 0.0), dw(w.size(), 0.0), db(b.size(), 0.0);
  kern::ref::conv3x3_dx(dy.data(), w.data(), dx.data(), Cin, Cout, H, W);
  kern::ref::conv3x3_dw(x.data(), dy.data(), dw.data(), db.data(), Cin, Cout, H, W);

  const double eps = 1e-6;
  auto check_dir = [&](std::vector<double>& target, const std::vector<double>& grad,
                       uint64_t seed) {
    auto v = randvec(grad.size(), seed);
    double dot = 0;
    for (size_t i = 0; i < grad.size(); ++i) dot += grad[i] * v[i];
    auto plus = target, minus = target;
    for (size_t i = 0; i < target.size(); ++i) {
      plus[i] += eps * v[i];
      minus[i] -= eps * v[i];
    }
    double fd;
    if (&target == &x)
      fd = (eval(plus, w, b) - eval(minus, w, b)) / (2 * eps);
    else if (&target == &w)
      fd = (eval(x, plus, b) - eval(x, minus, b)) / (2 * eps);
    else
      fd = (eval(x, w, plus) - eval(x, w, minus)) / (2 * eps);
    CHECK(rel_err(dot, fd) < 1e-6);
  };
  check_dir(x, dx, 401);
  check_dir(w, dw, 402);
  check_dir(b, db, 403);
}

TEST_CASE("elementwise kernels") {
  auto a = to_f32(randvec(17, 500)), b = to_f32(randvec(17, 501));
  std::vector<float> out(17);
  const auto& t = kern::scalar_table();
  t.add_f32(a.data(), b.data(), out.data(), 17);
  for (int i = 0; i < 17; ++i) CHECK(out[i] == a[i] + b[i]);
  t.sub_f32(a.data(), b.data(), out.data(), 17);
  for (int i = 0; i < 17; ++i) CHECK(out[i] == a[i] - b[i]);
  t.mul_f32(a.data(), b.data(), out.data(), 17);
  for (int i = 0; i < 17; ++i) CHECK(out[i] == a[i] * b[i]);
  t.scale_f32(a.data(), 2.5f, out.data(), 17);
  for (int i = 0; i < 17; ++i) CHECK(out[i] == a[i] * 2.5f);
  std::vector<float> y0 = to_f32(randvec(17, 502)), y = y0;
  t.axpy_f32(0.5f, a.data(), y.data(), 17);
  for (int i = 0; i < 17; ++i) CHECK(y[i] == y0[i] + 0.5f * a[i]);
  y = y0;
  t.mul_acc_f32(a.data(), b.data(), y.data(), 17);
  for (int i = 0; i < 17; ++i) CHECK(y[i] == y0[i] + a[i] * b[i]);
}

TEST_CASE("avx2 kernel table is bit-identical to the scalar reference") {
  const kern::Dispatch* v = kern::avx2_table();
  if (!v) {
    MESSAGE("AVX2 unavailable on this machine, skipping");
    return;
  }
  const auto& s = kern::scalar_table();
  uint64_t seed = 900;

  struct MM {
    int64_t M, K, N;
  };
  struct CV {
    int64_t Cin, Cout, H, W;
  };

  // Shapes chosen to exercise vector bodies and scalar tails.
  for (auto [M, K, N] : {MM{1, 1, 1}, MM{3, 5, 7}, MM{4, 9, 8}, MM{5, 16, 21}, MM{2, 7, 33}}) {
    auto A = to_f32(randvec(M * K, seed++)), B = to_f32(randvec(K * N, seed++));
    auto dC = to_f32(randvec(M * N, seed++));
    std::vector<float> c1(M * N), c2(M * N);
    s.matmul_f32(A.data(), B.data(), c1.data(), M, K, N);
    v->matmul_f32(A.data(), B.data(), c2.data(), M, K, N);
    CHECK(bit_equal(c1, c2));

    auto dA1 = to_f32(randvec(M * K, seed)), dA2 = dA1;
    s.matmul_acc_bt_f32(dC.data(), B.data(), dA1.data(), M, K, N);
    v->matmul_acc_bt_f32(dC.data(), B.data(), dA2.data(), M, K, N);
    CHECK(bit_equal(dA1, dA2));

    auto dB1 = to_f32(randvec(K * N, seed)), dB2 = dB1;
    s.matmul_acc_at_f32(A.data(), dC.data(), dB1.data(), M, K, N);
    v->matmul_acc_at_f32(A.data(), dC.data(), dB2.data(), M, K, N);
    CHECK(bit_equal(dB1, dB2));
    seed += 3;
  }

  for (auto [Cin, Cout, H, W] : {CV{1, 1, 3, 3}, CV{2, 3, 5, 9}, CV{3, 2, 4, 21}, CV{2, 2, 1, 2},
                                 CV{1, 1, 2, 1}, CV{2, 4, 7, 16}}) {
    auto x = to_f32(randvec(Cin * H * W, seed++));
    auto w = to_f32(randvec(Cout * Cin * 9, seed++));
    auto b = to_f32(randvec(Cout, seed++));
    auto dy = to_f32(randvec(Cout * H * W, seed++));

    std::vector<float> y1(Cout * H * W), y2(Cout * H * W);
    s.conv3x3_f32(x.data(), w.data(), b.data(), y1.data(), Cin, Cout, H, W);
    v->conv3x3_f32(x.data(), w.data(), b.data(), y2.data(), Cin, Cout, H, W);
    CHECK(bit_equal(y1, y2));

    auto dx1 = to_f32(randvec(Cin * H * W, seed)), dx2 = dx1;
    s.conv3x3_dx_f32(dy.data(), w.data(), dx1.data(), Cin, Cout, H, W);
    v->conv3x3_dx_f32(dy.data(), w.data(), dx2.data(), Cin, Cout, H, W);
    CHECK(bit_equal(dx1, dx2));

    auto dw1 = to_f32(randvec(Cout * Cin * 9, seed + 1)), dw2 = dw1;
    auto db1 = to_f32(randvec(Cout, seed + 2)), db2 = db1;
    s.conv3x3_dw_f32(x.data(), dy.data(), dw1.data(), db1.data(), Cin, Cout, H, W);
    v->conv3x3_dw_f32(x.data(), dy.data(), dw2.data(), db2.data(), Cin, Cout, H, W);
    CHECK(bit_equal(dw1, dw2));
    CHECK(bit_equal(db1, db2));
    seed += 3;
  }

  for (int64_t n : {1, 7, 8, 9, 31, 64, 255}) {
    auto a = to_f32(randvec(n, seed++)), b = to_f32(randvec(n, seed++));
    std::vector<float> o1(n), o2(n);
    s.add_f32(a.data(), b.data(), o1.data(), n);
    v->add_f32(a.data(), b.data(), o2.data(), n);
    CHECK(bit_equal(o1, o2));
    s.sub_f32(a.data(), b.data(), o1.data(), n);
    v->sub_f32(a.data(), b.data(), o2.data(), n);
    CHECK(bit_equal(o1, o2));
    s.mul_f32(a.data(), b.data(), o1.data(), n);
    v->mul_f32(a.data(), b.data(), o2.data(), n);
    CHECK(bit_equal(o1, o2));
    s.scale_f32(a.data(), 1.7f, o1.data(), n);
    v->scale_f32(a.data(), 1.7f, o2.data(), n);
    CHECK(bit_equal(o1, o2));
    auto y1 = to_f32(randvec(n, seed)), y2 = y1;
    s.axpy_f32(-0.3f, a.data(), y1.data(), n);
    v->axpy_f32(-0.3f, a.data(), y2.data(), n);
    CHECK(bit_equal(y1, y2));
    y1 = to_f32(randvec(n, seed));
    y2 = y1;
    s.mul_acc_f32(a.data(), b.data(), y1.data(), n);
    v->mul_acc_f32(a.data(), b.data(), y2.data(), n);
    CHECK(bit_equal(y1, y2));
    CHECK(s.reduce_add_f32(a.data(), n) == v->reduce_add_f32(a.data(), n));
    CHECK(s.dot_blocked_f32(a.data(), b.data(), n) == v->dot_blocked_f32(a.data(), b.data(), n));
    seed += 1;
  }
}
