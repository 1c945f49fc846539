#include "doctest.h"
#include "lvs/gradcheck.hpp"
#include "lvs/tape.hpp"
#include "test_util.hpp"

using namespace lvs;
using namespace lvs::test;

namespace {

GradCheckReport run_check(const std::vector<Tensor<double>>& leaves,
                          std::function<Var(Tape<double>&, const std::vector<Var>&)> build) {
  auto report = check_gradients(leaves, build);
  if (!report.pass) MESSAGE(report.worst_where);
  return report;
}

}  // namespace

TEST_CASE("tape forward values") {
  Tape<double> t;
  Var x = t.leaf(Tensor<double>({3}, {0.0, 1.0, -2.0}));
  CHECK(t.value(t.sigmoid(x))[0] == doctest::Approx(0.5));
  CHECK(t.value(t.tanh_(x))[0] == 0.0);
  CHECK(t.value(t.gelu(x))[0] == 0.0);
  CHECK(t.value(t.gelu(x))[1] == doctest::Approx(0.8413447461).epsilon(1e-9));
  CHECK(t.value(t.abs_(x))[2] == 2.0);
  CHECK(t.value(t.clamp_min(x, 0.5))[2] == 0.5);
  CHECK(t.value(t.offset(x, 3.0))[2] == 1.0);
  CHECK(t.value(t.scale(x, -2.0))[1] == -2.0);

  Var u = t.leaf(Tensor<double>({2}, {3.0, 3.0}));
  auto sm = t.value(t.softmax(u, -1));
  CHECK(sm[0] == doctest::Approx(0.5));
  CHECK(sm[0] + sm[1] == doctest::Approx(1.0));

  // softmax is shift invariant
  Var v1 = t.leaf(Tensor<double>({3}, {0.1, 0.7, -0.3}));
  Var v2 = t.offset(v1, 100.0);
  auto s1 = t.value(t.softmax(v1, 0)), s2 = t.value(t.softmax(v2, 0));
  for (int i = 0; i < 3; ++i) CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-12));
}

TEST_CASE("fan-out accumulates gradients from every consumer") {
  // y = sum(x*x + x)  =>  dy/dx = 2x + 1 exactly
  Tape<double> t;
  Tensor<double> xv = random_tensor<double>({5}, 17);
  Var x = t.leaf(xv);
  Var y = t.sum_all(t.add(t.mul(x, x), x));
  t.backward(y);
  for (int64_t i = 0; i < 5; ++i) CHECK(t.grad(x)[i] == doctest::Approx(2 * xv[i] + 1).epsilon(1e-14));
}

TEST_CASE("nodes that cannot reach the loss get no gradient") {
  Tape<double> t;
  Var x = t.leaf(random_tensor<double>({4}, 3));
  Var used = t.sigmoid(x);
  Var unused = t.tanh_(x);
  (void)unused;
  t.backward(t.sum_all(used));
  CHECK(t.grad(x).numel() == 4);
  CHECK(t.grad(unused).numel() == 0);
}

TEST_CASE("elementwise op gradients match finite differences") {
  auto x = random_tensor<double>({2, 6}, 21);
  auto b = random_tensor<double>({2, 6}, 22);

  CHECK(run_check({x, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.add(v[0], v[1]), 1);
        }).pass);
  CHECK(run_check({x, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.sub(v[0], v[1]), 2);
        }).pass);
  CHECK(run_check({x, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.mul(v[0], v[1]), 3);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.scale(t.offset(v[0], 0.7), -1.3), 4);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.sigmoid(v[0]), 5);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.tanh_(v[0]), 6);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.gelu(v[0]), 7);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.recip(t.offset(v[0], 3.0)), 8);
        }).pass);

  // Keep abs/clamp inputs away from their kinks.
  Tensor<double> far({2, 6});
  Rng rng(23);
  for (int64_t i = 0; i < far.numel(); ++i)
    far[i] = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.3, 1.0);
  CHECK(run_check({far}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.abs_(v[0]), 9);
        }).pass);
  CHECK(run_check({far}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.clamp_min(v[0], 0.05), 10);
        }).pass);
}

TEST_CASE("softmax and reduction gradients match finite differences") {
  auto x = random_tensor<double>({3, 4}, 31);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.softmax(v[0], -1), 11);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.softmax(v[0], 0), 12);
        }).pass);
  auto y = random_tensor<double>({2, 3, 2}, 32);
  CHECK(run_check({y}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.softmax(v[0], 1), 13);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.mean_all(t.mul(v[0], v[0]));
        }).pass);
}

TEST_CASE("linear algebra gradients match finite differences") {
  auto A = random_tensor<double>({3, 4}, 41);
  auto B = random_tensor<double>({4, 5}, 42);
  CHECK(run_check({A, B}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.matmul(v[0], v[1]), 14);
        }).pass);

  auto X = random_tensor<double>({2, 2, 4, 5}, 43);  // batch of 2, Cin 2
  auto W = random_tensor<double>({3, 2, 3, 3}, 44);
  auto bias = random_tensor<double>({3}, 45);
  CHECK(run_check({X, W, bias}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.conv3x3(v[0], v[1], v[2]), 15);
        }).pass);
  CHECK(run_check({X, W}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.conv3x3(v[0], v[1], Var{}), 16);
        }).pass);

  auto g = random_tensor<double>({6}, 46, 0.5, 1.5);
  auto xr = random_tensor<double>({4, 6}, 47);
  CHECK(run_check({xr, g}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.rms_norm(v[0], v[1]), 17);
        }).pass);

  auto xb = random_tensor<double>({3, 4}, 48);
  auto bb = random_tensor<double>({4}, 49);
  CHECK(run_check({xb, bb}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.add_bias(v[0], v[1]), 18);
        }).pass);
}

TEST_CASE("shape op gradients match finite differences") {
  auto x = random_tensor<double>({2, 4, 6}, 51);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.mean_pool2(v[0]), 19);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.resize_bilinear(v[0], 8, 12), 20);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.resize_bilinear(v[0], 2, 3), 21);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.reshape(v[0], {8, 6}), 22);
        }).pass);
  CHECK(run_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.slice_last(v[0], 1, 3), 23);
        }).pass);

  auto a = random_tensor<double>({3, 2}, 52);
  auto b = random_tensor<double>({3, 4}, 53);
  CHECK(run_check({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.concat_last({v[0], v[1]}), 24);
        }).pass);

  auto rows = random_tensor<double>({3, 5}, 54);
  auto s = random_tensor<double>({3}, 55);
  CHECK(run_check({rows, s}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.row_scale(v[0], v[1]), 25);
        }).pass);

  auto w = random_tensor<double>({3, 4}, 56);
  auto tok = random_tensor<double>({3, 4, 5}, 57);
  CHECK(run_check({w, tok}, [](Tape<double>& t, const std::vector<Var>& v) {
          return weighted_sum(t, t.mix_tokens(v[0], v[1]), 26);
        }).pass);
}

TEST_CASE("composite chain gradient matches finite differences") {
  auto X = random_tensor<double>({1, 2, 4, 4}, 61);
  auto W = random_tensor<double>({2, 2, 3, 3}, 62);
  auto bias = random_tensor<double>({2}, 63);
  auto P = random_tensor<double>({8, 3}, 64);
  CHECK(run_check({X, W, bias, P}, [](Tape<double>& t, const std::vector<Var>& v) {
          Var h = t.gelu(t.conv3x3(v[0], v[1], v[2]));
          Var flat = t.reshape(t.mean_pool2(h), {4, 2});
          Var out = t.softmax(t.matmul(flat, t.reshape(v[3], {2, 12})), -1);
          return weighted_sum(t, out, 27);
        }).pass);
}

TEST_CASE("bilinear resize fixed points") {
  Tape<double> t;
  // Constant field stays constant under any resize.
  Var c = t.leaf(Tensor<double>::full({1, 4, 6}, 2.5));
  auto up = t.value(t.resize_bilinear(c, 8, 12));
  for (int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(2.5).epsilon(1e-15));

  // Interior of a x2 upsampled horizontal ramp is linear with slope 1/2.
  Tensor<double> ramp({1, 2, 8});
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 8; ++j) ramp(int64_t(0), i, j) = double(j);
  Var r = t.leaf(ramp);
  auto up2 = t.value(t.resize_bilinear(r, 4, 16));
  for (int64_t j = 2; j < 14; ++j)
    CHECK(up2(int64_t(0), int64_t(1), j) - up2(int64_t(0), int64_t(1), j - 1) ==
          doctest::Approx(0.5).epsilon(1e-12));

  // Identity resize is exact.
  Var x = t.leaf(random_tensor<double>({2, 3, 5}, 71));
  auto same = t.value(t.resize_bilinear(x, 3, 5));
  CHECK(max_abs_diff(same, t.value(x)) == 0.0);

  // mean_pool2 of a 2x2 block pattern averages exactly.
  Tensor<double> q({1, 2, 2}, {1.0, 2.0, 3.0, 6.0});
  CHECK(t.value(t.mean_pool2(t.leaf(q)))[0] == 3.0);
}

TEST_CASE("identical graphs replay bit-identically in f32") {
  auto build = [](uint64_t seed) {
    Tape<float> t;
    Var x = t.leaf(random_tensor<float>({2, 3, 8, 8}, seed));
    Var w = t.leaf(random_tensor<float>({3, 3, 3, 3}, seed + 1));
    Var b = t.leaf(random_tensor<float>({3}, seed + 2));
    Var h = t.gelu(t.conv3x3(x, w, b));
    Var loss = t.mean_all(t.mul(h, h));
    t.backward(loss);
    std::vector<float> out;
    out.push_back(t.value(loss)[0]);
    const auto& gx = t.grad(x);
    out.insert(out.end(), gx.vec().begin(), gx.vec().end());
    const auto& gw = t.grad(w);
    out.insert(out.end(), gw.vec().begin(), gw.vec().end());
    return out;
  };
  CHECK(bit_equal(build(99), build(99)));
}

TEST_CASE("tape flop counter is shape-driven and additive") {
  Tape<float> t;
  CHECK(t.flops() == 0);
  Var a = t.leaf(random_tensor<float>({4, 8}, 1));
  Var b = t.leaf(random_tensor<float>({8, 2}, 2));
  CHECK(t.flops() == 0);
  t.matmul(a, b);
  CHECK(t.flops() == 2 * 4 * 8 * 2);
  t.add(a, a);
  CHECK(t.flops() == 2 * 4 * 8 * 2 + 32);
}
