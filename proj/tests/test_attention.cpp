#include <cmath>
#include <vector>

#include "doctest.h"
#include "lvs/attention.hpp"
#include "lvs/rng.hpp"
#include "test_util.hpp"

using namespace lvs;
using namespace lvs::test;

namespace {

template <typename T>
StdAttnParams<T> random_std_params(int64_t C, int64_t h, uint64_t seed) {
  // Scaled like 1/sqrt(C) so logits stay O(1) at any width.
  double a = 1.0 / std::sqrt(double(C));
  Rng rng(seed_for(seed, "std-attn"));
  StdAttnParams<T> p;
  p.heads = h;
  p.channels = C;
  int64_t dk = C / h;
  for (int64_t i = 0; i < h; ++i) {
    Tensor<T> wq({C, dk}), wk({C, dk}), wv({C, dk});
    fill_uniform(wq, rng, -a, a);
    fill_uniform(wk, rng, -a, a);
    fill_uniform(wv, rng, -a, a);
    p.w_q.push_back(std::move(wq));
    p.w_k.push_back(std::move(wk));
    p.w_v.push_back(std::move(wv));
  }
  p.w_o = Tensor<T>({C, C});
  fill_uniform(p.w_o, rng, -a, a);
  return p;
}

// Fully independent reference: plain nested loops, sequential sums.
std::vector<double> oracle_standard(const Tensor<double>& q, const Tensor<double>& keys,
                                    const StdAttnParams<double>& p) {
  int64_t C = p.channels, h = p.heads, dk = C / h, N = keys.dim(0);
  std::vector<double> cat(size_t(C), 0.0);
  for (int64_t i = 0; i < h; ++i) {
    std::vector<double> qh(size_t(dk), 0.0);
    for (int64_t k = 0; k < dk; ++k)
      for (int64_t c = 0; c < C; ++c) qh[size_t(k)] += q[c] * p.w_q[size_t(i)][c * dk + k];
    std::vector<double> logits(size_t(N), 0.0);
    for (int64_t n = 0; n < N; ++n) {
      double acc = 0;
      for (int64_t k = 0; k < dk; ++k) {
        double kh = 0;
        for (int64_t c = 0; c < C; ++c) kh += keys[n * C + c] * p.w_k[size_t(i)][c * dk + k];
        acc += qh[size_t(k)] * kh;
      }
      logits[size_t(n)] = acc / std::sqrt(double(dk));
    }
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double z = 0;
    for (double& v : logits) {
      v = std::exp(v - m);
      z += v;
    }
    for (int64_t n = 0; n < N; ++n)
      for (int64_t k = 0; k < dk; ++k) {
        double vh = 0;
        for (int64_t c = 0; c < C; ++c) vh += keys[n * C + c] * p.w_v[size_t(i)][c * dk + k];
        cat[size_t(i * dk + k)] += logits[size_t(n)] / z * vh;
      }
  }
  std::vector<double> out(size_t(C), 0.0);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t r = 0; r < C; ++r) out[size_t(c)] += cat[size_t(r)] * p.w_o[r * C + c];
  return out;
}

template <typename T>
StdAttnParams<T> cast_params(const StdAttnParams<double>& p) {
  StdAttnParams<T> out;
  out.heads = p.heads;
  out.channels = p.channels;
  for (const auto& w : p.w_q) out.w_q.push_back(w.template cast<T>());
  for (const auto& w : p.w_k) out.w_k.push_back(w.template cast<T>());
  for (const auto& w : p.w_v) out.w_v.push_back(w.template cast<T>());
  out.w_o = p.w_o.template cast<T>();
  return out;
}

template <typename T>
OtmAttnParams<T> cast_otm(const OtmAttnParams<double>& p) {
  OtmAttnParams<T> out;
  out.heads = p.heads;
  out.channels = p.channels;
  for (const auto& w : p.w_q) out.w_q.push_back(w.template cast<T>());
  out.w_o = p.w_o.template cast<T>();
  return out;
}

}  // namespace

TEST_CASE("attention flop model reproduces the cost tables") {
  for (int64_t h : {1, 2, 4, 8})
    CHECK(flop_count(AttnVariant::standard, 8, h, 32).flops == 18688);

  const std::pair<int64_t, int64_t> by_heads[] = {{1, 2304}, {2, 4608}, {4, 9216}, {8, 18432}};
  for (auto [h, want] : by_heads)
    CHECK(flop_count(AttnVariant::one_to_many, 8, h, 32).flops == want);

  const std::pair<int64_t, int64_t> std_by_n[] = {
      {4, 10368}, {8, 18688}, {16, 35328}, {32, 68608}, {64, 135168}};
  const std::pair<int64_t, int64_t> otm_by_n[] = {
      {4, 8704}, {8, 9216}, {16, 10240}, {32, 12288}, {64, 16384}};
  for (auto [n, want] : std_by_n) CHECK(flop_count(AttnVariant::standard, n, 4, 32).flops == want);
  for (auto [n, want] : otm_by_n)
    CHECK(flop_count(AttnVariant::one_to_many, n, 4, 32).flops == want);

  // Published speedups at N=8, d_k=32, rounded to one decimal.
  const std::pair<int64_t, int64_t> tenth_speedups[] = {{1, 81}, {2, 41}, {4, 20}, {8, 10}};
  for (auto [h, want] : tenth_speedups) {
    double r = double(flop_count(AttnVariant::standard, 8, h, 32).flops) /
               double(flop_count(AttnVariant::one_to_many, 8, h, 32).flops);
    CHECK(std::llround(r * 10.0) == want);
  }

  // Affine growth in N with the closed-form slopes.
  for (int64_t h : {1, 2, 4})
    for (int64_t dk : {8, 32})
      for (int64_t n : {1, 3, 9, 17}) {
        int64_t sstep = flop_count(AttnVariant::standard, n + 1, h, dk).flops -
                        flop_count(AttnVariant::standard, n, h, dk).flops;
        int64_t ostep = flop_count(AttnVariant::one_to_many, n + 1, h, dk).flops -
                        flop_count(AttnVariant::one_to_many, n, h, dk).flops;
        CHECK(sstep == 2 * dk * dk + dk);
        CHECK(ostep == h * dk);
      }

  CHECK_THROWS_AS(flop_count(AttnVariant::standard, 0, 1, 1), DimError);
}

TEST_CASE("degenerate key sets make attention query independent") {
  const int64_t C = 8, h = 2;
  auto p = random_std_params<double>(C, h, 1);
  Tensor<double> q1 = random_tensor<double>({C}, 2);
  Tensor<double> q2 = random_tensor<double>({C}, 3);

  SUBCASE("single key, standard") {
    Tensor<double> keys = random_tensor<double>({1, C}, 4);
    auto o1 = standard_cross_attention(q1, keys, p);
    auto o2 = standard_cross_attention(q2, keys, p);
    CHECK(max_abs_diff(o1, o2) == 0.0);

    // Equals the concat of per-head value projections pushed through w_o.
    int64_t dk = C / h;
    std::vector<double> cat(size_t(C), 0.0);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t k = 0; k < dk; ++k)
        for (int64_t c = 0; c < C; ++c)
          cat[size_t(i * dk + k)] += keys[c] * p.w_v[size_t(i)][c * dk + k];
    for (int64_t c = 0; c < C; ++c) {
      double want = 0;
      for (int64_t r = 0; r < C; ++r) want += cat[size_t(r)] * p.w_o[r * C + c];
      CHECK(o1[c] == doctest::Approx(want).epsilon(1e-12));
    }
  }

  SUBCASE("identical keys, standard") {
    Tensor<double> row = random_tensor<double>({C}, 5);
    Tensor<double> keys({5, C});
    for (int64_t n = 0; n < 5; ++n)
      for (int64_t c = 0; c < C; ++c) keys[n * C + c] = row[c];
    auto o1 = standard_cross_attention(q1, keys, p);
    auto o2 = standard_cross_attention(q2, keys, p);
    CHECK(max_abs_diff(o1, o2) == 0.0);
  }

  SUBCASE("single delta, one-to-many") {
    OtmAttnParams<double> op;
    op.heads = h;
    op.channels = C;
    Rng rng(seed_for(6, "otm"));
    for (int64_t i = 0; i < h; ++i) {
      Tensor<double> w({C, C});
      fill_uniform(w, rng, -0.4, 0.4);
      op.w_q.push_back(std::move(w));
    }
    op.w_o = Tensor<double>({h * C, C});
    fill_uniform(op.w_o, rng, -0.4, 0.4);

    Tensor<double> d0 = random_tensor<double>({1, C}, 7);
    auto o1 = one_to_many_attention(q1, d0, op);
    auto o2 = one_to_many_attention(q2, d0, op);
    CHECK(max_abs_diff(o1, o2) == 0.0);
    for (int64_t c = 0; c < C; ++c) {
      double want = 0;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t r = 0; r < C; ++r) want += d0[r] * op.w_o[(i * C + r) * C + c];
      CHECK(o1[c] == doctest::Approx(want).epsilon(1e-12));
    }

    // All-equal deltas behave the same way at any N.
    Tensor<double> same({6, C});
    for (int64_t n = 0; n < 6; ++n)
      for (int64_t c = 0; c < C; ++c) same[n * C + c] = d0[c];
    auto o3 = one_to_many_attention(q1, same, op);
    CHECK(max_abs_diff(o3, o1) < 1e-12);
  }
}

TEST_CASE("standard attention matches a naive oracle") {
  struct Cfg {
    int64_t C, h, N;
  };
  for (Cfg cfg : {Cfg{8, 2, 5}, Cfg{32, 4, 8}, Cfg{16, 1, 3}}) {
    auto p = random_std_params<double>(cfg.C, cfg.h, uint64_t(cfg.C * 100 + cfg.N));
    Tensor<double> q = random_tensor<double>({cfg.C}, uint64_t(cfg.C + 1));
    Tensor<double> keys = random_tensor<double>({cfg.N, cfg.C}, uint64_t(cfg.C + 2));

    auto want = oracle_standard(q, keys, p);
    auto got64 = standard_cross_attention(q, keys, p);
    for (int64_t c = 0; c < cfg.C; ++c) CHECK(std::abs(got64[c] - want[size_t(c)]) < 1e-12);

    auto got32 = standard_cross_attention(q.cast<float>(), keys.cast<float>(), cast_params<float>(p));
    for (int64_t c = 0; c < cfg.C; ++c) CHECK(std::abs(double(got32[c]) - want[size_t(c)]) < 1e-5);
  }
}

TEST_CASE("folded one-to-many attention equals standard attention") {
  const int64_t cs[] = {8, 32};
  const int64_t hs[] = {1, 2, 4};
  const int64_t ns[] = {4, 8, 16};
  double worst64 = 0, worst32 = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    int64_t C = cs[seed % 2], h = hs[(seed / 2) % 3], N = ns[(seed / 6) % 3];
    auto p = random_std_params<double>(C, h, seed);
    auto folded = fold_otm_params(p);
    Tensor<double> q = random_tensor<double>({C}, seed_for(seed, "q"));
    Tensor<double> keys = random_tensor<double>({N, C}, seed_for(seed, "k"));

    auto a = standard_cross_attention(q, keys, p);
    auto b = one_to_many_attention(q, keys, folded);
    worst64 = std::max(worst64, max_abs_diff(a, b));

    auto a32 = standard_cross_attention(q.cast<float>(), keys.cast<float>(), cast_params<float>(p));
    auto b32 = one_to_many_attention(q.cast<float>(), keys.cast<float>(), cast_otm<float>(folded));
    worst32 = std::max(worst32, max_abs_diff(a32, b32));
  }
  CHECK(worst64 < 1e-10);
  CHECK(worst32 < 1e-5);
}

TEST_CASE("one-to-many attention ignores view order") {
  const int64_t C = 16, h = 2, N = 8;
  auto folded = fold_otm_params(random_std_params<double>(C, h, 11));
  auto p32 = cast_otm<float>(folded);
  Tensor<float> q = random_tensor<float>({C}, 12);
  Tensor<float> deltas = random_tensor<float>({N, C}, 13);

  const int64_t perm[N] = {5, 2, 7, 0, 3, 6, 1, 4};
  Tensor<float> shuffled({N, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) shuffled[n * C + c] = deltas[perm[n] * C + c];

  auto a = one_to_many_attention(q, deltas, p32);
  auto b = one_to_many_attention(q, shuffled, p32);
  CHECK(max_abs_diff(a, b) < 1e-6);
}

TEST_CASE("lifted attention matches the per-texel form") {
  Tape<double> tape;
  const int64_t C = 8, h = 2, M = 4;
  const Shape lead = {2, 2, 3};
  int64_t P = 2 * 2 * 3;

  auto folded = fold_otm_params(random_std_params<double>(C, h, 21));
  OtmAttnVars vars;
  for (const auto& w : folded.w_q) vars.w_q.push_back(tape.leaf(w));
  vars.w_o = tape.leaf(folded.w_o);

  Tensor<double> q = random_tensor<double>({2, 2, 3, C}, 22);
  Tensor<double> deltas = random_tensor<double>({2, 2, 3, M, C}, 23);
  Var out = otm_attention(tape, tape.leaf(q), tape.leaf(deltas), vars);
  CHECK(tape.value(out).shape() == Shape{2, 2, 3, C});

  for (int64_t p = 0; p < P; ++p) {
    Tensor<double> qp({C});
    for (int64_t c = 0; c < C; ++c) qp[c] = q[p * C + c];
    Tensor<double> dp({M, C});
    for (int64_t i = 0; i < M * C; ++i) dp[i] = deltas[p * M * C + i];
    auto want = one_to_many_attention(qp, dp, folded);
    for (int64_t c = 0; c < C; ++c)
      CHECK(std::abs(tape.value(out)[p * C + c] - want[c]) < 1e-12);
  }
}

TEST_CASE("residual blocks are identity when their outputs are zeroed") {
  Tape<double> tape;
  const int64_t L = 2, H = 3, W = 4, C = 8, M = 2, h = 2;
  Var v = tape.leaf(random_tensor<double>({L, H, W, C}, 31));
  Var deltas = tape.leaf(random_tensor<double>({L, H, W, M, C}, 32));

  AttendParams ap;
  for (int64_t i = 0; i < h; ++i) ap.attn.w_q.push_back(tape.leaf(random_tensor<double>({C, C}, 33 + uint64_t(i))));
  ap.attn.w_o = tape.leaf(Tensor<double>::zeros({h * C, C}));
  ap.norm_gain = tape.leaf(Tensor<double>::full({C}, 1.0));
  Var va = attend_residual(tape, v, deltas, ap);
  CHECK(max_abs_diff(tape.value(va), tape.value(v)) == 0.0);

  ConvMlpParams mp;
  mp.norm_gain = tape.leaf(Tensor<double>::full({C}, 1.0));
  mp.w1 = tape.leaf(random_tensor<double>({C, C, 3, 3}, 35));
  mp.b1 = tape.leaf(random_tensor<double>({C}, 36));
  mp.w2 = tape.leaf(Tensor<double>::zeros({C, C, 3, 3}));
  mp.b2 = tape.leaf(Tensor<double>::zeros({C}));
  Var vc = conv_mlp_residual(tape, v, mp);
  CHECK(max_abs_diff(tape.value(vc), tape.value(v)) == 0.0);

  FeatureVolume<double> fv{v, 0, Frustum{}};
  FusionParams fp{ap, {mp}};
  auto out = fusion_block(tape, fv, deltas, fp);
  CHECK(max_abs_diff(tape.value(out.V), tape.value(v)) == 0.0);
}

TEST_CASE("zeroed scores average the views head-wise") {
  Tape<double> tape;
  const int64_t L = 1, H = 2, W = 3, C = 4, M = 3, h = 2;
  Var v = tape.leaf(random_tensor<double>({L, H, W, C}, 41));
  Tensor<double> deltas = random_tensor<double>({L, H, W, M, C}, 42);
  Tensor<double> wo = random_tensor<double>({h * C, C}, 43);

  AttendParams ap;
  ap.zero_scores = true;
  for (int64_t i = 0; i < h; ++i) ap.attn.w_q.push_back(tape.leaf(random_tensor<double>({C, C}, 44 + uint64_t(i))));
  ap.attn.w_o = tape.leaf(wo);
  ap.norm_gain = tape.leaf(random_tensor<double>({C}, 46, 0.5, 1.5));
  Var out = attend_residual(tape, v, tape.leaf(deltas), ap);

  for (int64_t p = 0; p < L * H * W; ++p)
    for (int64_t c = 0; c < C; ++c) {
      double mean_proj = 0;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t r = 0; r < C; ++r) {
          double mean = 0;
          for (int64_t m = 0; m < M; ++m) mean += deltas[(p * M + m) * C + r];
          mean_proj += mean / M * wo[(i * C + r) * C + c];
        }
      double want = tape.value(v)[p * C + c] + mean_proj;
      CHECK(tape.value(out)[p * C + c] == doctest::Approx(want).epsilon(1e-12));
    }

  // With scores gone the gain cannot influence the result.
  AttendParams ap2 = ap;
  ap2.norm_gain = tape.leaf(random_tensor<double>({C}, 47, 0.5, 1.5));
  Var out2 = attend_residual(tape, v, tape.leaf(deltas), ap2);
  CHECK(max_abs_diff(tape.value(out2), tape.value(out)) == 0.0);
}

TEST_CASE("fusion block finite differences") {
  const int64_t L = 2, H = 4, W = 4, C = 8, M = 2, h = 2;
  Tensor<double> v0 = random_tensor<double>({L, H, W, C}, 51, -0.8, 0.8);
  Tensor<double> d0 = random_tensor<double>({L, H, W, M, C}, 52, -0.8, 0.8);
  Tensor<double> wq1 = random_tensor<double>({C, C}, 53, -0.4, 0.4);
  Tensor<double> wq2 = random_tensor<double>({C, C}, 54, -0.4, 0.4);
  Tensor<double> wo = random_tensor<double>({h * C, C}, 55, -0.4, 0.4);
  Tensor<double> g1 = random_tensor<double>({C}, 56, 0.5, 1.5);
  Tensor<double> g2 = random_tensor<double>({C}, 57, 0.5, 1.5);
  Tensor<double> w1 = random_tensor<double>({C, C, 3, 3}, 58, -0.2, 0.2);
  Tensor<double> b1 = random_tensor<double>({C}, 59, -0.2, 0.2);
  Tensor<double> w2 = random_tensor<double>({C, C, 3, 3}, 60, -0.2, 0.2);
  Tensor<double> b2 = random_tensor<double>({C}, 61, -0.2, 0.2);

  CHECK(run_and_report(
      {v0, d0, wq1, wq2, wo, g1, g2, w1, b1, w2, b2},
      [&](Tape<double>& t, const std::vector<Var>& x) {
        FusionParams fp;
        fp.attend.attn.w_q = {x[2], x[3]};
        fp.attend.attn.w_o = x[4];
        fp.attend.norm_gain = x[5];
        ConvMlpParams mp{x[6], x[7], x[8], x[9], x[10]};
        fp.mlps = {mp};
        FeatureVolume<double> fv{x[0], 0, Frustum{}};
        auto out = fusion_block(t, fv, x[1], fp);
        return weighted_sum(t, out.V, 62);
      }));
}
