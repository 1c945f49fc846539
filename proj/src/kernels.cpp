#include "lvs/kernels.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace lvs::kern {

namespace {

void matmul_s(const float* A, const float* B, float* C, int64_t M, int64_t K, int64_t N) {
  ref::matmul(A, B, C, M, K, N);
}
void matmul_acc_bt_s(const float* dC, const float* B, float* dA, int64_t M, int64_t K, int64_t N) {
  ref::matmul_acc_bt(dC, B, dA, M, K, N);
}
void matmul_acc_at_s(const float* A, const float* dC, float* dB, int64_t M, int64_t K, int64_t N) {
  ref::matmul_acc_at(A, dC, dB, M, K, N);
}
void conv3x3_s(const float* x, const float* w, const float* b, float* y, int64_t Cin, int64_t Cout,
               int64_t H, int64_t W) {
  ref::conv3x3(x, w, b, y, Cin, Cout, H, W);
}
void conv3x3_dx_s(const float* dy, const float* w, float* dx, int64_t Cin, int64_t Cout, int64_t H,
                  int64_t W) {
  ref::conv3x3_dx(dy, w, dx, Cin, Cout, H, W);
}
void conv3x3_dw_s(const float* x, const float* dy, float* dw, float* db, int64_t Cin, int64_t Cout,
                  int64_t H, int64_t W) {
  ref::conv3x3_dw(x, dy, dw, db, Cin, Cout, H, W);
}
void add_s(const float* a, const float* b, float* out, int64_t n) { ref::add(a, b, out, n); }
void sub_s(const float* a, const float* b, float* out, int64_t n) { ref::sub(a, b, out, n); }
void mul_s(const float* a, const float* b, float* out, int64_t n) { ref::mul(a, b, out, n); }
void mul_acc_s(const float* a, const float* b, float* out, int64_t n) {
  ref::mul_acc(a, b, out, n);
}
void scale_s(const float* x, float s, float* out, int64_t n) { ref::scale(x, s, out, n); }
void axpy_s(float alpha, const float* x, float* y, int64_t n) { ref::axpy(alpha, x, y, n); }
float reduce_add_s(const float* x, int64_t n) { return ref::reduce_add(x, n); }
float dot_blocked_s(const float* a, const float* b, int64_t n) { return ref::dot_blocked(a, b, n); }

const Dispatch kScalar = {
    "scalar",      matmul_s, matmul_acc_bt_s, matmul_acc_at_s, conv3x3_s, conv3x3_dx_s,
    conv3x3_dw_s,  add_s,    sub_s,           mul_s,           mul_acc_s, scale_s,
    axpy_s,        reduce_add_s, dot_blocked_s,
};

}  // namespace

const Dispatch& scalar_table() { return kScalar; }

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

#if LVS_WITH_AVX2
namespace avx2 {
const Dispatch& table();
}
#endif

const Dispatch* avx2_table() {
#if LVS_WITH_AVX2
  if (cpu_has_avx2()) return &avx2::table();
#endif
  return nullptr;
}

const Dispatch& active() {
  static const Dispatch* picked = [] {
    const Dispatch* avx2 = avx2_table();
    const char* want = std::getenv("LVS_ISA");
    if (want && std::strcmp(want, "scalar") == 0) return &kScalar;
    if (want && std::strcmp(want, "avx2") == 0) {
      if (!avx2) {
        std::fprintf(stderr, "LVS_ISA=avx2 requested but AVX2 is unavailable\n");
        std::exit(1);
      }
      return avx2;
    }
    if (want && want[0] != '\0') {
      std::fprintf(stderr, "unknown LVS_ISA value '%s' (use scalar or avx2)\n", want);
      std::exit(1);
    }
    return avx2 ? avx2 : &kScalar;
  }();
  return *picked;
}

}  // namespace lvs::kern
