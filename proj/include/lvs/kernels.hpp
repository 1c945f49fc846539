#pragma once

#include <cstdint>

#include "lvs/kernels_ref.hpp"

namespace lvs::kern {

// Runtime-selected f32 kernel table. The scalar entries are the reference
// implementations; the AVX2 entries, when present, are bit-identical to them
// (see kernels_ref.hpp for the evaluation-order contract). f64 work always
// goes through the scalar templates directly.
struct Dispatch {
  const char* isa;

  void (*matmul_f32)(const float*, const float*, float*, int64_t, int64_t, int64_t);
  void (*matmul_acc_bt_f32)(const float*, const float*, float*, int64_t, int64_t, int64_t);
  void (*matmul_acc_at_f32)(const float*, const float*, float*, int64_t, int64_t, int64_t);

  void (*conv3x3_f32)(const float*, const float*, const float*, float*, int64_t, int64_t, int64_t,
                      int64_t);
  void (*conv3x3_dx_f32)(const float*, const float*, float*, int64_t, int64_t, int64_t, int64_t);
  void (*conv3x3_dw_f32)(const float*, const float*, float*, float*, int64_t, int64_t, int64_t,
                         int64_t);

  void (*add_f32)(const float*, const float*, float*, int64_t);
  void (*sub_f32)(const float*, const float*, float*, int64_t);
  void (*mul_f32)(const float*, const float*, float*, int64_t);
  void (*mul_acc_f32)(const float*, const float*, float*, int64_t);
  void (*scale_f32)(const float*, float, float*, int64_t);
  void (*axpy_f32)(float, const float*, float*, int64_t);

  float (*reduce_add_f32)(const float*, int64_t);
  float (*dot_blocked_f32)(const float*, const float*, int64_t);
};

const Dispatch& scalar_table();

// Null when the binary was built without AVX2 support or the CPU lacks it.
const Dispatch* avx2_table();

bool cpu_has_avx2();

// Table picked once at first use: AVX2 when available, overridable with
// LVS_ISA=scalar or LVS_ISA=avx2 in the environment.
const Dispatch& active();

}  // namespace lvs::kern
