#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lvs/camera.hpp"
#include "lvs/fit.hpp"
#include "lvs/network.hpp"
#include "lvs/scenes.hpp"
#include "lvs/tensor.hpp"

namespace lvs {

// Unreadable or unwritable files, truncated or corrupt binary payloads.
// Maps to CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Structurally invalid configuration content: unknown or missing fields,
// wrong types, out-of-range values. Every message names the offending field.
// Maps to CLI exit code 1, alongside DimError.
class SchemaError : public std::runtime_error {
 public:
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// --- named tensor container ----------------------------------------------
//
// Binary layout: magic "QNTC", format version u32, entry count u32, then per
// entry [name_len u32, name bytes, dtype u8, ndim u32, dims u64 each, raw
// payload]. All integers and floats little-endian. unpack(pack(x)) is
// bit-identical; versions other than kTensorContainerVersion are rejected.

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

inline constexpr uint32_t kTensorContainerVersion = 1;

struct NamedTensor {
  std::string name;
  Dtype dtype = Dtype::f32;
  Shape dims;
  std::vector<float> f32;
  std::vector<double> f64;

  static NamedTensor wrap(std::string name, const Tensor<float>& t);
  static NamedTensor wrap(std::string name, const Tensor<double>& t);
  Tensor<float> as_f32() const;   // SchemaError when the entry holds f64
  Tensor<double> as_f64() const;  // SchemaError when the entry holds f32
  int64_t numel() const { return shape_numel(dims); }
};

std::string pack_tensors(const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> unpack_tensors(std::string_view bytes);
void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);
const NamedTensor& find_tensor(const std::vector<NamedTensor>& entries, std::string_view name);

// --- float and preview images ----------------------------------------------

// Portable float map. [H,W,3] encodes as "PF", [H,W] as "Pf"; the scale line
// is -1.0 (little-endian) and rows are stored bottom-up per the format, so
// tensors stay top-down in memory. decode(encode(x)) is bit-identical.
std::string encode_pfm(const Tensor<float>& image);
Tensor<float> decode_pfm(std::string_view bytes);
void save_pfm(const std::filesystem::path& path, const Tensor<float>& image);
Tensor<float> load_pfm(const std::filesystem::path& path);

// 8-bit P6 preview: values clamped to [0,1] and rounded to 0..255. Gray
// inputs replicate into rgb. decode returns values/255, so re-encoding a
// decoded preview reproduces the bytes exactly.
std::string encode_ppm(const Tensor<float>& image);
Tensor<float> decode_ppm(std::string_view bytes);
void save_ppm(const std::filesystem::path& path, const Tensor<float>& image);
Tensor<float> load_ppm(const std::filesystem::path& path);

// --- json schemas ------------------------------------------------------------
//
// Strict parsing: unknown fields are rejected, missing fields are rejected,
// and every error message carries the json path of the offending field.
// cameras json: {"cameras": [Camera...], "target": Camera}; each camera
// carries fx, fy, cx, cy, width, height, camera_from_world (row-major 16
// floats), near, far.

struct BundleCameras {
  std::vector<Camera> cams;
  Frustum target;
};

std::string cameras_to_json(const std::vector<Camera>& cams, const Frustum& target);
BundleCameras cameras_from_json(std::string_view text);

std::string scene_to_json(const PlaneScene& scene);
PlaneScene scene_from_json(std::string_view text);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view text);

// --- scene bundle ------------------------------------------------------------
//
// Directory layout: cameras.json, scene.json, and per input view a
// view_###.pfm float image with a view_###.ppm preview.

struct SceneBundle {
  std::vector<Camera> cams;
  std::vector<Tensor<float>> images;  // [H,W,3] per view
  Frustum target;
  PlaneScene scene;

  void validate() const;  // camera count = image count; image dims match cameras
};

void save_bundle(const std::filesystem::path& dir, const SceneBundle& bundle);
SceneBundle load_bundle(const std::filesystem::path& dir);

// --- fitted LDM artifact -------------------------------------------------

// Container entries: depth_logits, density_logits, blend_logits (f64) plus
// near_far [2]. The frustum camera is not stored; loading validates the
// logits and depth range against the bundle target the fit ran under.
void save_raw_ldm(const std::filesystem::path& path, const RawLdm<double>& raw);
RawLdm<double> load_raw_ldm(const std::filesystem::path& path, const Frustum& target);

}  // namespace lvs
