#include "lvs/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

namespace lvs {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need byte swaps");

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed on " + path.string());
}

// --- named tensor container ----------------------------------------------

namespace {

template <typename T>
void put_raw(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(reinterpret_cast<const char*>(p), n);
}

struct ByteReader {
  std::string_view buf;
  size_t pos = 0;

  void need(size_t n, const std::string& what) {
    if (n > buf.size() - pos) throw IoError("tensor container: truncated " + what);
  }
  template <typename T>
  T take(const std::string& what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string take_bytes(size_t n, const std::string& what) {
    need(n, what);
    std::string s(buf.substr(pos, n));
    pos += n;
    return s;
  }
};

}  // namespace

NamedTensor NamedTensor::wrap(std::string name, const Tensor<float>& t) {
  NamedTensor e;
  e.name = std::move(name);
  e.dtype = Dtype::f32;
  e.dims = t.shape();
  e.f32 = t.vec();
  return e;
}

NamedTensor NamedTensor::wrap(std::string name, const Tensor<double>& t) {
  NamedTensor e;
  e.name = std::move(name);
  e.dtype = Dtype::f64;
  e.dims = t.shape();
  e.f64 = t.vec();
  return e;
}

Tensor<float> NamedTensor::as_f32() const {
  if (dtype != Dtype::f32)
    throw SchemaError("tensor container: entry \"" + name + "\" holds f64, expected f32");
  return Tensor<float>(dims, f32);
}

Tensor<double> NamedTensor::as_f64() const {
  if (dtype != Dtype::f64)
    throw SchemaError("tensor container: entry \"" + name + "\" holds f32, expected f64");
  return Tensor<double>(dims, f64);
}

std::string pack_tensors(const std::vector<NamedTensor>& entries) {
  std::string out = "QNTC";
  put_raw<uint32_t>(out, kTensorContainerVersion);
  put_raw<uint32_t>(out, uint32_t(entries.size()));
  for (const NamedTensor& e : entries) {
    int64_t n = e.numel();
    int64_t held = e.dtype == Dtype::f32 ? int64_t(e.f32.size()) : int64_t(e.f64.size());
    if (held != n)
      throw DimError("pack_tensors: entry \"" + e.name + "\" holds " + std::to_string(held) +
                     " values but dims " + shape_str(e.dims) + " need " + std::to_string(n));
    put_raw<uint32_t>(out, uint32_t(e.name.size()));
    out += e.name;
    put_raw<uint8_t>(out, uint8_t(e.dtype));
    put_raw<uint32_t>(out, uint32_t(e.dims.size()));
    for (int64_t d : e.dims) put_raw<uint64_t>(out, uint64_t(d));
    if (e.dtype == Dtype::f32)
      put_bytes(out, e.f32.data(), size_t(n) * sizeof(float));
    else
      put_bytes(out, e.f64.data(), size_t(n) * sizeof(double));
  }
  return out;
}

std::vector<NamedTensor> unpack_tensors(std::string_view bytes) {
  ByteReader r{bytes};
  std::string magic = r.take_bytes(4, "magic");
  if (magic != "QNTC") throw IoError("tensor container: bad magic \"" + magic + "\"");
  uint32_t version = r.take<uint32_t>("version");
  if (version != kTensorContainerVersion)
    throw IoError("tensor container: unsupported version " + std::to_string(version));
  uint32_t count = r.take<uint32_t>("entry count");
  if (count > (1u << 20)) throw IoError("tensor container: implausible entry count");

  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string at = "entry " + std::to_string(i);
    NamedTensor e;
    uint32_t name_len = r.take<uint32_t>(at + " name length");
    if (name_len > (1u << 16)) throw IoError("tensor container: " + at + ": implausible name length");
    e.name = r.take_bytes(name_len, at + " name");
    uint8_t tag = r.take<uint8_t>(at + " dtype");
    if (tag > 1)
      throw IoError("tensor container: " + at + " (\"" + e.name + "\"): unknown dtype tag " +
                    std::to_string(tag));
    e.dtype = Dtype(tag);
    uint32_t ndim = r.take<uint32_t>(at + " rank");
    if (ndim > 16) throw IoError("tensor container: " + at + ": implausible rank");
    int64_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      uint64_t extent = r.take<uint64_t>(at + " dims");
      if (extent > (uint64_t(1) << 32)) throw IoError("tensor container: " + at + ": implausible extent");
      e.dims.push_back(int64_t(extent));
      n *= int64_t(extent);
      if (n > (int64_t(1) << 33)) throw IoError("tensor container: " + at + ": implausible element count");
    }
    if (e.dtype == Dtype::f32) {
      std::string raw = r.take_bytes(size_t(n) * sizeof(float), at + " (\"" + e.name + "\") payload");
      e.f32.resize(size_t(n));
      std::memcpy(e.f32.data(), raw.data(), raw.size());
    } else {
      std::string raw = r.take_bytes(size_t(n) * sizeof(double), at + " (\"" + e.name + "\") payload");
      e.f64.resize(size_t(n));
      std::memcpy(e.f64.data(), raw.data(), raw.size());
    }
    entries.push_back(std::move(e));
  }
  if (r.pos != bytes.size())
    throw IoError("tensor container: " + std::to_string(bytes.size() - r.pos) +
                  " trailing bytes after the last entry");
  return entries;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  write_file(path, pack_tensors(entries));
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  return unpack_tensors(read_file(path));
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& entries, std::string_view name) {
  for (const NamedTensor& e : entries)
    if (e.name == name) return e;
  throw SchemaError("tensor container: missing entry \"" + std::string(name) + "\"");
}

// --- pfm ---------------------------------------------------------------------

namespace {

// Reads one whitespace-delimited header token starting at pos.
std::string pfm_token(std::string_view bytes, size_t& pos, const char* what) {
  while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw IoError(std::string("pfm: missing ") + what);
  return std::string(bytes.substr(start, pos - start));
}

int64_t parse_extent(const std::string& tok, const char* what, const char* format) {
  size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || v < 1)
    throw IoError(std::string(format) + ": bad " + what + " \"" + tok + "\"");
  return v;
}

}  // namespace

std::string encode_pfm(const Tensor<float>& image) {
  bool color = image.rank() == 3 && image.dim(2) == 3;
  if (!color && image.rank() != 2)
    throw DimError("encode_pfm: image must be [H,W,3] or [H,W], got " + shape_str(image.shape()));
  int64_t H = image.dim(0), W = image.dim(1), C = color ? 3 : 1;
  if (H < 1 || W < 1) throw DimError("encode_pfm: empty image " + shape_str(image.shape()));

  std::string out = color ? "PF\n" : "Pf\n";
  out += std::to_string(W) + " " + std::to_string(H) + "\n-1.0\n";
  for (int64_t r = H - 1; r >= 0; --r)
    put_bytes(out, image.data() + r * W * C, size_t(W * C) * sizeof(float));
  return out;
}

Tensor<float> decode_pfm(std::string_view bytes) {
  size_t pos = 0;
  std::string magic = pfm_token(bytes, pos, "magic");
  if (magic != "PF" && magic != "Pf")
    throw IoError("pfm: bad magic \"" + magic + "\"");
  int64_t C = magic == "PF" ? 3 : 1;
  int64_t W = parse_extent(pfm_token(bytes, pos, "width"), "width", "pfm");
  int64_t H = parse_extent(pfm_token(bytes, pos, "height"), "height", "pfm");
  std::string scale_tok = pfm_token(bytes, pos, "scale");
  double scale = 0;
  try {
    size_t used = 0;
    scale = std::stod(scale_tok, &used);
    if (used != scale_tok.size()) scale = 0;
  } catch (const std::exception&) {
    scale = 0;
  }
  if (scale == 0) throw IoError("pfm: bad scale \"" + scale_tok + "\"");
  if (scale > 0) throw IoError("pfm: big-endian payload (positive scale) is unsupported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw IoError("pfm: expected whitespace after the scale");
  ++pos;

  size_t want = size_t(H * W * C) * sizeof(float);
  if (bytes.size() - pos < want) throw IoError("pfm: truncated pixel data");
  if (bytes.size() - pos > want) throw IoError("pfm: trailing bytes after pixel data");

  Tensor<float> img(C == 3 ? Shape{H, W, 3} : Shape{H, W});
  for (int64_t r = 0; r < H; ++r)
    std::memcpy(img.data() + r * W * C, bytes.data() + pos + size_t((H - 1 - r) * W * C) * sizeof(float),
                size_t(W * C) * sizeof(float));
  return img;
}

void save_pfm(const std::filesystem::path& path, const Tensor<float>& image) {
  write_file(path, encode_pfm(image));
}

Tensor<float> load_pfm(const std::filesystem::path& path) {
  try {
    return decode_pfm(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// --- ppm ---------------------------------------------------------------------

std::string encode_ppm(const Tensor<float>& image) {
  bool color = image.rank() == 3 && image.dim(2) == 3;
  if (!color && image.rank() != 2)
    throw DimError("encode_ppm: image must be [H,W,3] or [H,W], got " + shape_str(image.shape()));
  int64_t H = image.dim(0), W = image.dim(1), C = color ? 3 : 1;
  if (H < 1 || W < 1) throw DimError("encode_ppm: empty image " + shape_str(image.shape()));

  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + size_t(H * W * 3));
  for (int64_t p = 0; p < H * W; ++p)
    for (int64_t c = 0; c < 3; ++c) {
      double v = double(image[p * C + (C == 3 ? c : 0)]);
      unsigned char q = !(v > 0.0) ? 0 : v >= 1.0 ? 255 : (unsigned char)std::lround(v * 255.0);
      out.push_back(char(q));
    }
  return out;
}

Tensor<float> decode_ppm(std::string_view bytes) {
  size_t pos = 0;
  std::string magic = pfm_token(bytes, pos, "magic");
  if (magic != "P6") throw IoError("ppm: bad magic \"" + magic + "\"");
  int64_t W = parse_extent(pfm_token(bytes, pos, "width"), "width", "ppm");
  int64_t H = parse_extent(pfm_token(bytes, pos, "height"), "height", "ppm");
  std::string maxval = pfm_token(bytes, pos, "maxval");
  if (maxval != "255") throw IoError("ppm: maxval " + maxval + " unsupported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw IoError("ppm: expected whitespace after the maxval");
  ++pos;

  size_t want = size_t(H * W * 3);
  if (bytes.size() - pos < want) throw IoError("ppm: truncated pixel data");
  if (bytes.size() - pos > want) throw IoError("ppm: trailing bytes after pixel data");

  Tensor<float> img({H, W, 3});
  for (int64_t i = 0; i < H * W * 3; ++i)
    img[i] = float(static_cast<unsigned char>(bytes[pos + size_t(i)])) / 255.0f;
  return img;
}

void save_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  write_file(path, encode_ppm(image));
}

Tensor<float> load_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// --- json schemas --------------------------------------------------------

namespace {

using nlohmann::json;

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("invalid json: ") + e.what());
  }
}

// Tracks which fields a schema consumed; close() rejects everything else so
// schema drift surfaces as an error naming the stray field.
class ObjView {
 public:
  ObjView(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw SchemaError(path_ + ": expected an object");
  }

  std::string at(const char* key) const { return path_ + "." + key; }

  const json& get(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) throw SchemaError(at(key) + ": missing field");
    return *it;
  }
  const json* get_opt(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double num(const char* key) {
    const json& v = get(key);
    if (!v.is_number()) throw SchemaError(at(key) + ": expected a number");
    return v.get<double>();
  }
  int64_t integer(const char* key) {
    const json& v = get(key);
    if (!v.is_number_integer()) throw SchemaError(at(key) + ": expected an integer");
    return v.get<int64_t>();
  }
  bool boolean(const char* key, bool fallback) {
    const json* v = get_opt(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw SchemaError(at(key) + ": expected a boolean");
    return v->get<bool>();
  }
  std::string str(const char* key) {
    const json& v = get(key);
    if (!v.is_string()) throw SchemaError(at(key) + ": expected a string");
    return v.get<std::string>();
  }
  const json& array(const char* key, size_t min_len = 0) {
    const json& v = get(key);
    if (!v.is_array()) throw SchemaError(at(key) + ": expected an array");
    if (v.size() < min_len)
      throw SchemaError(at(key) + ": expected at least " + std::to_string(min_len) + " entries");
    return v;
  }

  void close() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key()))
        throw SchemaError(path_ + ": unknown field \"" + item.key() + "\"");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::array<double, 3> num3(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 3) throw SchemaError(path + ": expected 3 numbers");
  std::array<double, 3> out{};
  for (size_t k = 0; k < 3; ++k) {
    if (!v[k].is_number()) throw SchemaError(path + "[" + std::to_string(k) + "]: expected a number");
    out[k] = v[k].get<double>();
  }
  return out;
}

json camera_to_json(const Camera& cam, double near, double far) {
  json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  json m = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(cam.cam_from_world(r, c));
  j["camera_from_world"] = m;
  j["near"] = near;
  j["far"] = far;
  return j;
}

struct CameraDepthRange {
  Camera cam;
  double near = 0, far = 0;
};

CameraDepthRange camera_from_json(const json& j, const std::string& path) {
  ObjView ov(j, path);
  double fx = ov.num("fx"), fy = ov.num("fy"), cx = ov.num("cx"), cy = ov.num("cy");
  int64_t width = ov.integer("width"), height = ov.integer("height");
  const json& m = ov.get("camera_from_world");
  if (!m.is_array() || m.size() != 16)
    throw SchemaError(ov.at("camera_from_world") + ": expected 16 row-major numbers");
  Eigen::Matrix4d cw;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      const json& v = m[size_t(r * 4 + c)];
      if (!v.is_number())
        throw SchemaError(ov.at("camera_from_world") + "[" + std::to_string(r * 4 + c) +
                          "]: expected a number");
      cw(r, c) = v.get<double>();
    }
  CameraDepthRange out;
  out.near = ov.num("near");
  out.far = ov.num("far");
  ov.close();
  try {
    out.cam = Camera::make(fx, fy, cx, cy, width, height, cw);
    Frustum{out.cam, out.near, out.far}.validate();
  } catch (const DimError& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return out;
}

}  // namespace

std::string cameras_to_json(const std::vector<Camera>& cams, const Frustum& target) {
  json j;
  json list = json::array();
  for (const Camera& c : cams) list.push_back(camera_to_json(c, target.near, target.far));
  j["cameras"] = list;
  j["target"] = camera_to_json(target.camera, target.near, target.far);
  return j.dump(2) + "\n";
}

BundleCameras cameras_from_json(std::string_view text) {
  json j = parse_json(text);
  ObjView ov(j, "$");
  const json& list = ov.array("cameras", 1);
  BundleCameras out;
  for (size_t i = 0; i < list.size(); ++i)
    out.cams.push_back(camera_from_json(list[i], "$.cameras[" + std::to_string(i) + "]").cam);
  CameraDepthRange t = camera_from_json(ov.get("target"), "$.target");
  out.target = Frustum{t.cam, t.near, t.far};
  ov.close();
  return out;
}

std::string scene_to_json(const PlaneScene& scene) {
  json j;
  json planes = json::array();
  for (const ScenePlane& p : scene.planes) {
    json jp;
    jp["z"] = p.z;
    jp["x0"] = p.x0;
    jp["x1"] = p.x1;
    jp["y0"] = p.y0;
    jp["y1"] = p.y1;
    jp["opacity"] = p.opacity;
    json tex;
    tex["base"] = p.texture.base;
    json waves = json::array();
    for (const Texture::Wave& w : p.texture.waves) {
      json jw;
      jw["fu"] = w.fu;
      jw["fv"] = w.fv;
      jw["phase"] = w.phase;
      jw["amp"] = w.amp;
      waves.push_back(jw);
    }
    tex["waves"] = waves;
    jp["texture"] = tex;
    planes.push_back(jp);
  }
  j["planes"] = planes;
  j["background"] = scene.background;
  j["background_depth"] = scene.background_depth;
  j["near"] = scene.near;
  j["far"] = scene.far;
  return j.dump(2) + "\n";
}

PlaneScene scene_from_json(std::string_view text) {
  json j = parse_json(text);
  ObjView ov(j, "$");
  PlaneScene scene;
  const json& planes = ov.array("planes", 1);
  for (size_t i = 0; i < planes.size(); ++i) {
    const std::string path = "$.planes[" + std::to_string(i) + "]";
    ObjView pv(planes[i], path);
    ScenePlane p;
    p.z = pv.num("z");
    p.x0 = pv.num("x0");
    p.x1 = pv.num("x1");
    p.y0 = pv.num("y0");
    p.y1 = pv.num("y1");
    p.opacity = pv.num("opacity");
    ObjView tv(pv.get("texture"), path + ".texture");
    p.texture.base = num3(tv.get("base"), path + ".texture.base");
    const json& waves = tv.array("waves");
    for (size_t k = 0; k < waves.size(); ++k) {
      const std::string wpath = path + ".texture.waves[" + std::to_string(k) + "]";
      ObjView wv(waves[k], wpath);
      Texture::Wave w;
      w.fu = wv.num("fu");
      w.fv = wv.num("fv");
      w.phase = wv.num("phase");
      w.amp = num3(wv.get("amp"), wpath + ".amp");
      wv.close();
      p.texture.waves.push_back(w);
    }
    tv.close();
    pv.close();
    scene.planes.push_back(std::move(p));
  }
  scene.background = num3(ov.get("background"), "$.background");
  scene.background_depth = ov.num("background_depth");
  scene.near = ov.num("near");
  scene.far = ov.num("far");
  ov.close();
  try {
    scene.validate();
  } catch (const DimError& e) {
    throw SchemaError(std::string("$: ") + e.what());
  }
  return scene;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["channels"] = cfg.channels;
  j["views"] = cfg.views;
  j["pyramid_levels"] = cfg.pyramid_levels;
  j["upsample"] = cfg.upsample;
  j["near"] = cfg.near;
  j["far"] = cfg.far;
  j["ablate_render"] = cfg.ablate_render;
  j["ablate_attention"] = cfg.ablate_attention;
  j["ablate_rays"] = cfg.ablate_rays;
  j["direct_rgb"] = cfg.direct_rgb;
  json steps = json::array();
  for (const StepConfig& s : cfg.steps) {
    json js;
    js["in_layers"] = s.in_layers;
    js["layers"] = s.layers;
    js["height"] = s.height;
    js["width"] = s.width;
    js["pyramid_level"] = s.pyramid_level;
    js["blocks"] = s.blocks;
    steps.push_back(js);
  }
  j["steps"] = steps;
  return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(std::string_view text) {
  json j = parse_json(text);
  ObjView ov(j, "$");
  ModelConfig cfg;
  cfg.channels = ov.integer("channels");
  cfg.views = ov.integer("views");
  cfg.pyramid_levels = ov.integer("pyramid_levels");
  cfg.upsample = ov.num("upsample");
  cfg.near = ov.num("near");
  cfg.far = ov.num("far");
  cfg.ablate_render = ov.boolean("ablate_render", false);
  cfg.ablate_attention = ov.boolean("ablate_attention", false);
  cfg.ablate_rays = ov.boolean("ablate_rays", false);
  cfg.direct_rgb = ov.boolean("direct_rgb", false);
  const json& steps = ov.array("steps", 1);
  for (size_t i = 0; i < steps.size(); ++i) {
    const std::string path = "$.steps[" + std::to_string(i) + "]";
    ObjView sv(steps[i], path);
    StepConfig s;
    s.in_layers = sv.integer("in_layers");
    s.layers = sv.integer("layers");
    s.height = sv.integer("height");
    s.width = sv.integer("width");
    s.pyramid_level = sv.integer("pyramid_level");
    s.blocks = sv.str("blocks");
    sv.close();
    cfg.steps.push_back(std::move(s));
  }
  ov.close();
  try {
    cfg.validate();
  } catch (const DimError& e) {
    throw SchemaError(std::string("$: ") + e.what());
  }
  return cfg;
}

// --- scene bundle --------------------------------------------------------

namespace {

std::string view_stem(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03d", int(i));
  return buf;
}

}  // namespace

void SceneBundle::validate() const {
  if (cams.empty() || cams.size() != images.size())
    throw SchemaError("bundle: " + std::to_string(cams.size()) + " cameras but " +
                      std::to_string(images.size()) + " view images");
  for (size_t i = 0; i < images.size(); ++i) {
    const Tensor<float>& im = images[i];
    if (im.rank() != 3 || im.dim(2) != 3)
      throw SchemaError("bundle: " + view_stem(int64_t(i)) + ".pfm must be a color image");
    if (im.dim(0) != cams[i].height || im.dim(1) != cams[i].width)
      throw SchemaError("bundle: " + view_stem(int64_t(i)) + ".pfm is " + std::to_string(im.dim(1)) +
                        "x" + std::to_string(im.dim(0)) + " but its camera is " +
                        std::to_string(cams[i].width) + "x" + std::to_string(cams[i].height));
  }
  target.validate();
  scene.validate();
}

void save_bundle(const std::filesystem::path& dir, const SceneBundle& bundle) {
  bundle.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "cameras.json", cameras_to_json(bundle.cams, bundle.target));
  write_file(dir / "scene.json", scene_to_json(bundle.scene));
  for (size_t i = 0; i < bundle.images.size(); ++i) {
    save_pfm(dir / (view_stem(int64_t(i)) + ".pfm"), bundle.images[i]);
    save_ppm(dir / (view_stem(int64_t(i)) + ".ppm"), bundle.images[i]);
  }
}

SceneBundle load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("bundle: no such directory " + dir.string());
  SceneBundle b;
  try {
    BundleCameras bc = cameras_from_json(read_file(dir / "cameras.json"));
    b.cams = std::move(bc.cams);
    b.target = bc.target;
  } catch (const SchemaError& e) {
    throw SchemaError("cameras.json: " + std::string(e.what()));
  }
  try {
    b.scene = scene_from_json(read_file(dir / "scene.json"));
  } catch (const SchemaError& e) {
    throw SchemaError("scene.json: " + std::string(e.what()));
  }

  int64_t present = 0;
  while (std::filesystem::exists(dir / (view_stem(present) + ".pfm"))) ++present;
  if (present != int64_t(b.cams.size()))
    throw SchemaError("bundle: cameras.json lists " + std::to_string(b.cams.size()) +
                      " cameras but the directory holds " + std::to_string(present) +
                      " view images");
  for (int64_t i = 0; i < present; ++i) b.images.push_back(load_pfm(dir / (view_stem(i) + ".pfm")));
  b.validate();
  return b;
}

// --- fitted LDM artifact ----------------------------------------------------

void save_raw_ldm(const std::filesystem::path& path, const RawLdm<double>& raw) {
  Tensor<double> near_far({2});
  near_far[0] = raw.frustum.near;
  near_far[1] = raw.frustum.far;
  save_tensors(path, {NamedTensor::wrap("depth_logits", raw.depth_logits),
                      NamedTensor::wrap("density_logits", raw.density_logits),
                      NamedTensor::wrap("blend_logits", raw.blend_logits),
                      NamedTensor::wrap("near_far", near_far)});
}

RawLdm<double> load_raw_ldm(const std::filesystem::path& path, const Frustum& target) {
  std::vector<NamedTensor> entries = load_tensors(path);
  RawLdm<double> raw;
  raw.depth_logits = find_tensor(entries, "depth_logits").as_f64();
  raw.density_logits = find_tensor(entries, "density_logits").as_f64();
  raw.blend_logits = find_tensor(entries, "blend_logits").as_f64();
  Tensor<double> near_far = find_tensor(entries, "near_far").as_f64();

  if (raw.depth_logits.rank() != 3)
    throw SchemaError("ldm: depth_logits must be rank 3, got " +
                      shape_str(raw.depth_logits.shape()));
  const int64_t L = raw.depth_logits.dim(0), H = raw.depth_logits.dim(1),
                W = raw.depth_logits.dim(2);
  if (raw.density_logits.shape() != raw.depth_logits.shape())
    throw SchemaError("ldm: density_logits " + shape_str(raw.density_logits.shape()) +
                      " does not match depth_logits " + shape_str(raw.depth_logits.shape()));
  if (raw.blend_logits.rank() != 4 || raw.blend_logits.dim(0) != L ||
      raw.blend_logits.dim(1) != H || raw.blend_logits.dim(2) != W)
    throw SchemaError("ldm: blend_logits " + shape_str(raw.blend_logits.shape()) +
                      " does not pair with depth_logits " + shape_str(raw.depth_logits.shape()));
  if (near_far.shape() != Shape{2})
    throw SchemaError("ldm: near_far must hold 2 values");
  if (H != target.camera.height || W != target.camera.width)
    throw SchemaError("ldm: logits are " + std::to_string(W) + "x" + std::to_string(H) +
                      " but the bundle target is " + std::to_string(target.camera.width) + "x" +
                      std::to_string(target.camera.height));
  if (near_far[0] != target.near || near_far[1] != target.far)
    throw SchemaError("ldm: fit depth range [" + std::to_string(near_far[0]) + ", " +
                      std::to_string(near_far[1]) + "] does not match the bundle target [" +
                      std::to_string(target.near) + ", " + std::to_string(target.far) + "]");
  raw.frustum = target;
  return raw;
}

}  // namespace lvs
