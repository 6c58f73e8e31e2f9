#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topofit/camera.hpp"
#include "topofit/core.hpp"
#include "topofit/image.hpp"
#include "topofit/losses.hpp"
#include "topofit/mesh.hpp"
#include "topofit/params.hpp"

namespace topofit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Wavefront OBJ, the subset needed here: v and f directives, polygon faces
// fan-triangulated, 1-based and negative indices, v/vt/vn slash syntax.

inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open mesh: ", path);
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string head;
    if (!(ss >> head) || head.empty() || head[0] == '#') continue;
    if (head == "v") {
      Vec3 v;
      check(static_cast<bool>(ss >> v.x >> v.y >> v.z), path, ":", lineno, ": malformed vertex");
      vertices.push_back(v);
    } else if (head == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        const size_t slash = tok.find('/');
        const std::string first = slash == std::string::npos ? tok : tok.substr(0, slash);
        int i = 0;
        try {
          i = std::stoi(first);
        } catch (...) {
          fail(path, ":", lineno, ": malformed face index '", tok, "'");
        }
        check(i != 0, path, ":", lineno, ": face index 0 is invalid");
        const int resolved = i > 0 ? i - 1 : static_cast<int>(vertices.size()) + i;
        check(resolved >= 0 && resolved < static_cast<int>(vertices.size()),
              path, ":", lineno, ": face index ", i, " out of range");
        idx.push_back(resolved);
      }
      check(idx.size() >= 3, path, ":", lineno, ": face needs at least three vertices");
      for (size_t k = 1; k + 1 < idx.size(); ++k)
        faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  check(!vertices.empty() && !faces.empty(), path, ": no geometry found");
  return TriangleMesh(std::move(vertices), std::move(faces));
}

inline void save_obj(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  check(out.good(), "cannot open for writing: ", path);
  char buf[128];
  for (const Vec3& v : mesh.vertices()) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
    out << buf;
  }
  for (const auto& f : mesh.faces()) out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  check(out.good(), "write failed: ", path);
}

// ---------------------------------------------------------------------------
// Scene manifest: template mesh, per-view camera + image + mask, optional
// landmark annotations. Paths are resolved relative to the manifest.

struct ViewData {
  Camera camera;
  Image image;  // 3-channel, linear [0,1]
  Image mask;   // 1-channel, values exactly 0 or 1
};

struct SceneBundle {
  TriangleMesh template_mesh;
  std::vector<ViewData> views;
  std::vector<LandmarkObservation> landmarks;
  Vec3 background{0, 0, 0};

  std::vector<Camera> cameras() const {
    std::vector<Camera> cams;
    cams.reserve(views.size());
    for (const auto& v : views) cams.push_back(v.camera);
    return cams;
  }
};

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open: ", path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(path, ": JSON parse error: ", e.what());
  }
  return j;
}

inline void save_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  check(out.good(), "cannot open for writing: ", path);
  out << j.dump(2) << "\n";
  check(out.good(), "write failed: ", path);
}

namespace detail {

inline Mat3 mat3_from_json(const json& j, const std::string& what) {
  check(j.is_array() && j.size() == 9, what, " must be a row-major array of 9 numbers");
  Mat3 m;
  for (int i = 0; i < 9; ++i) m.m[i] = j[i].get<double>();
  return m;
}

inline Vec3 vec3_from_json(const json& j, const std::string& what) {
  check(j.is_array() && j.size() == 3, what, " must be an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline std::string resolve(const std::filesystem::path& base, const std::string& rel) {
  const std::filesystem::path p(rel);
  return p.is_absolute() ? p.string() : (base / p).string();
}

}  // namespace detail

inline std::vector<LandmarkObservation> load_landmarks(const std::string& path) {
  const json j = load_json_file(path);
  const json& arr = j.is_array() ? j : j.at("landmarks");
  check(arr.is_array(), path, ": expected a landmark array");
  std::vector<LandmarkObservation> out;
  for (const auto& e : arr) {
    LandmarkObservation lm;
    lm.view = e.at("view").get<int>();
    lm.vertex = e.at("vertex").get<int>();
    lm.pixel = {e.at("u").get<double>(), e.at("v").get<double>()};
    out.push_back(lm);
  }
  return out;
}

inline void save_landmarks(const std::string& path, const std::vector<LandmarkObservation>& lms) {
  json arr = json::array();
  for (const auto& lm : lms)
    arr.push_back({{"view", lm.view}, {"vertex", lm.vertex}, {"u", lm.pixel.x}, {"v", lm.pixel.y}});
  save_json_file(path, json{{"landmarks", arr}});
}

inline SceneBundle load_scene(const std::string& manifest_path) {
  const json j = load_json_file(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

  TriangleMesh mesh = load_obj(detail::resolve(base, j.at("template").get<std::string>()));
  mesh.validate_geometry();

  SceneBundle scene{std::move(mesh), {}, {}, {}};
  if (j.contains("background"))
    scene.background = detail::vec3_from_json(j.at("background"), "background");

  check(j.contains("views") && j.at("views").is_array() && !j.at("views").empty(),
        manifest_path, ": manifest has no views");
  int view_id = 0;
  for (const auto& vj : j.at("views")) {
    ViewData view;
    view.camera.K = detail::mat3_from_json(vj.at("K"), "view K");
    view.camera.R = detail::mat3_from_json(vj.at("R"), "view R");
    view.camera.t = detail::vec3_from_json(vj.at("t"), "view t");
    view.camera.width = vj.at("width").get<int>();
    view.camera.height = vj.at("height").get<int>();
    view.camera.validate();
    view.image = read_pnm(detail::resolve(base, vj.at("image").get<std::string>()));
    check(view.image.channels == 3, "view ", view_id, ": image must have 3 channels");
    check(view.image.width == view.camera.width && view.image.height == view.camera.height,
          "view ", view_id, ": image is ", view.image.width, "x", view.image.height,
          " but the manifest declares ", view.camera.width, "x", view.camera.height);
    view.mask = read_pnm(detail::resolve(base, vj.at("mask").get<std::string>()));
    check(view.mask.channels == 1, "view ", view_id, ": mask must be single-channel");
    check(view.mask.width == view.camera.width && view.mask.height == view.camera.height,
          "view ", view_id, ": mask dimensions do not match the view");
    for (float v : view.mask.data)
      check(v < 1e-3f || v > 1.0f - 1e-3f, "view ", view_id, ": mask values must be 0 or 1");
    scene.views.push_back(std::move(view));
    ++view_id;
  }

  if (j.contains("landmarks")) {
    scene.landmarks = load_landmarks(detail::resolve(base, j.at("landmarks").get<std::string>()));
    for (const auto& lm : scene.landmarks) {
      check(lm.view >= 0 && lm.view < static_cast<int>(scene.views.size()),
            "landmark view id ", lm.view, " out of range");
      check(lm.vertex >= 0 && lm.vertex < scene.template_mesh.num_vertices(),
            "landmark vertex id ", lm.vertex, " out of range");
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned header, integer metadata, named f32 arrays. Keys are
// kept in sorted maps so identical state serializes to identical bytes.

struct Checkpoint {
  std::map<std::string, int64_t> meta;
  struct Array {
    std::vector<uint64_t> dims;
    std::vector<float> data;
  };
  std::map<std::string, Array> arrays;
};

namespace detail {

constexpr char kCkptMagic[4] = {'T', 'F', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(in.good(), path, ": truncated checkpoint");
  return v;
}

inline void write_name(std::ofstream& out, const std::string& s) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_name(std::ifstream& in, const std::string& path) {
  const uint32_t n = read_pod<uint32_t>(in, path);
  check(n < (1u << 16), path, ": implausible name length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  check(in.good(), path, ": truncated checkpoint");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  static_assert(sizeof(float) == 4);
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open for writing: ", path);
  out.write(detail::kCkptMagic, 4);
  detail::write_pod<uint32_t>(out, detail::kCkptVersion);
  detail::write_pod<uint32_t>(out, static_cast<uint32_t>(ckpt.meta.size()));
  for (const auto& [name, value] : ckpt.meta) {
    detail::write_name(out, name);
    detail::write_pod<int64_t>(out, value);
  }
  detail::write_pod<uint32_t>(out, static_cast<uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, arr] : ckpt.arrays) {
    detail::write_name(out, name);
    size_t expect = 1;
    for (uint64_t d : arr.dims) expect *= d;
    check(expect == arr.data.size(), "checkpoint array ", name, " dims do not match data size");
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(arr.dims.size()));
    for (uint64_t d : arr.dims) detail::write_pod<uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(arr.data.data()),
              static_cast<std::streamsize>(arr.data.size() * sizeof(float)));
  }
  check(out.good(), "write failed: ", path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint: ", path);
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::memcmp(magic, detail::kCkptMagic, 4) == 0,
        path, ": not a checkpoint file");
  const uint32_t version = detail::read_pod<uint32_t>(in, path);
  check(version == detail::kCkptVersion, path, ": unsupported checkpoint version ", version);
  Checkpoint ckpt;
  const uint32_t n_meta = detail::read_pod<uint32_t>(in, path);
  for (uint32_t i = 0; i < n_meta; ++i) {
    const std::string name = detail::read_name(in, path);
    ckpt.meta[name] = detail::read_pod<int64_t>(in, path);
  }
  const uint32_t n_arrays = detail::read_pod<uint32_t>(in, path);
  for (uint32_t i = 0; i < n_arrays; ++i) {
    const std::string name = detail::read_name(in, path);
    Checkpoint::Array arr;
    const uint32_t ndim = detail::read_pod<uint32_t>(in, path);
    check(ndim <= 8, path, ": implausible array rank");
    size_t count = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      arr.dims.push_back(detail::read_pod<uint64_t>(in, path));
      count *= arr.dims.back();
    }
    check(count < (1ull << 32), path, ": implausible array size");
    arr.data.resize(count);
    in.read(reinterpret_cast<char*>(arr.data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    check(in.good(), path, ": truncated checkpoint");
    ckpt.arrays[name] = std::move(arr);
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Bridging between live training state and checkpoints. Values are stored in
// f32; callers that need replay determinism quantize the live state to f32
// at every save so the saved and in-memory trajectories coincide.

namespace detail {

inline std::vector<float> to_f32(const std::vector<double>& v) {
  std::vector<float> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

inline void from_f32(const std::vector<float>& in, std::vector<double>& out,
                     const std::string& what) {
  check(in.size() == out.size(), "checkpoint array ", what, " has ", in.size(),
        " values, expected ", out.size());
  for (size_t i = 0; i < in.size(); ++i) out[i] = in[i];
}

}  // namespace detail

inline Checkpoint checkpoint_from_state(const ParamStore& params, const AdamState& adam,
                                        std::map<std::string, int64_t> meta) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  const auto& verts = params.mesh.vertices();
  Checkpoint::Array va;
  va.dims = {static_cast<uint64_t>(verts.size()), 3};
  va.data.reserve(verts.size() * 3);
  for (const Vec3& v : verts)
    for (int c = 0; c < 3; ++c) va.data.push_back(static_cast<float>(v[c]));
  ckpt.arrays["vertices"] = std::move(va);

  static const char* kPlaneNames[3] = {"plane_xy", "plane_xz", "plane_yz"};
  for (int p = 0; p < 3; ++p) {
    Checkpoint::Array a;
    const uint64_t res = static_cast<uint64_t>(params.planes.resolution());
    a.dims = {res, res, static_cast<uint64_t>(params.planes.dims()[p])};
    a.data = detail::to_f32(params.planes.plane(p));
    ckpt.arrays[kPlaneNames[p]] = std::move(a);
  }

  auto put = [&ckpt](const std::string& name, const std::vector<double>& v,
                     std::vector<uint64_t> dims) {
    Checkpoint::Array a;
    a.dims = std::move(dims);
    a.data = detail::to_f32(v);
    ckpt.arrays[name] = std::move(a);
  };
  Checkpoint::Array pb;
  pb.dims = {2, 3};
  for (const Vec3* corner : {&params.planes.bounds().lo, &params.planes.bounds().hi})
    for (int c = 0; c < 3; ++c) pb.data.push_back(static_cast<float>((*corner)[c]));
  ckpt.arrays["plane_bounds"] = std::move(pb);

  const auto& d = params.decoder;
  const uint64_t in = d.in_dim(), hid = d.hidden_dim(), outd = d.out_dim();
  put("decoder_w0", d.w0(), {hid, in});
  put("decoder_b0", d.b0(), {hid});
  put("decoder_w1", d.w1(), {hid, hid});
  put("decoder_b1", d.b1(), {hid});
  put("decoder_w2", d.w2(), {outd, hid});
  put("decoder_b2", d.b2(), {outd});
  ckpt.arrays["scale"] = {{1}, {static_cast<float>(params.scale)}};

  for (int gi = 0; gi < kParamGroups; ++gi) {
    const auto& g = adam.groups[gi];
    const std::string base = std::string("adam_") + kParamGroupNames[gi];
    put(base + "_m", g.m, {static_cast<uint64_t>(g.m.size())});
    put(base + "_v", g.v, {static_cast<uint64_t>(g.v.size())});
    ckpt.meta[base + "_step"] = g.step;
  }
  return ckpt;
}

inline void apply_checkpoint_state(const Checkpoint& ckpt, ParamStore& params, AdamState& adam) {
  auto get = [&ckpt](const std::string& name) -> const Checkpoint::Array& {
    auto it = ckpt.arrays.find(name);
    check(it != ckpt.arrays.end(), "checkpoint is missing array: ", name);
    return it->second;
  };
  const auto& va = get("vertices");
  check(va.dims.size() == 2 && va.dims[1] == 3 &&
            va.dims[0] == static_cast<uint64_t>(params.mesh.num_vertices()),
        "checkpoint vertex count does not match the template");
  std::vector<Vec3> verts(params.mesh.num_vertices());
  for (size_t i = 0; i < verts.size(); ++i)
    verts[i] = {va.data[3 * i], va.data[3 * i + 1], va.data[3 * i + 2]};
  params.mesh.set_vertices(std::move(verts));

  static const char* kPlaneNames[3] = {"plane_xy", "plane_xz", "plane_yz"};
  for (int p = 0; p < 3; ++p)
    detail::from_f32(get(kPlaneNames[p]).data, params.planes.plane(p), kPlaneNames[p]);
  const auto& pb = get("plane_bounds");
  check(pb.data.size() == 6, "checkpoint plane_bounds must hold 6 values");
  for (int c = 0; c < 3; ++c) {
    const double span = params.planes.bounds().hi[c] - params.planes.bounds().lo[c];
    check(std::abs(pb.data[c] - params.planes.bounds().lo[c]) <= 1e-5 * span &&
              std::abs(pb.data[3 + c] - params.planes.bounds().hi[c]) <= 1e-5 * span,
          "checkpoint plane bounds do not match the configured planes");
  }
  detail::from_f32(get("decoder_w0").data, params.decoder.w0(), "decoder_w0");
  detail::from_f32(get("decoder_b0").data, params.decoder.b0(), "decoder_b0");
  detail::from_f32(get("decoder_w1").data, params.decoder.w1(), "decoder_w1");
  detail::from_f32(get("decoder_b1").data, params.decoder.b1(), "decoder_b1");
  detail::from_f32(get("decoder_w2").data, params.decoder.w2(), "decoder_w2");
  detail::from_f32(get("decoder_b2").data, params.decoder.b2(), "decoder_b2");
  const auto& sc = get("scale");
  check(sc.data.size() == 1, "checkpoint scale must hold one value");
  params.scale = sc.data[0];
  check(params.scale > 0, "checkpoint scale must be positive");

  for (int gi = 0; gi < kParamGroups; ++gi) {
    const std::string base = std::string("adam_") + kParamGroupNames[gi];
    detail::from_f32(get(base + "_m").data, adam.groups[gi].m, base + "_m");
    detail::from_f32(get(base + "_v").data, adam.groups[gi].v, base + "_v");
    auto it = ckpt.meta.find(base + "_step");
    check(it != ckpt.meta.end(), "checkpoint is missing meta: ", base, "_step");
    adam.groups[gi].step = it->second;
  }
}

// Rebuilds the full parameter state from a self-describing checkpoint; only
// the mesh topology comes from the template.
inline std::pair<ParamStore, AdamState> param_store_from_checkpoint(const Checkpoint& ckpt,
                                                                    TriangleMesh template_mesh) {
  auto get = [&ckpt](const std::string& name) -> const Checkpoint::Array& {
    auto it = ckpt.arrays.find(name);
    check(it != ckpt.arrays.end(), "checkpoint is missing array: ", name);
    return it->second;
  };
  const auto& xy = get("plane_xy");
  const auto& xz = get("plane_xz");
  const auto& yz = get("plane_yz");
  check(xy.dims.size() == 3 && xz.dims.size() == 3 && yz.dims.size() == 3 &&
            xy.dims[0] == xy.dims[1] && xy.dims[0] == xz.dims[0] && xy.dims[0] == yz.dims[0],
        "checkpoint plane arrays are malformed");
  const auto& pb = get("plane_bounds");
  check(pb.data.size() == 6, "checkpoint plane_bounds must hold 6 values");
  const Aabb bounds{{pb.data[0], pb.data[1], pb.data[2]},
                    {pb.data[3], pb.data[4], pb.data[5]}};
  TriPlanes planes(static_cast<int>(xy.dims[0]),
                   {static_cast<int>(xy.dims[2]), static_cast<int>(xz.dims[2]),
                    static_cast<int>(yz.dims[2])},
                   bounds);
  const auto& w0 = get("decoder_w0");
  const auto& w2 = get("decoder_w2");
  check(w0.dims.size() == 2 && w2.dims.size() == 2, "checkpoint decoder arrays are malformed");
  MlpDecoder decoder(static_cast<int>(w0.dims[1]), static_cast<int>(w0.dims[0]),
                     static_cast<int>(w2.dims[0]));
  std::pair<ParamStore, AdamState> out{
      ParamStore(std::move(template_mesh), std::move(planes), std::move(decoder), 1.0),
      AdamState{}};
  out.second.resize_like(out.first);
  apply_checkpoint_state(ckpt, out.first, out.second);
  return out;
}

// Rounds the live state through f32 so it matches what a checkpoint written
// right now would reload.
inline void quantize_state_f32(ParamStore& params, AdamState& adam) {
  auto q = [](std::vector<double>& v) {
    for (double& x : v) x = static_cast<float>(x);
  };
  std::vector<Vec3> verts = params.mesh.vertices();
  for (Vec3& v : verts)
    for (int c = 0; c < 3; ++c) v[c] = static_cast<float>(v[c]);
  params.mesh.set_vertices(std::move(verts));
  for (int p = 0; p < 3; ++p) q(params.planes.plane(p));
  q(params.decoder.w0());
  q(params.decoder.b0());
  q(params.decoder.w1());
  q(params.decoder.b1());
  q(params.decoder.w2());
  q(params.decoder.b2());
  params.scale = static_cast<float>(params.scale);
  for (auto& g : adam.groups) {
    q(g.m);
    q(g.v);
  }
}

}  // namespace topofit
