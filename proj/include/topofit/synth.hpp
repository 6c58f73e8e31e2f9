#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "topofit/camera.hpp"
#include "topofit/core.hpp"
#include "topofit/image.hpp"
#include "topofit/mesh.hpp"
#include "topofit/scene_io.hpp"

namespace topofit {

// ---------------------------------------------------------------------------
// Ground-truth surfaces: star-shaped radial fields r = R(u) around the
// origin, so every surface point is R(u)*u for a unit direction u. This keeps
// an analytic inside test for the oracle renderer and exact point-to-surface
// distances for evaluation.

struct RadialSurface {
  enum class Shape { Sphere, Ellipsoid, Blob };

  Shape shape = Shape::Ellipsoid;
  double sphere_radius = 0.8;
  Vec3 semi_axes{0.9, 0.75, 0.6};
  // Blob: base sphere plus smooth radial bumps.
  double blob_base = 0.62;
  std::vector<Vec3> blob_dirs{normalized(Vec3{0.8, 0.45, 0.1}), normalized(Vec3{-0.6, -0.2, 0.75})};
  std::vector<double> blob_amps{0.22, 0.16};
  std::vector<double> blob_widths{0.35, 0.25};

  double radius(const Vec3& u) const {
    switch (shape) {
      case Shape::Sphere:
        return sphere_radius;
      case Shape::Ellipsoid:
        return 1.0 / std::sqrt(sqr(u.x / semi_axes.x) + sqr(u.y / semi_axes.y) +
                               sqr(u.z / semi_axes.z));
      case Shape::Blob: {
        double r = blob_base;
        for (size_t i = 0; i < blob_dirs.size(); ++i)
          r += blob_amps[i] * std::exp((dot(u, blob_dirs[i]) - 1.0) / blob_widths[i]);
        return r;
      }
    }
    fail("unknown surface shape");
  }

  double max_radius() const {
    switch (shape) {
      case Shape::Sphere:
        return sphere_radius;
      case Shape::Ellipsoid:
        return std::max({semi_axes.x, semi_axes.y, semi_axes.z});
      case Shape::Blob: {
        double a = 0;
        for (double amp : blob_amps) a += amp;
        return blob_base + a;
      }
    }
    fail("unknown surface shape");
  }

  bool inside(const Vec3& p) const {
    const double n = norm(p);
    if (n < 1e-12) return true;
    return n <= radius(p / n);
  }

  Aabb bounds() const {  // sampled, slightly conservative for non-spheres
    Aabb b;
    const int n = 96;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2 * n; ++j) {
        const double th = kPi * (i + 0.5) / n, ph = kPi * j / n;
        const Vec3 u{std::sin(th) * std::cos(ph), std::cos(th), std::sin(th) * std::sin(ph)};
        b.expand(u * radius(u));
      }
    return b;
  }
};

inline json radial_surface_to_json(const RadialSurface& s) {
  json j;
  switch (s.shape) {
    case RadialSurface::Shape::Sphere:
      j["shape"] = "sphere";
      j["radius"] = s.sphere_radius;
      break;
    case RadialSurface::Shape::Ellipsoid:
      j["shape"] = "ellipsoid";
      j["semi_axes"] = {s.semi_axes.x, s.semi_axes.y, s.semi_axes.z};
      break;
    case RadialSurface::Shape::Blob: {
      j["shape"] = "blob";
      j["base"] = s.blob_base;
      json dirs = json::array(), amps = json::array(), widths = json::array();
      for (size_t i = 0; i < s.blob_dirs.size(); ++i) {
        dirs.push_back({s.blob_dirs[i].x, s.blob_dirs[i].y, s.blob_dirs[i].z});
        amps.push_back(s.blob_amps[i]);
        widths.push_back(s.blob_widths[i]);
      }
      j["dirs"] = dirs;
      j["amps"] = amps;
      j["widths"] = widths;
      break;
    }
  }
  return j;
}

inline RadialSurface radial_surface_from_json(const json& j) {
  RadialSurface s;
  const std::string shape = j.at("shape").get<std::string>();
  if (shape == "sphere") {
    s.shape = RadialSurface::Shape::Sphere;
    s.sphere_radius = j.at("radius").get<double>();
  } else if (shape == "ellipsoid") {
    s.shape = RadialSurface::Shape::Ellipsoid;
    s.semi_axes = detail::vec3_from_json(j.at("semi_axes"), "semi_axes");
  } else if (shape == "blob") {
    s.shape = RadialSurface::Shape::Blob;
    s.blob_base = j.at("base").get<double>();
    s.blob_dirs.clear();
    s.blob_amps.clear();
    s.blob_widths.clear();
    for (const auto& d : j.at("dirs")) s.blob_dirs.push_back(detail::vec3_from_json(d, "blob dir"));
    for (const auto& a : j.at("amps")) s.blob_amps.push_back(a.get<double>());
    for (const auto& w : j.at("widths")) s.blob_widths.push_back(w.get<double>());
    check(s.blob_dirs.size() == s.blob_amps.size() && s.blob_amps.size() == s.blob_widths.size(),
          "blob parameter arrays must have equal length");
  } else {
    fail("unknown surface shape: ", shape);
  }
  return s;
}

// Smooth low-frequency color field evaluated at surface points.
inline Vec3 surface_texture(const Vec3& p) {
  const Vec3 k0{2.3, 1.1, 0.7}, k1{0.9, 2.6, 1.3}, k2{1.2, 0.8, 2.9};
  return {0.5 + 0.34 * std::sin(dot(p, k0) + 0.4),
          0.5 + 0.34 * std::sin(dot(p, k1) + 2.1),
          0.5 + 0.34 * std::sin(dot(p, k2) + 4.2)};
}

// ---------------------------------------------------------------------------
// Icosphere template.

inline TriangleMesh make_icosphere(int subdivisions, double radius) {
  check(subdivisions >= 0 && subdivisions <= 6, "subdivisions out of range");
  check(radius > 0, "radius must be positive");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
      {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
      {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]) * 0.5);
      midpoint[key] = static_cast<int>(verts.size()) - 1;
      return static_cast<int>(verts.size()) - 1;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  for (Vec3& v : verts) v = normalized(v) * radius;
  return TriangleMesh(std::move(verts), std::move(faces));
}

// ---------------------------------------------------------------------------
// Camera ring around the y axis, looking at the origin, with alternating
// elevations for vertical coverage.

inline Camera make_lookat_camera(const Vec3& position, int width, int height, double fov_x_deg) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  const Vec3 forward = normalized(-position);  // toward the origin
  const Vec3 up{0, 1, 0};
  check(std::abs(dot(forward, up)) < 0.999, "camera looks straight along the up axis");
  const Vec3 right = normalized(cross(forward, up));
  const Vec3 down = cross(forward, right);
  for (int c = 0; c < 3; ++c) {
    cam.R(0, c) = right[c];
    cam.R(1, c) = down[c];
    cam.R(2, c) = forward[c];
  }
  cam.t = cam.R * (-position);
  const double fx = 0.5 * width / std::tan(0.5 * fov_x_deg * kPi / 180.0);
  cam.K = Mat3::identity();
  cam.K(0, 0) = fx;
  cam.K(1, 1) = fx;
  cam.K(0, 2) = 0.5 * width;
  cam.K(1, 2) = 0.5 * height;
  cam.validate();
  return cam;
}

inline std::vector<Camera> make_ring_cameras(int count, double distance, int width, int height,
                                             double fov_x_deg, double azimuth0_deg = 0.0,
                                             double elev_even_deg = 18.0,
                                             double elev_odd_deg = -9.0) {
  check(count >= 1, "need at least one camera");
  std::vector<Camera> cams;
  for (int i = 0; i < count; ++i) {
    const double az = (azimuth0_deg + 360.0 * i / count) * kPi / 180.0;
    const double el = ((i % 2 == 0) ? elev_even_deg : elev_odd_deg) * kPi / 180.0;
    const Vec3 pos{distance * std::cos(el) * std::sin(az), distance * std::sin(el),
                   distance * std::cos(el) * std::cos(az)};
    cams.push_back(make_lookat_camera(pos, width, height, fov_x_deg));
  }
  return cams;
}

// ---------------------------------------------------------------------------
// Oracle renderer: dense ray march + bisection against the analytic surface.
// Written directly from the camera matrices; it shares no code with the mesh
// renderer it is used to cross-check.

struct OracleView {
  Image image;  // 3 channels
  Image mask;   // 1 channel
};

inline OracleView oracle_render(const RadialSurface& surface, const Camera& cam,
                                int march_steps = 800) {
  OracleView out;
  out.image = Image(cam.width, cam.height, 3);
  out.mask = Image(cam.width, cam.height, 1);
  const Vec3 origin = cam.R.transposed() * (-cam.t);
  const double rmax = surface.max_radius() * 1.02;

  // marches one ray through pixel coordinates (u, v); returns the hit point
  auto trace = [&](double u, double v, Vec3* p) {
    const double yc = (v - cam.K(1, 2)) / cam.K(1, 1);
    const double xc = (u - cam.K(0, 2) - cam.K(0, 1) * yc) / cam.K(0, 0);
    Vec3 dir{xc, yc, 1.0};
    dir = normalized(cam.R.transposed() * dir);
    // clip against the bounding sphere
    const double b = dot(origin, dir);
    const double c = norm2(origin) - rmax * rmax;
    const double disc = b * b - c;
    if (disc <= 0) return false;
    const double t0 = std::max(-b - std::sqrt(disc), 0.0);
    const double t1 = -b + std::sqrt(disc);
    if (t1 <= t0) return false;
    double t_prev = t0;
    bool prev_inside = surface.inside(origin + dir * t_prev);
    for (int s = 1; s <= march_steps; ++s) {
      const double t = t0 + (t1 - t0) * s / march_steps;
      const bool ins = surface.inside(origin + dir * t);
      if (ins && !prev_inside) {
        double lo = t_prev, hi = t;
        for (int it = 0; it < 48; ++it) {
          const double m = 0.5 * (lo + hi);
          if (surface.inside(origin + dir * m)) hi = m;
          else lo = m;
        }
        *p = origin + dir * (0.5 * (lo + hi));
        return true;
      }
      t_prev = t;
      prev_inside = ins;
    }
    return false;
  };
  auto put = [&out](int x, int y, const Vec3& col) {
    out.image.at(x, y, 0) = static_cast<float>(std::clamp(col.x, 0.0, 1.0));
    out.image.at(x, y, 1) = static_cast<float>(std::clamp(col.y, 0.0, 1.0));
    out.image.at(x, y, 2) = static_cast<float>(std::clamp(col.z, 0.0, 1.0));
  };

  // center rays decide occupancy (the mask) and interior colors
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      Vec3 p;
      if (!trace(x + 0.5, y + 0.5, &p)) continue;
      put(x, y, surface_texture(p));
      out.mask.at(x, y) = 1.0f;
    }

  // pixels whose neighborhood straddles the silhouette get a stratified 2x2
  // supersample so rim colors carry the partial-coverage blend a real camera
  // would record; misses contribute the (black) background
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const bool own = out.mask.at(x, y) >= 0.5f;
      bool mixed = false;
      for (int dy = -1; dy <= 1 && !mixed; ++dy)
        for (int dx = -1; dx <= 1 && !mixed; ++dx) {
          const int xx = x + dx, yy = y + dy;
          const bool nb = out.mask.in_bounds(xx, yy) && out.mask.at(xx, yy) >= 0.5f;
          mixed = nb != own;
        }
      if (!mixed) continue;
      Vec3 sum{0, 0, 0};
      for (double ou : {0.25, 0.75})
        for (double ov : {0.25, 0.75}) {
          Vec3 p;
          if (trace(x + ou, y + ov, &p)) sum += surface_texture(p);
        }
      put(x, y, sum * 0.25);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Full fixture: template, training views, held-out views, landmarks.

struct SynthParams {
  RadialSurface surface;
  int views = 12;
  int heldout_views = 1;
  int width = 128;
  int height = 128;
  double cam_distance = 2.6;
  double fov_x_deg = 40.0;
  int template_subdivisions = 3;  // 642 vertices
  double template_radius = 0.5;
  int landmarks = 48;
  int landmark_max_views = 3;
  uint64_t seed = 1;
};

struct Fixture {
  SynthParams params;
  TriangleMesh template_mesh;
  std::vector<ViewData> train_views;
  std::vector<ViewData> heldout_views;
  std::vector<LandmarkObservation> landmarks;
};

inline Fixture build_fixture(const SynthParams& params) {
  check(params.views >= 2, "fixtures need at least two training views");
  check(params.heldout_views >= 0, "held-out view count must be non-negative");
  TriangleMesh tmpl = make_icosphere(params.template_subdivisions, params.template_radius);

  std::vector<Camera> train_cams =
      make_ring_cameras(params.views, params.cam_distance, params.width, params.height,
                        params.fov_x_deg);
  // held-out cameras sit between training azimuths at a fresh elevation
  std::vector<Camera> held_cams;
  if (params.heldout_views > 0) {
    const double half_step = 180.0 / params.views;
    held_cams = make_ring_cameras(params.heldout_views, params.cam_distance, params.width,
                                  params.height, params.fov_x_deg, half_step, 5.0, 5.0);
  }

  Fixture fx{params, std::move(tmpl), {}, {}, {}};
  for (const Camera& cam : train_cams) {
    OracleView ov = oracle_render(fx.params.surface, cam);
    fx.train_views.push_back({cam, std::move(ov.image), std::move(ov.mask)});
  }
  for (const Camera& cam : held_cams) {
    OracleView ov = oracle_render(fx.params.surface, cam);
    fx.heldout_views.push_back({cam, std::move(ov.image), std::move(ov.mask)});
  }

  // Landmarks: template vertices spread uniformly by index; the annotation is
  // the true surface point along the vertex direction, projected into every
  // view that faces it (up to a small per-landmark cap).
  const int nv = fx.template_mesh.num_vertices();
  const int n_lm = std::min(params.landmarks, nv);
  for (int li = 0; li < n_lm; ++li) {
    const int vid = static_cast<int>(static_cast<int64_t>(li) * nv / n_lm);
    const Vec3 u = normalized(fx.template_mesh.vertex(vid));
    const Vec3 gt = u * params.surface.radius(u);
    int used = 0;
    for (size_t view = 0; view < fx.train_views.size() && used < params.landmark_max_views;
         ++view) {
      const Camera& cam = fx.train_views[view].camera;
      const Vec3 to_cam = cam.center() - gt;
      if (dot(normalized(to_cam), u) < 0.35) continue;  // landmark faces away
      const Vec3 q = cam.R * gt + cam.t;
      if (q.z <= 0) continue;
      const Vec2 px = project_vertex(cam, gt);
      if (px.x < 2 || px.x > cam.width - 2 || px.y < 2 || px.y > cam.height - 2) continue;
      fx.landmarks.push_back({static_cast<int>(view), vid, px});
      ++used;
    }
  }
  return fx;
}

inline SceneBundle fixture_scene(const Fixture& fx) {
  return SceneBundle{fx.template_mesh, fx.train_views, fx.landmarks, {0, 0, 0}};
}

// Writes template.obj, per-view rasters, landmarks, a training manifest, a
// held-out manifest, and fixture.json describing the analytic surface.
inline void write_fixture(const Fixture& fx, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path base(dir);
  save_obj((base / "template.obj").string(), fx.template_mesh);

  auto write_views = [&](const std::vector<ViewData>& views, const std::string& prefix) {
    json arr = json::array();
    for (size_t i = 0; i < views.size(); ++i) {
      char img_name[64], mask_name[64];
      std::snprintf(img_name, sizeof(img_name), "%s_%03zu.ppm", prefix.c_str(), i);
      std::snprintf(mask_name, sizeof(mask_name), "%s_mask_%03zu.pgm", prefix.c_str(), i);
      write_pnm((base / img_name).string(), views[i].image);
      write_pnm((base / mask_name).string(), views[i].mask);
      const Camera& cam = views[i].camera;
      json vj;
      vj["image"] = img_name;
      vj["mask"] = mask_name;
      vj["width"] = cam.width;
      vj["height"] = cam.height;
      vj["K"] = cam.K.m;
      vj["R"] = cam.R.m;
      vj["t"] = {cam.t.x, cam.t.y, cam.t.z};
      arr.push_back(vj);
    }
    return arr;
  };

  json manifest;
  manifest["template"] = "template.obj";
  manifest["background"] = {0.0, 0.0, 0.0};
  manifest["views"] = write_views(fx.train_views, "view");
  manifest["landmarks"] = "landmarks.json";
  save_json_file((base / "manifest.json").string(), manifest);
  save_landmarks((base / "landmarks.json").string(), fx.landmarks);

  if (!fx.heldout_views.empty()) {
    json held;
    held["template"] = "template.obj";
    held["background"] = {0.0, 0.0, 0.0};
    held["views"] = write_views(fx.heldout_views, "heldout");
    save_json_file((base / "heldout.json").string(), held);
  }

  json fxj;
  fxj["surface"] = radial_surface_to_json(fx.params.surface);
  fxj["manifest"] = "manifest.json";
  if (!fx.heldout_views.empty()) fxj["heldout"] = "heldout.json";
  save_json_file((base / "fixture.json").string(), fxj);
}

}  // namespace topofit
