#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "topofit/octree.hpp"
#include "topofit/params.hpp"
#include "topofit/renderer.hpp"
#include "topofit/synth.hpp"

namespace topofit {

// Finite-difference validation of the hand-written gradients. The probe loss
// is a fixed random linear functional of each ray's color and opacity, which
// makes every upstream path (color, background, opacity) active at once.
//
// Geometry parameters (vertices, sharpness) are checked against a replay that
// keeps the sample positions frozen: sampling is treated as non-differentiable
// by the renderer, so the reference must hold it fixed too. Appearance
// parameters reuse the full renderer, whose sample positions do not depend on
// them.

struct GradCheckOptions {
  uint64_t seed = 7;
  int n_rays = 8;
  int n_samples = 24;
  double sharpness = 40.0;
  double eps_vertices = 1e-5;
  double eps_planes = 1e-4;
  double eps_decoder = 1e-4;
  double eps_scale = 1e-3;
  int max_plane_entries = 48;
  int max_decoder_entries = 64;
  double consistency_tol = 0.05;  // two-step agreement required to trust a probe
  double negligible = 1e-8;       // both gradients below this count as matching
};

struct GradCheckReport {
  std::string group;
  double max_rel_err = 0;
  int n_checked = 0;
  int n_skipped = 0;
  double worst_analytic = 0;
  double worst_fd = 0;
  std::string worst_entry;
};

struct GradCheckSetup {
  GradCheckOptions opts;
  ParamStore params;
  std::vector<Ray3> rays;
  std::vector<Vec3> color_weights;
  std::vector<double> opacity_weights;
  RenderOptions render;
};

inline GradCheckSetup make_gradcheck_setup(const GradCheckOptions& opts = {}) {
  Rng rng(seed_stream(opts.seed, 0x6C4D));

  TriangleMesh sphere = make_icosphere(1, 0.5);
  std::vector<Vec3> verts = sphere.vertices();
  for (Vec3& v : verts) v = v * (1.0 + 0.08 * rng.uniform(-1.0, 1.0));
  sphere.set_vertices(verts);

  const Aabb tb = sphere.bounds();
  const Vec3 half = tb.extent() * (0.5 * 2.5);
  TriPlanes planes(8, {4, 4, 4}, {tb.center() - half, tb.center() + half});
  planes.init_uniform(rng, 0.3);

  PositionalEncoding pe{4};
  MlpDecoder decoder(pe.dim() + planes.feature_dim(), 16, 3);
  decoder.init(rng);

  GradCheckSetup s{opts,
                   ParamStore(std::move(sphere), std::move(planes), std::move(decoder),
                              opts.sharpness),
                   {}, {}, {}, {}};
  for (int i = 0; i < opts.n_rays; ++i) {
    const double az = 2.0 * kPi * i / opts.n_rays;
    const Vec3 origin{2.2 * std::cos(az), (i % 2 ? -0.4 : 0.4), 2.2 * std::sin(az)};
    const Vec3 target{rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15),
                      rng.uniform(-0.15, 0.15)};
    s.rays.push_back({origin, normalized(target - origin)});
    s.color_weights.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                               rng.uniform(-1.0, 1.0)});
    s.opacity_weights.push_back(rng.uniform(-1.0, 1.0));
  }
  s.render.n_samples = opts.n_samples;
  s.render.background = {0.2, 0.3, 0.4};
  s.render.t_min = 1e-4;
  return s;
}

namespace detail {

inline uint64_t gradcheck_ray_seed(const GradCheckSetup& s, int ray) {
  return seed_stream(s.opts.seed, 0xF09D, ray);
}

// Probe loss over all rays with the full renderer.
inline double gradcheck_full_loss(const GradCheckSetup& s, const Octree& octree) {
  const RenderContext ctx = RenderContext::from(s.params, octree, s.render);
  double loss = 0;
  for (size_t i = 0; i < s.rays.size(); ++i) {
    const PixelRender r = render_pixel(ctx, s.rays[i], gradcheck_ray_seed(s, i));
    loss += dot(s.color_weights[i], r.color) + s.opacity_weights[i] * r.opacity;
  }
  return loss;
}

// Probe loss for one ray with frozen sample positions and frozen colors:
// distances are recomputed against `mesh`, compositing uses `scale`.
inline double replay_geo_loss(const TriangleMesh& mesh, const Octree& octree, double scale,
                              const RayTape& tape, const Vec3& cw, double ow, const Vec3& bg) {
  const size_t n = tape.samples.size();
  if (n < 2) return dot(cw, bg);
  std::vector<double> sdist(n);
  bool any_front = false;
  for (size_t k = 0; k < n; ++k) {
    const Vec3 p = tape.ray.at(tape.samples[k].t);
    const auto r = octree.nearest_triangle(mesh, p);
    check(r.has_value(), "nearest query returned nothing during replay");
    const Vec3 normal = pseudo_normal(mesh, *r);
    const double side = dot(p - r->point, normal);
    sdist[k] = (side < 0) ? -r->distance : r->distance;
    any_front = any_front || dot(normal, tape.ray.dir) < 0;
  }
  if (!any_front) return dot(cw, bg);
  const DensityMapping mapping{scale};
  Vec3 color;
  double opacity = 0, trans = 1.0;
  for (size_t k = 0; k + 1 < n; ++k) {
    const double a = alpha_from_distances(sdist[k], sdist[k + 1], mapping);
    const double w = trans * a;
    if (!tape.colors.empty()) color += tape.colors[k] * w;
    opacity += w;
    trans *= 1.0 - a;
  }
  color += bg * (1.0 - opacity);
  return dot(cw, color) + ow * opacity;
}

struct FdProbe {
  double value = 0;  // Richardson-extrapolated central difference
  bool consistent = false;
};

// Central differences at eps and eps/2; inconsistent probes indicate the
// perturbation crossed a discrete boundary (clamp, face change, cull flip).
template <typename EvalFn>
FdProbe fd_probe(EvalFn&& eval_at, double eps, double consistency_tol) {
  const double f1p = eval_at(eps), f1m = eval_at(-eps);
  const double f2p = eval_at(eps / 2), f2m = eval_at(-eps / 2);
  const double fd1 = (f1p - f1m) / (2 * eps);
  const double fd2 = (f2p - f2m) / eps;
  FdProbe probe;
  probe.value = (4 * fd2 - fd1) / 3;
  probe.consistent = std::abs(fd1 - fd2) / (std::abs(fd1) + std::abs(fd2) + 1e-12) <=
                     consistency_tol ||
                     (std::abs(fd1) < 1e-10 && std::abs(fd2) < 1e-10);
  return probe;
}

inline void record(GradCheckReport& rep, double analytic, double fd, double negligible,
                   const std::string& entry) {
  ++rep.n_checked;
  const double denom = std::max(std::abs(analytic), std::abs(fd));
  const double rel = denom < negligible ? 0.0 : std::abs(analytic - fd) / denom;
  if (rel > rep.max_rel_err) {
    rep.max_rel_err = rel;
    rep.worst_analytic = analytic;
    rep.worst_fd = fd;
    rep.worst_entry = entry;
  }
}

// Picks up to `limit` indices with the largest magnitudes, evenly thinned so
// small-magnitude entries stay represented.
inline std::vector<size_t> pick_entries(const std::vector<double>& values, size_t limit,
                                        double floor_mag) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < values.size(); ++i)
    if (std::abs(values[i]) > floor_mag) idx.push_back(i);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    return std::abs(values[a]) > std::abs(values[b]);
  });
  if (idx.size() <= limit) return idx;
  std::vector<size_t> out;
  const double step = static_cast<double>(idx.size()) / limit;
  for (size_t k = 0; k < limit; ++k) out.push_back(idx[static_cast<size_t>(k * step)]);
  return out;
}

}  // namespace detail

inline std::vector<GradCheckReport> run_gradcheck(GradCheckSetup& s) {
  const GradCheckOptions& o = s.opts;
  Octree octree;
  octree.build(s.params.mesh, {});

  const RenderContext ctx = RenderContext::from(s.params, octree, s.render);
  std::vector<RayTape> tapes(s.rays.size());
  double base_loss = 0;
  for (size_t i = 0; i < s.rays.size(); ++i) {
    const PixelRender r = render_pixel(ctx, s.rays[i], detail::gradcheck_ray_seed(s, i), &tapes[i]);
    check(!r.culled, "gradcheck ray ", i, " misses the mesh; adjust the setup");
    base_loss += dot(s.color_weights[i], r.color) + s.opacity_weights[i] * r.opacity;
  }

  // The frozen replay must reproduce the forward exactly before it can serve
  // as a finite-difference reference.
  double replay_loss = 0;
  for (size_t i = 0; i < s.rays.size(); ++i)
    replay_loss += detail::replay_geo_loss(s.params.mesh, octree, s.params.scale, tapes[i],
                                           s.color_weights[i], s.opacity_weights[i],
                                           s.render.background);
  check(std::abs(replay_loss - base_loss) <= 1e-9 * (1 + std::abs(base_loss)),
        "frozen replay disagrees with the forward pass: ", replay_loss, " vs ", base_loss);

  GradStore grads;
  grads.resize_like(s.params);
  LearnableSet all;
  for (int g = 0; g < kParamGroups; ++g) all[static_cast<ParamGroup>(g)] = true;
  for (size_t i = 0; i < s.rays.size(); ++i)
    backward_ray(ctx, tapes[i], s.color_weights[i], s.opacity_weights[i], all, grads);

  std::vector<GradCheckReport> reports;
  char label[96];

  {  // vertices: frozen replay, octree rebuilt per perturbation
    GradCheckReport rep{.group = "vertices"};
    const int nv = s.params.mesh.num_vertices();
    for (int vi = 0; vi < nv; ++vi) {
      for (int axis = 0; axis < 3; ++axis) {
        auto eval_at = [&](double eps) {
          TriangleMesh mesh = s.params.mesh;
          Vec3 p = mesh.vertex(vi);
          p[axis] += eps;
          mesh.set_vertex(vi, p);
          Octree oct;
          oct.build(mesh, {});
          double loss = 0;
          for (size_t i = 0; i < s.rays.size(); ++i)
            loss += detail::replay_geo_loss(mesh, oct, s.params.scale, tapes[i],
                                            s.color_weights[i], s.opacity_weights[i],
                                            s.render.background);
          return loss;
        };
        const auto probe = detail::fd_probe(eval_at, o.eps_vertices, o.consistency_tol);
        if (!probe.consistent) {
          ++rep.n_skipped;
          continue;
        }
        std::snprintf(label, sizeof(label), "vertex %d axis %d", vi, axis);
        detail::record(rep, grads.vertices[vi][axis], probe.value, o.negligible, label);
      }
    }
    reports.push_back(std::move(rep));
  }

  {  // sharpness: frozen replay at perturbed scale
    GradCheckReport rep{.group = "scale"};
    auto eval_at = [&](double eps) {
      double loss = 0;
      for (size_t i = 0; i < s.rays.size(); ++i)
        loss += detail::replay_geo_loss(s.params.mesh, octree, s.params.scale + eps, tapes[i],
                                        s.color_weights[i], s.opacity_weights[i],
                                        s.render.background);
      return loss;
    };
    const auto probe = detail::fd_probe(eval_at, o.eps_scale, o.consistency_tol);
    if (!probe.consistent)
      ++rep.n_skipped;
    else
      detail::record(rep, grads.scale, probe.value, o.negligible, "scale");
    reports.push_back(std::move(rep));
  }

  {  // planes: full forward, sampling unaffected by plane values
    GradCheckReport rep{.group = "planes"};
    for (int p = 0; p < 3; ++p) {
      const auto picked =
          detail::pick_entries(grads.planes.data[p], o.max_plane_entries / 3, 1e-12);
      for (size_t idx : picked) {
        auto eval_at = [&](double eps) {
          double& slot = s.params.planes.plane(p)[idx];
          const double saved = slot;
          slot = saved + eps;
          const double loss = detail::gradcheck_full_loss(s, octree);
          slot = saved;
          return loss;
        };
        const auto probe = detail::fd_probe(eval_at, o.eps_planes, o.consistency_tol);
        if (!probe.consistent) {
          ++rep.n_skipped;
          continue;
        }
        std::snprintf(label, sizeof(label), "plane %d entry %zu", p, idx);
        detail::record(rep, grads.planes.data[p][idx], probe.value, o.negligible, label);
      }
    }
    reports.push_back(std::move(rep));
  }

  {  // decoder weights and biases
    GradCheckReport rep{.group = "decoder"};
    const std::pair<const char*, std::vector<double>*> mats[6] = {
        {"w0", &s.params.decoder.w0()}, {"b0", &s.params.decoder.b0()},
        {"w1", &s.params.decoder.w1()}, {"b1", &s.params.decoder.b1()},
        {"w2", &s.params.decoder.w2()}, {"b2", &s.params.decoder.b2()}};
    const std::vector<double>* gmats[6] = {&grads.decoder.w0, &grads.decoder.b0,
                                           &grads.decoder.w1, &grads.decoder.b1,
                                           &grads.decoder.w2, &grads.decoder.b2};
    for (int m = 0; m < 6; ++m) {
      const auto picked = detail::pick_entries(*gmats[m], o.max_decoder_entries / 6, 1e-12);
      for (size_t idx : picked) {
        auto eval_at = [&](double eps) {
          double& slot = (*mats[m].second)[idx];
          const double saved = slot;
          slot = saved + eps;
          const double loss = detail::gradcheck_full_loss(s, octree);
          slot = saved;
          return loss;
        };
        const auto probe = detail::fd_probe(eval_at, o.eps_decoder, o.consistency_tol);
        if (!probe.consistent) {
          ++rep.n_skipped;
          continue;
        }
        std::snprintf(label, sizeof(label), "decoder %s entry %zu", mats[m].first, idx);
        detail::record(rep, (*gmats[m])[idx], probe.value, o.negligible, label);
      }
    }
    reports.push_back(std::move(rep));
  }

  return reports;
}

}  // namespace topofit
