#pragma once

#include <span>
#include <utility>
#include <vector>

#include "topofit/camera.hpp"
#include "topofit/core.hpp"
#include "topofit/density.hpp"
#include "topofit/mesh.hpp"
#include "topofit/octree.hpp"
#include "topofit/params.hpp"
#include "topofit/triplanes.hpp"

namespace topofit {

// ---------------------------------------------------------------------------
// Pixel sampling. The image is divided into stride x stride cells; each
// complete cell contributes one sample at its center plus an optional jitter
// small enough that the sample stays inside the cell.
inline std::vector<Vec2> sample_grid_pixels(int width, int height, int stride,
                                            double jitter_amp, uint64_t seed) {
  check(width > 0 && height > 0, "image must be non-empty");
  check(stride >= 1, "stride must be >= 1, got ", stride);
  check(jitter_amp >= 0 && jitter_amp < 0.5 * stride,
        "jitter amplitude must lie in [0, stride/2)");
  const int nx = width / stride, ny = height / stride;
  std::vector<Vec2> out;
  out.reserve(static_cast<size_t>(nx) * ny);
  Rng rng(seed);
  for (int gy = 0; gy < ny; ++gy)
    for (int gx = 0; gx < nx; ++gx) {
      Vec2 p{gx * stride + 0.5 * stride, gy * stride + 0.5 * stride};
      if (jitter_amp > 0) {
        p.x += rng.uniform(-jitter_amp, jitter_amp);
        p.y += rng.uniform(-jitter_amp, jitter_amp);
      }
      out.push_back(p);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified t values across disjoint sorted intervals, allocated
// proportionally to interval length by largest remainder, so exactly n values
// come back whenever the intervals are non-degenerate.
inline std::vector<double> stratified_ts(const std::vector<std::pair<double, double>>& intervals,
                                         int n, bool jitter, Rng& rng) {
  check(n >= 1, "sample count must be positive");
  std::vector<double> ts;
  if (intervals.empty()) return ts;
  double total = 0;
  for (size_t i = 0; i < intervals.size(); ++i) {
    check(intervals[i].second >= intervals[i].first, "interval with negative length");
    if (i) check(intervals[i].first >= intervals[i - 1].second, "intervals must be sorted/disjoint");
    total += intervals[i].second - intervals[i].first;
  }
  if (total <= 0) return ts;

  std::vector<int> counts(intervals.size(), 0);
  std::vector<std::pair<double, size_t>> remainders;  // (-frac, index) for stable ordering
  int assigned = 0;
  for (size_t i = 0; i < intervals.size(); ++i) {
    const double quota = n * (intervals[i].second - intervals[i].first) / total;
    counts[i] = static_cast<int>(quota);
    assigned += counts[i];
    remainders.emplace_back(-(quota - counts[i]), i);
  }
  std::sort(remainders.begin(), remainders.end());
  for (int k = 0; k < n - assigned; ++k) ++counts[remainders[k].second];

  ts.reserve(n);
  for (size_t i = 0; i < intervals.size(); ++i) {
    const int m = counts[i];
    if (m == 0) continue;
    const double t0 = intervals[i].first;
    const double len = intervals[i].second - intervals[i].first;
    for (int j = 0; j < m; ++j) {
      const double u = jitter ? rng.uniform() : 0.5;
      ts.push_back(t0 + (j + u) / m * len);
    }
  }
  return ts;
}

// ---------------------------------------------------------------------------
// Alpha compositing.

struct CompositeResult {
  Vec3 color;                   // weighted sum of sample colors, no background
  double opacity = 0;           // sum of weights
  std::vector<double> weights;  // w_k = T_k * alpha_k
};

inline CompositeResult composite(std::span<const double> alphas, std::span<const Vec3> colors) {
  check(alphas.size() == colors.size(), "composite needs one color per alpha");
  CompositeResult r;
  r.weights.resize(alphas.size());
  double trans = 1.0;
  for (size_t k = 0; k < alphas.size(); ++k) {
    const double a = alphas[k];
    check(a >= 0 && a <= 1, "alpha out of [0,1]: ", a);
    const double w = trans * a;
    r.weights[k] = w;
    r.color += colors[k] * w;
    r.opacity += w;
    trans *= 1.0 - a;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Per-ray rendering with a tape for the backward pass.

struct RenderOptions {
  int n_samples = 32;
  double band_scale = 4.0;  // active band half-width = band_scale / mapping.scale
  Vec3 background{0, 0, 0};
  bool jitter = true;
  double t_min = 1e-4;
  bool appearance = true;  // skip feature/decoder work for geometry-only stages
  double color_weight_cutoff = 0;  // samples at or below this weight skip the decoder
};

struct RenderContext {
  const TriangleMesh* mesh = nullptr;
  const Octree* octree = nullptr;
  const TriPlanes* planes = nullptr;
  const MlpDecoder* decoder = nullptr;
  PositionalEncoding encoding;
  DensityMapping mapping;
  RenderOptions opts;

  static RenderContext from(const ParamStore& params, const Octree& octree,
                            const RenderOptions& opts) {
    RenderContext ctx;
    ctx.mesh = &params.mesh;
    ctx.octree = &octree;
    ctx.planes = &params.planes;
    ctx.decoder = &params.decoder;
    const int pe_dim = params.decoder.in_dim() - params.planes.feature_dim();
    check(pe_dim >= 3 && pe_dim % 3 == 0 && (pe_dim / 3 - 1) % 2 == 0,
          "decoder input width does not match planes plus a positional encoding");
    ctx.encoding = PositionalEncoding{(pe_dim / 3 - 1) / 2};
    ctx.mapping = params.mapping();
    ctx.opts = opts;
    return ctx;
  }
};

struct SamplePoint {
  double t = 0;
  Vec3 position;
  double signed_distance = 0;
  int face_id = -1;
  Vec3 normal;
  bool front_facing = false;
};

// Everything the backward pass needs to replay one ray. Sample positions,
// nearest faces and normals are treated as constants of the forward pass.
struct RayTape {
  Ray3 ray;
  struct Sample {
    double t = 0;
    double sdist = 0;
    double sign = 1;
    std::array<int, 3> vids{-1, -1, -1};
    Vec3 bary;
    Vec3 u;  // unit vector from surface point to sample
    bool grad_ok = false;
    bool front = false;
  };
  std::vector<Sample> samples;
  std::vector<double> alphas;  // size max(#samples-1, 0)
  std::vector<Vec3> colors;    // matches alphas when appearance was evaluated
  std::vector<double> weights;
  Vec3 color;
  double opacity = 0;
  bool culled = false;

  // Bookkeeping filled by callers that batch rays.
  int view = -1;
  int px = -1, py = -1;
};

struct PixelRender {
  Vec3 color;
  double opacity = 0;
  bool culled = false;
};

inline SamplePoint probe_sample(const RenderContext& ctx, const Ray3& ray, double t) {
  SamplePoint sp;
  sp.t = t;
  sp.position = ray.at(t);
  const auto r = ctx.octree->nearest_triangle(*ctx.mesh, sp.position);
  check(r.has_value(), "nearest query returned nothing on a non-empty mesh");
  sp.face_id = r->face_id;
  sp.normal = pseudo_normal(*ctx.mesh, *r);
  const double side = dot(sp.position - r->point, sp.normal);
  sp.signed_distance = (side < 0) ? -r->distance : r->distance;
  sp.front_facing = dot(sp.normal, ray.dir) < 0;
  return sp;
}

inline PixelRender render_pixel(const RenderContext& ctx, const Ray3& ray, uint64_t sample_seed,
                                RayTape* tape = nullptr) {
  check(ctx.mesh && ctx.octree, "render context is missing geometry");
  check(ctx.opts.n_samples >= 2, "need at least two samples per ray");
  if (tape) {
    *tape = RayTape{};
    tape->ray = ray;
  }

  const double band = ctx.opts.band_scale / ctx.mapping.scale;
  auto intervals = ctx.octree->ray_active_intervals(ray, band, 0.0, ctx.opts.t_min);
  if (!intervals.empty()) {
    double total = 0;
    for (const auto& iv : intervals) total += iv.second - iv.first;
    intervals = [&] {  // re-merge with a gap of one average sampling step
      const double gap = total / ctx.opts.n_samples;
      std::vector<std::pair<double, double>> merged{intervals.front()};
      for (size_t i = 1; i < intervals.size(); ++i) {
        if (intervals[i].first <= merged.back().second + gap)
          merged.back().second = std::max(merged.back().second, intervals[i].second);
        else
          merged.push_back(intervals[i]);
      }
      return merged;
    }();
  }

  PixelRender out;
  out.color = ctx.opts.background;
  if (intervals.empty()) return out;

  Rng rng(sample_seed);
  const std::vector<double> ts = stratified_ts(intervals, ctx.opts.n_samples, ctx.opts.jitter, rng);
  if (ts.size() < 2) return out;

  const size_t n = ts.size();
  std::vector<RayTape::Sample> samples(n);
  bool any_front = false;
  for (size_t k = 0; k < n; ++k) {
    const Vec3 p = ray.at(ts[k]);
    const auto r = ctx.octree->nearest_triangle(*ctx.mesh, p);
    check(r.has_value(), "nearest query returned nothing on a non-empty mesh");
    const Vec3 normal = pseudo_normal(*ctx.mesh, *r);
    const double side = dot(p - r->point, normal);
    RayTape::Sample s;
    s.t = ts[k];
    s.sign = (side < 0) ? -1.0 : 1.0;
    s.sdist = s.sign * r->distance;
    s.front = dot(normal, ray.dir) < 0;
    any_front = any_front || s.front;
    const DistanceJacobian jac = closest_point_jacobians(p, *r);
    s.grad_ok = !jac.zero_distance;
    s.bary = r->barycentric;
    s.u = jac.zero_distance ? Vec3{} : (p - r->point) / r->distance;
    const auto& f = ctx.mesh->faces()[r->face_id];
    s.vids = {f[0], f[1], f[2]};
    samples[k] = s;
  }

  const bool culled = !any_front;
  std::vector<double> alphas(n - 1);
  for (size_t k = 0; k + 1 < n; ++k)
    alphas[k] = alpha_from_distances(samples[k].sdist, samples[k + 1].sdist, ctx.mapping);

  std::vector<Vec3> colors;
  if (ctx.opts.appearance && !culled) {
    check(ctx.planes && ctx.decoder, "appearance requested without planes/decoder");
    colors.resize(n - 1);
    const int fdim = ctx.planes->feature_dim();
    const int edim = ctx.encoding.dim();
    check(ctx.decoder->in_dim() == fdim + edim, "decoder input dim ", ctx.decoder->in_dim(),
          " != encoding ", edim, " + features ", fdim);
    thread_local std::vector<double> input, rgb;
    input.assign(fdim + edim, 0.0);
    rgb.assign(3, 0.0);
    // Weights are needed up front so negligible samples can skip the decoder.
    std::vector<double> weights(n - 1);
    double trans = 1.0;
    for (size_t k = 0; k + 1 < n; ++k) {
      weights[k] = trans * alphas[k];
      trans *= 1.0 - alphas[k];
    }
    for (size_t k = 0; k + 1 < n; ++k) {
      if (weights[k] <= ctx.opts.color_weight_cutoff) continue;
      const Vec3 p = ray.at(samples[k].t);
      ctx.encoding.encode(ctx.planes->normalized_position(p), std::span(input).subspan(0, edim));
      ctx.planes->sample(p, std::span(input).subspan(edim, fdim));
      ctx.decoder->forward(input, rgb);
      colors[k] = {rgb[0], rgb[1], rgb[2]};
    }
  }

  if (culled) {
    out.color = ctx.opts.background;
    out.opacity = 0;
    out.culled = true;
  } else {
    CompositeResult comp = composite(alphas, colors.empty() ? std::vector<Vec3>(n - 1) : colors);
    out.color = comp.color + ctx.opts.background * (1.0 - comp.opacity);
    out.opacity = comp.opacity;
    if (tape) tape->weights = std::move(comp.weights);
  }

  if (tape) {
    tape->samples = std::move(samples);
    tape->alphas = std::move(alphas);
    tape->colors = std::move(colors);
    tape->color = out.color;
    tape->opacity = out.opacity;
    tape->culled = out.culled;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse pass for one ray. Upstream is dL/d(output color) and dL/d(opacity).
// Culled rays contributed constants, so they propagate nothing.
inline void backward_ray(const RenderContext& ctx, const RayTape& tape, const Vec3& d_color,
                         double d_opacity, const LearnableSet& learnable, GradStore& grads) {
  if (tape.culled || tape.samples.size() < 2) return;
  const size_t n = tape.samples.size();
  const size_t m = n - 1;
  check(tape.alphas.size() == m && tape.weights.size() == m, "tape is incomplete");

  const bool want_geo = learnable[ParamGroup::Vertices] || learnable[ParamGroup::Scale];
  const bool want_app = (learnable[ParamGroup::Planes] || learnable[ParamGroup::Decoder]) &&
                        !tape.colors.empty();
  if (!want_geo && !want_app) return;

  // dL/dw_k; the background term contributes -bg through (1 - opacity).
  auto weight_grad = [&](size_t k) {
    const Vec3 c = tape.colors.empty() ? Vec3{} : tape.colors[k];
    return dot(d_color, c - ctx.opts.background) + d_opacity;
  };

  if (want_geo) {
    std::vector<double> d_s(n, 0.0);
    std::vector<double> trans(m);
    double t_acc = 1.0;
    for (size_t k = 0; k < m; ++k) {
      trans[k] = t_acc;
      t_acc *= 1.0 - tape.alphas[k];
    }
    double suffix = 0;  // sum over j > k of w_j * G_j
    for (size_t k = m; k-- > 0;) {
      const double gk = weight_grad(k);
      const double one_minus = 1.0 - tape.alphas[k];
      double d_alpha = trans[k] * gk;
      if (one_minus > 1e-12) d_alpha -= suffix / one_minus;
      suffix += tape.weights[k] * gk;
      if (d_alpha != 0) {
        const AlphaGrad ag =
            alpha_gradients(tape.samples[k].sdist, tape.samples[k + 1].sdist, ctx.mapping);
        d_s[k] += d_alpha * ag.d_sk;
        d_s[k + 1] += d_alpha * ag.d_snext;
        if (learnable[ParamGroup::Scale]) grads.scale += d_alpha * ag.d_scale;
      }
    }
    if (learnable[ParamGroup::Vertices]) {
      for (size_t k = 0; k < n; ++k) {
        const auto& s = tape.samples[k];
        if (d_s[k] == 0 || !s.grad_ok) continue;
        const Vec3 step = s.u * (d_s[k] * s.sign);
        for (int j = 0; j < 3; ++j) grads.vertices[s.vids[j]] -= step * s.bary[j];
      }
    }
  }

  if (want_app) {
    check(ctx.planes && ctx.decoder, "appearance backward without planes/decoder");
    const int fdim = ctx.planes->feature_dim();
    const int edim = ctx.encoding.dim();
    thread_local std::vector<double> input, rgb, d_out, d_in;
    thread_local MlpDecoder::Activations acts;
    input.assign(fdim + edim, 0.0);
    rgb.assign(3, 0.0);
    d_out.assign(3, 0.0);
    d_in.assign(fdim + edim, 0.0);
    for (size_t k = 0; k < m; ++k) {
      if (tape.weights[k] <= ctx.opts.color_weight_cutoff) continue;
      const Vec3 dc = d_color * tape.weights[k];
      if (dc.x == 0 && dc.y == 0 && dc.z == 0) continue;
      const Vec3 p = tape.ray.at(tape.samples[k].t);
      ctx.encoding.encode(ctx.planes->normalized_position(p), std::span(input).subspan(0, edim));
      ctx.planes->sample(p, std::span(input).subspan(edim, fdim));
      ctx.decoder->forward(input, rgb, &acts);
      d_out[0] = dc.x;
      d_out[1] = dc.y;
      d_out[2] = dc.z;
      ctx.decoder->backward(acts, d_out, grads.decoder, d_in);
      if (learnable[ParamGroup::Planes])
        sample_backward(*ctx.planes, p, std::span<const double>(d_in).subspan(edim, fdim),
                        grads.planes);
    }
  }
}

}  // namespace topofit
