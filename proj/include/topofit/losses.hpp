#pragma once

#include <optional>
#include <vector>

#include "topofit/camera.hpp"
#include "topofit/core.hpp"
#include "topofit/mesh.hpp"
#include "topofit/triplanes.hpp"

namespace topofit {

// ---------------------------------------------------------------------------
// Photometric L1, averaged over valid pixels and the three channels. Pixels
// are pooled across all views of an iteration before normalizing, so the
// caller accumulates sums first and divides once.

struct ColorL1 {
  double sum_abs = 0;  // sum of |r - o| over valid pixels and channels
  int n_valid = 0;

  void accumulate(const Vec3& rendered, const Vec3& observed) {
    for (int c = 0; c < 3; ++c) sum_abs += std::abs(rendered[c] - observed[c]);
    ++n_valid;
  }
  void merge(const ColorL1& o) {
    sum_abs += o.sum_abs;
    n_valid += o.n_valid;
  }
  double value() const {
    check(n_valid > 0, "color loss over an empty pixel set");
    return sum_abs / (3.0 * n_valid);
  }
};

// dL/d(rendered) for one valid pixel once the pooled count is known.
inline Vec3 color_l1_pixel_grad(const Vec3& rendered, const Vec3& observed, int n_valid) {
  check(n_valid > 0, "color loss over an empty pixel set");
  Vec3 g;
  const double inv = 1.0 / (3.0 * n_valid);
  for (int c = 0; c < 3; ++c) {
    const double d = rendered[c] - observed[c];
    g[c] = d > 0 ? inv : (d < 0 ? -inv : 0.0);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Total variation over the feature planes: per interior node, one Euclidean
// norm of the stacked forward differences of all channels.

inline double tv_loss(const TriPlanes& t) {
  double total = 0;
  const int res = t.resolution();
  for (int p = 0; p < 3; ++p) {
    const auto& plane = t.plane(p);
    const int dim = t.dims()[p];
    for (int i = 0; i + 1 < res; ++i)
      for (int j = 0; j + 1 < res; ++j) {
        const double* n00 = &plane[t.node_offset(p, i, j)];
        const double* n10 = &plane[t.node_offset(p, i + 1, j)];
        const double* n01 = &plane[t.node_offset(p, i, j + 1)];
        double s = 0;
        for (int c = 0; c < dim; ++c) s += sqr(n10[c] - n00[c]) + sqr(n01[c] - n00[c]);
        total += std::sqrt(s);
      }
  }
  return total;
}

inline void tv_loss_backward(const TriPlanes& t, double upstream, PlaneGrads& grads) {
  const int res = t.resolution();
  for (int p = 0; p < 3; ++p) {
    const auto& plane = t.plane(p);
    const int dim = t.dims()[p];
    for (int i = 0; i + 1 < res; ++i)
      for (int j = 0; j + 1 < res; ++j) {
        const double* n00 = &plane[t.node_offset(p, i, j)];
        const double* n10 = &plane[t.node_offset(p, i + 1, j)];
        const double* n01 = &plane[t.node_offset(p, i, j + 1)];
        double s = 0;
        for (int c = 0; c < dim; ++c) s += sqr(n10[c] - n00[c]) + sqr(n01[c] - n00[c]);
        if (s <= 1e-24) continue;  // flat cell, subgradient zero
        const double inv = upstream / std::sqrt(s);
        double* g00 = &grads.data[p][t.node_offset(p, i, j)];
        double* g10 = &grads.data[p][t.node_offset(p, i + 1, j)];
        double* g01 = &grads.data[p][t.node_offset(p, i, j + 1)];
        for (int c = 0; c < dim; ++c) {
          const double di = (n10[c] - n00[c]) * inv;
          const double dj = (n01[c] - n00[c]) * inv;
          g10[c] += di;
          g01[c] += dj;
          g00[c] -= di + dj;
        }
      }
  }
}

// Linear ramp used for the total-variation weight during appearance fitting.
inline double tv_weight_schedule(int iter, int total_iters, double w_start, double w_end) {
  check(total_iters >= 1, "schedule needs at least one iteration");
  if (total_iters == 1) return w_start;
  const double f = static_cast<double>(iter) / (total_iters - 1);
  return w_start + (w_end - w_start) * std::clamp(f, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Landmarks: squared pixel distance between projected mesh vertices and
// annotated detections.

struct LandmarkObservation {
  int view = -1;
  int vertex = -1;
  Vec2 pixel;
};

inline double landmark_loss(const TriangleMesh& mesh, const std::vector<Camera>& cameras,
                            const std::vector<LandmarkObservation>& obs,
                            std::vector<Vec3>* d_vertices = nullptr, double upstream = 1.0) {
  double total = 0;
  for (const auto& lm : obs) {
    check(lm.view >= 0 && lm.view < static_cast<int>(cameras.size()),
          "landmark references view ", lm.view, " out of range");
    check(lm.vertex >= 0 && lm.vertex < mesh.num_vertices(),
          "landmark references vertex ", lm.vertex, " out of range");
    const Vec3 v = mesh.vertices()[lm.vertex];
    const Camera& cam = cameras[lm.view];
    const Vec3 q = cam.R * v + cam.t;
    if (q.z <= 0) {
      warn("landmark vertex behind camera; skipping the term");
      continue;
    }
    const Vec2 proj = project_vertex(cam, v);
    const Vec2 diff = proj - lm.pixel;
    total += norm2(diff);
    if (d_vertices) {
      const ProjectionJacobian jac = project_vertex_jacobian(cam, v);
      (*d_vertices)[lm.vertex] +=
          (jac.du * (2.0 * diff.x) + jac.dv * (2.0 * diff.y)) * upstream;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Silhouette supervision on a band around the mask contour.

// Contour pixels are foreground pixels with a 4-neighbor background pixel
// inside the image. The band is their dilation by a Chebyshev radius.
// Returned coordinates are sorted row-major. A mask without any contour
// (all foreground or all background) yields an empty band with a warning.
inline std::vector<std::pair<int, int>> mask_contour_band(const std::vector<uint8_t>& mask,
                                                          int width, int height, int radius) {
  check(width > 0 && height > 0, "mask must be non-empty");
  check(static_cast<int>(mask.size()) == width * height, "mask size mismatch");
  check(radius >= 0, "band radius must be non-negative");
  auto at = [&](int x, int y) { return mask[static_cast<size_t>(y) * width + x] != 0; };
  std::vector<uint8_t> band(mask.size(), 0);
  bool any_contour = false;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!at(x, y)) continue;
      const bool boundary = (x > 0 && !at(x - 1, y)) || (x + 1 < width && !at(x + 1, y)) ||
                            (y > 0 && !at(x, y - 1)) || (y + 1 < height && !at(x, y + 1));
      if (!boundary) continue;
      any_contour = true;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= height) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= width) continue;
          band[static_cast<size_t>(yy) * width + xx] = 1;
        }
      }
    }
  std::vector<std::pair<int, int>> coords;
  if (!any_contour) {
    warn("mask has no contour; silhouette band is empty");
    return coords;
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (band[static_cast<size_t>(y) * width + x]) coords.emplace_back(x, y);
  return coords;
}

// Squared error between mask values and rendered opacities over band pixels,
// pooled across views like the color loss. Culled pixels count with opacity
// forced to zero and receive no gradient.
struct MaskLoss {
  double sum_sq = 0;
  int n_pixels = 0;

  void accumulate(double mask_value, double opacity, bool culled) {
    const double o = culled ? 0.0 : opacity;
    sum_sq += sqr(mask_value - o);
    ++n_pixels;
  }
  void merge(const MaskLoss& o) {
    sum_sq += o.sum_sq;
    n_pixels += o.n_pixels;
  }
  double value() const {
    check(n_pixels > 0, "mask loss over an empty band");
    return sum_sq / n_pixels;
  }
};

inline double mask_loss_pixel_grad(double mask_value, double opacity, bool culled, int n_pixels) {
  check(n_pixels > 0, "mask loss over an empty band");
  if (culled) return 0.0;
  return -2.0 * (mask_value - opacity) / n_pixels;
}

// ---------------------------------------------------------------------------
// Umbrella smoothness: sum of squared norms of each vertex's offset from the
// mean of its neighbors.

inline double laplacian_loss(const TriangleMesh& mesh, std::vector<Vec3>* d_vertices = nullptr,
                             double upstream = 1.0) {
  const std::vector<Vec3> deltas = laplacian_deltas(mesh);
  double total = 0;
  for (const Vec3& d : deltas) total += norm2(d);
  if (d_vertices) {
    check(d_vertices->size() == deltas.size(), "vertex grad size mismatch");
    for (int i = 0; i < mesh.num_vertices(); ++i) {
      const Vec3 g = deltas[i] * (2.0 * upstream);
      (*d_vertices)[i] += g;
      const auto& nbrs = mesh.neighbors(i);
      if (nbrs.empty()) continue;
      const Vec3 share = g / static_cast<double>(nbrs.size());
      for (int j : nbrs) (*d_vertices)[j] -= share;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Stage compositions. Every stage sees exactly the terms listed here;
// requesting a composition without its required terms is an error.

enum class Stage { Landmark, Silhouette, Appearance, Joint };

struct LossWeights {
  double color = 1.0;
  double landmark = 1.0;
  double mask = 1.0;
  double laplacian = 19.0;
  double tv_start = 1e-2;
  double tv_end = 1e-3;
};

struct LossTerms {
  std::optional<double> color;
  std::optional<double> tv;
  std::optional<double> landmark;
  std::optional<double> mask;
  std::optional<double> laplacian;
};

inline double total_loss(Stage stage, const LossTerms& terms, const LossWeights& w,
                         double tv_weight_now = 0.0) {
  auto need = [](const std::optional<double>& t, const char* name) {
    check(t.has_value(), "stage is missing required loss term: ", name);
    return *t;
  };
  switch (stage) {
    case Stage::Landmark:
      return w.landmark * need(terms.landmark, "landmark") +
             w.laplacian * need(terms.laplacian, "laplacian");
    case Stage::Silhouette:
      return w.mask * need(terms.mask, "mask") + w.laplacian * need(terms.laplacian, "laplacian");
    case Stage::Appearance:
      return w.color * need(terms.color, "color") + tv_weight_now * need(terms.tv, "tv");
    case Stage::Joint:
      return w.color * need(terms.color, "color") +
             w.laplacian * need(terms.laplacian, "laplacian");
  }
  fail("unknown stage");
}

}  // namespace topofit
