#pragma once

#include <vector>

#include "topofit/camera.hpp"
#include "topofit/core.hpp"
#include "topofit/image.hpp"
#include "topofit/mesh.hpp"
#include "topofit/renderer.hpp"
#include "topofit/synth.hpp"
#include "topofit/threads.hpp"

namespace topofit {

// Renders a full view at pixel centers. Evaluation renders default to
// unjittered sampling so repeated calls agree bit for bit.
inline Image render_view(const RenderContext& ctx, const Camera& cam, uint64_t seed,
                         int workers = 1) {
  Image img;
  img.width = cam.width;
  img.height = cam.height;
  img.channels = 3;
  img.data.assign(static_cast<size_t>(cam.width) * cam.height * 3, 0.0f);
  parallel_chunks(cam.height, workers, [&](int, int row_begin, int row_end) {
    for (int y = row_begin; y < row_end; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Ray3 ray = generate_ray(cam, {x + 0.5, y + 0.5});
        const uint64_t px_seed = seed_stream(seed, static_cast<uint64_t>(y) * cam.width + x);
        const PixelRender r = render_pixel(ctx, ray, px_seed);
        img.set_rgb(x, y, r.color);
      }
  });
  return img;
}

// ---------------------------------------------------------------------------
// Distance from a point to an analytic radial surface, by pattern search over
// unit directions. Star-shaped surfaces make normalized(p) a reliable start.

inline double distance_to_radial_surface(const RadialSurface& surface, const Vec3& p) {
  Vec3 u = norm(p) > 1e-12 ? normalized(p) : Vec3{1, 0, 0};
  auto eval = [&](const Vec3& dir) { return norm(p - dir * surface.radius(dir)); };
  double best = eval(u);
  double step = 0.35;
  while (step > 1e-8) {
    // local tangent basis at the current direction
    const Vec3 ref = std::abs(u.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    const Vec3 e1 = normalized(cross(u, ref));
    const Vec3 e2 = cross(u, e1);
    bool improved = false;
    for (const Vec3& d : {e1, -e1, e2, -e2}) {
      const Vec3 cand = normalized(u + d * step);
      const double v = eval(cand);
      if (v < best - 1e-15) {
        best = v;
        u = cand;
        improved = true;
        break;
      }
    }
    if (!improved) step *= 0.5;
  }
  return best;
}

// Mean vertex-to-surface distance against the analytic ground truth.
inline double eval_geometry(const TriangleMesh& mesh, const RadialSurface& surface) {
  double total = 0;
  for (const Vec3& v : mesh.vertices()) total += distance_to_radial_surface(surface, v);
  return total / mesh.num_vertices();
}

// Mean vertex-to-mesh distance against a reference triangulation.
inline double eval_geometry(const TriangleMesh& mesh, const TriangleMesh& reference) {
  reference.validate_geometry();
  double total = 0;
  for (const Vec3& v : mesh.vertices()) {
    double best = std::numeric_limits<double>::infinity();
    for (int f = 0; f < reference.num_faces(); ++f) {
      const auto [a, b, c] = reference.face_points(f);
      const ClosestPointResult r = detail::closest_point_unchecked(v, a, b, c);
      best = std::min(best, r.distance);
    }
    total += best;
  }
  return total / mesh.num_vertices();
}

// ---------------------------------------------------------------------------
// Image metrics over a binary mask. Peak value is 1; identical images return
// an infinite PSNR.

struct RenderMetrics {
  double psnr = 0;
  double ssim = 0;
  int n_pixels = 0;
};

inline double masked_psnr(const Image& img, const Image& ref, const Image& mask) {
  check(img.width == ref.width && img.height == ref.height && img.channels == ref.channels,
        "image/reference shape mismatch");
  check(mask.width == img.width && mask.height == img.height && mask.channels == 1,
        "mask shape mismatch");
  double se = 0;
  int64_t n = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (mask.at(x, y) < 0.5f) continue;
      for (int c = 0; c < img.channels; ++c) se += sqr(img.at(x, y, c) - ref.at(x, y, c));
      n += img.channels;
    }
  check(n > 0, "PSNR over an empty mask");
  const double mse = se / n;
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

namespace detail {

inline std::vector<double> gaussian_kernel(int radius, double sigma) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * sqr(i / sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace detail

// Mean structural similarity over masked pixels, 11x11 Gaussian window with
// sigma 1.5, stabilizers K1=0.01 and K2=0.03 at unit dynamic range. Windows
// are clipped at image borders and renormalized.
inline double masked_ssim(const Image& img, const Image& ref, const Image& mask) {
  check(img.width == ref.width && img.height == ref.height && img.channels == ref.channels,
        "image/reference shape mismatch");
  check(mask.width == img.width && mask.height == img.height && mask.channels == 1,
        "mask shape mismatch");
  constexpr int kRadius = 5;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  const std::vector<double> kernel = detail::gaussian_kernel(kRadius, 1.5);
  double total = 0;
  int64_t n = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (mask.at(x, y) < 0.5f) continue;
      for (int c = 0; c < img.channels; ++c) {
        double w_sum = 0, mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int dy = -kRadius; dy <= kRadius; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= img.height) continue;
          for (int dx = -kRadius; dx <= kRadius; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= img.width) continue;
            const double w = kernel[dy + kRadius] * kernel[dx + kRadius];
            const double a = img.at(xx, yy, c), b = ref.at(xx, yy, c);
            w_sum += w;
            mu_a += w * a;
            mu_b += w * b;
            aa += w * a * a;
            bb += w * b * b;
            ab += w * a * b;
          }
        }
        mu_a /= w_sum;
        mu_b /= w_sum;
        const double var_a = aa / w_sum - mu_a * mu_a;
        const double var_b = bb / w_sum - mu_b * mu_b;
        const double cov = ab / w_sum - mu_a * mu_b;
        const double s = ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
                         ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
        total += s;
        ++n;
      }
    }
  check(n > 0, "SSIM over an empty mask");
  return total / n;
}

inline RenderMetrics eval_render(const Image& img, const Image& ref, const Image& mask) {
  RenderMetrics m;
  m.psnr = masked_psnr(img, ref, mask);
  m.ssim = masked_ssim(img, ref, mask);
  for (float v : mask.data) m.n_pixels += v >= 0.5f ? 1 : 0;
  return m;
}

}  // namespace topofit
