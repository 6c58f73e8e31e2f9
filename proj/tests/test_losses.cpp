#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "topofit/losses.hpp"
#include "topofit/synth.hpp"

using namespace topofit;

namespace {

Camera simple_camera() {
  Camera cam;
  cam.K = Mat3::identity();
  cam.K(0, 0) = 100.0;
  cam.K(1, 1) = 100.0;
  cam.K(0, 2) = 64.0;
  cam.K(1, 2) = 64.0;
  cam.R = Mat3::identity();
  cam.t = Vec3{0, 0, 2};
  cam.width = 128;
  cam.height = 128;
  cam.validate();
  return cam;
}

// Independent band construction: collect contour pixels, then take every
// pixel whose Chebyshev distance to some contour pixel is within the radius.
std::vector<std::pair<int, int>> distance_band(const std::vector<uint8_t>& m, int w, int h,
                                               int r) {
  auto fg = [&](int x, int y) { return m[static_cast<size_t>(y) * w + x] != 0; };
  std::vector<std::pair<int, int>> contour;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!fg(x, y)) continue;
      if ((x > 0 && !fg(x - 1, y)) || (x + 1 < w && !fg(x + 1, y)) ||
          (y > 0 && !fg(x, y - 1)) || (y + 1 < h && !fg(x, y + 1)))
        contour.emplace_back(x, y);
    }
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (auto [cx, cy] : contour)
        if (std::max(std::abs(x - cx), std::abs(y - cy)) <= r) {
          out.emplace_back(x, y);
          break;
        }
  return out;
}

}  // namespace

TEST(ColorL1, PoolsPixelsBeforeNormalizing) {
  ColorL1 loss;
  loss.accumulate(Vec3{0.2, 0.5, 0.9}, Vec3{0.1, 0.7, 0.9});
  loss.accumulate(Vec3{1, 0, 0}, Vec3{0, 0, 1});
  EXPECT_NEAR(loss.value(), (0.1 + 0.2 + 0.0 + 1.0 + 0.0 + 1.0) / 6.0, 1e-12);

  ColorL1 a, b;
  a.accumulate(Vec3{0.2, 0.5, 0.9}, Vec3{0.1, 0.7, 0.9});
  b.accumulate(Vec3{1, 0, 0}, Vec3{0, 0, 1});
  a.merge(b);
  EXPECT_DOUBLE_EQ(a.value(), loss.value());

  ColorL1 empty;
  EXPECT_THROW(empty.value(), std::runtime_error);
}

TEST(ColorL1, PixelGradientIsSignOverPooledCount) {
  const Vec3 g = color_l1_pixel_grad(Vec3{0.2, 0.5, 0.9}, Vec3{0.1, 0.7, 0.9}, 2);
  EXPECT_DOUBLE_EQ(g.x, 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(g.y, -1.0 / 6.0);
  EXPECT_DOUBLE_EQ(g.z, 0.0);
  EXPECT_THROW(color_l1_pixel_grad(Vec3{0, 0, 0}, Vec3{0, 0, 0}, 0), std::runtime_error);

  // finite differences at a pixel with strictly nonzero channel residuals
  const Vec3 r{0.4, 0.1, 0.8}, o{0.7, 0.05, 0.2};
  const int n = 3;
  const Vec3 ga = color_l1_pixel_grad(r, o, n);
  auto pooled = [&](const Vec3& rr) {
    ColorL1 l;
    l.accumulate(rr, o);
    l.accumulate(Vec3{0, 0, 0}, Vec3{0, 0, 0});
    l.accumulate(Vec3{1, 1, 1}, Vec3{1, 1, 1});
    return l.value();
  };
  const double h = 1e-6;
  for (int c = 0; c < 3; ++c) {
    Vec3 rp = r, rm = r;
    rp[c] += h;
    rm[c] -= h;
    EXPECT_NEAR(ga[c], (pooled(rp) - pooled(rm)) / (2 * h), 1e-9);
  }
}

TEST(TvLoss, SingleCellHandCase) {
  const Aabb bounds{Vec3{-1, -1, -1}, Vec3{1, 1, 1}};
  TriPlanes t(2, {1, 1, 1}, bounds);
  for (int p = 0; p < 3; ++p) std::fill(t.plane(p).begin(), t.plane(p).end(), 0.0);
  // one interior cell on the first plane: value 1 one step along i, 2 along j
  t.plane(0)[t.node_offset(0, 0, 0)] = 0.0;
  t.plane(0)[t.node_offset(0, 1, 0)] = 1.0;
  t.plane(0)[t.node_offset(0, 0, 1)] = 2.0;
  EXPECT_NEAR(tv_loss(t), std::sqrt(5.0), 1e-9);
}

TEST(TvLoss, StacksChannelsInsideTheNorm) {
  const Aabb bounds{Vec3{0, 0, 0}, Vec3{1, 1, 1}};
  TriPlanes t(2, {2, 1, 1}, bounds);
  for (int p = 0; p < 3; ++p) std::fill(t.plane(p).begin(), t.plane(p).end(), 0.0);
  double* n10 = &t.plane(0)[t.node_offset(0, 1, 0)];
  n10[0] = 3.0;
  n10[1] = 4.0;
  // one difference of (3,4) across both channels: sqrt(9+16) = 5, not 3+4
  EXPECT_NEAR(tv_loss(t), 5.0, 1e-12);
}

TEST(TvLoss, BackwardMatchesFiniteDifferences) {
  const Aabb bounds{Vec3{0, 0, 0}, Vec3{1, 1, 1}};
  TriPlanes t(3, {2, 1, 1}, bounds);
  Rng rng(20260814);
  for (int p = 0; p < 3; ++p)
    for (double& v : t.plane(p)) v = rng.uniform(-1.0, 1.0);

  PlaneGrads grads;
  grads.resize_like(t);
  tv_loss_backward(t, 1.0, grads);

  const double h = 1e-6;
  for (int p = 0; p < 3; ++p)
    for (size_t i = 0; i < t.plane(p).size(); ++i) {
      const double keep = t.plane(p)[i];
      t.plane(p)[i] = keep + h;
      const double up = tv_loss(t);
      t.plane(p)[i] = keep - h;
      const double dn = tv_loss(t);
      t.plane(p)[i] = keep;
      EXPECT_NEAR(grads.data[p][i], (up - dn) / (2 * h), 1e-6)
          << "plane " << p << " node " << i;
    }

  PlaneGrads scaled;
  scaled.resize_like(t);
  tv_loss_backward(t, 2.5, scaled);
  for (int p = 0; p < 3; ++p)
    for (size_t i = 0; i < t.plane(p).size(); ++i)
      EXPECT_NEAR(scaled.data[p][i], 2.5 * grads.data[p][i], 1e-12);
}

TEST(TvLoss, FlatCellsGetZeroSubgradient) {
  const Aabb bounds{Vec3{0, 0, 0}, Vec3{1, 1, 1}};
  TriPlanes t(2, {1, 1, 1}, bounds);
  for (int p = 0; p < 3; ++p) std::fill(t.plane(p).begin(), t.plane(p).end(), 0.25);
  EXPECT_DOUBLE_EQ(tv_loss(t), 0.0);
  PlaneGrads grads;
  grads.resize_like(t);
  tv_loss_backward(t, 1.0, grads);
  for (int p = 0; p < 3; ++p)
    for (double g : grads.data[p]) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(TvWeightSchedule, LinearRampWithClamping) {
  EXPECT_DOUBLE_EQ(tv_weight_schedule(0, 100, 1e-2, 1e-3), 1e-2);
  EXPECT_DOUBLE_EQ(tv_weight_schedule(99, 100, 1e-2, 1e-3), 1e-3);
  EXPECT_DOUBLE_EQ(tv_weight_schedule(50, 101, 1e-2, 1e-3), (1e-2 + 1e-3) / 2);
  EXPECT_DOUBLE_EQ(tv_weight_schedule(500, 100, 1e-2, 1e-3), 1e-3);
  EXPECT_DOUBLE_EQ(tv_weight_schedule(0, 1, 1e-2, 1e-3), 1e-2);
  EXPECT_THROW(tv_weight_schedule(0, 0, 1e-2, 1e-3), std::runtime_error);
}

TEST(LandmarkLoss, HandComputedSquaredPixelError) {
  const Camera cam = simple_camera();
  TriangleMesh mesh(std::vector<Vec3>{{0.1, -0.2, 0.0}, {0, 0, 0}, {0.3, 0, 0}},
                    {{0, 1, 2}});
  // vertex 0 projects to (69, 54); observe it 3 px right, 4 px up
  LandmarkObservation lm{0, 0, Vec2{72.0, 50.0}};
  EXPECT_NEAR(landmark_loss(mesh, {cam}, {lm}), 25.0, 1e-9);

  LandmarkObservation exact{0, 0, Vec2{69.0, 54.0}};
  EXPECT_DOUBLE_EQ(landmark_loss(mesh, {cam}, {exact}), 0.0);

  // two observations accumulate
  EXPECT_NEAR(landmark_loss(mesh, {cam}, {lm, exact}), 25.0, 1e-9);
}

TEST(LandmarkLoss, GradientMatchesFiniteDifferences) {
  SynthParams sp;
  const auto cams = make_ring_cameras(3, sp.cam_distance, 96, 96, sp.fov_x_deg);
  TriangleMesh mesh = make_icosphere(1, 0.5);
  Rng rng(77);
  std::vector<LandmarkObservation> obs;
  for (int k = 0; k < 8; ++k)
    obs.push_back({rng.uniform_int(3), rng.uniform_int(mesh.num_vertices()),
                   Vec2{rng.uniform(20.0, 76.0), rng.uniform(20.0, 76.0)}});

  std::vector<Vec3> grad(mesh.num_vertices(), Vec3{0, 0, 0});
  landmark_loss(mesh, cams, obs, &grad, 1.0);

  const double h = 1e-5;
  for (const auto& lm : obs)
    for (int c = 0; c < 3; ++c) {
      const Vec3 keep = mesh.vertex(lm.vertex);
      Vec3 vp = keep, vm = keep;
      vp[c] += h;
      vm[c] -= h;
      mesh.set_vertex(lm.vertex, vp);
      const double up = landmark_loss(mesh, cams, obs);
      mesh.set_vertex(lm.vertex, vm);
      const double dn = landmark_loss(mesh, cams, obs);
      mesh.set_vertex(lm.vertex, keep);
      const double fd = (up - dn) / (2 * h);
      EXPECT_NEAR(grad[lm.vertex][c], fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST(LandmarkLoss, SkipsVerticesBehindCameraAndValidatesIndices) {
  const Camera cam = simple_camera();
  TriangleMesh mesh(std::vector<Vec3>{{0.1, -0.2, 0.0}, {0, 0, -5.0}, {0.3, 0, 0}},
                    {{0, 1, 2}});
  LandmarkObservation good{0, 0, Vec2{72.0, 50.0}};
  LandmarkObservation behind{0, 1, Vec2{10.0, 10.0}};
  std::vector<Vec3> grad(3, Vec3{0, 0, 0});
  EXPECT_NEAR(landmark_loss(mesh, {cam}, {good, behind}, &grad), 25.0, 1e-9);
  EXPECT_DOUBLE_EQ(grad[1].x, 0.0);
  EXPECT_DOUBLE_EQ(grad[1].y, 0.0);
  EXPECT_DOUBLE_EQ(grad[1].z, 0.0);

  EXPECT_THROW(landmark_loss(mesh, {cam}, {{1, 0, Vec2{0, 0}}}), std::runtime_error);
  EXPECT_THROW(landmark_loss(mesh, {cam}, {{0, 7, Vec2{0, 0}}}), std::runtime_error);
}

TEST(MaskContourBand, SinglePixelHandCase) {
  const int w = 5, h = 4;
  std::vector<uint8_t> m(w * h, 0);
  m[1 * w + 2] = 1;
  const auto band = mask_contour_band(m, w, h, 1);
  const std::vector<std::pair<int, int>> expected{{1, 0}, {2, 0}, {3, 0}, {1, 1}, {2, 1},
                                                  {3, 1}, {1, 2}, {2, 2}, {3, 2}};
  EXPECT_EQ(band, expected);
  EXPECT_EQ(mask_contour_band(m, w, h, 0), (std::vector<std::pair<int, int>>{{2, 1}}));
}

TEST(MaskContourBand, MatchesDistanceDefinitionOnRandomMasks) {
  Rng rng(4242);
  for (int trial = 0; trial < 24; ++trial) {
    const int w = 4 + rng.uniform_int(17);
    const int h = 4 + rng.uniform_int(13);
    std::vector<uint8_t> m(static_cast<size_t>(w) * h, 0);
    if (trial % 2 == 0) {
      for (auto& v : m) v = rng.uniform() < 0.4 ? 1 : 0;
    } else {
      for (int blob = 0; blob < 2; ++blob) {
        const double cx = rng.uniform(0.0, w - 1.0), cy = rng.uniform(0.0, h - 1.0);
        const double r = rng.uniform(1.0, 4.0);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            if (sqr(x - cx) + sqr(y - cy) <= sqr(r)) m[static_cast<size_t>(y) * w + x] = 1;
      }
    }
    const int radius = rng.uniform_int(4);
    EXPECT_EQ(mask_contour_band(m, w, h, radius), distance_band(m, w, h, radius))
        << "trial " << trial << " size " << w << "x" << h << " radius " << radius;
  }
}

TEST(MaskContourBand, UniformMasksHaveNoContour) {
  std::vector<uint8_t> fg(6 * 6, 1);
  EXPECT_TRUE(mask_contour_band(fg, 6, 6, 2).empty());
  std::vector<uint8_t> bg(6 * 6, 0);
  EXPECT_TRUE(mask_contour_band(bg, 6, 6, 2).empty());

  // foreground touching the border is not a contour there: full columns only
  // expose left/right edges
  std::vector<uint8_t> stripe(4 * 3, 0);
  for (int y = 0; y < 3; ++y) stripe[static_cast<size_t>(y) * 4 + 1] = 1;
  const auto band = mask_contour_band(stripe, 4, 3, 0);
  EXPECT_EQ(band, (std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {1, 2}}));

  EXPECT_THROW(mask_contour_band(fg, 5, 6, 1), std::runtime_error);
  EXPECT_THROW(mask_contour_band(fg, 6, 6, -1), std::runtime_error);
  EXPECT_THROW(mask_contour_band({}, 0, 0, 1), std::runtime_error);
}

TEST(MaskLoss, PoolsSquaredErrorAndForcesCulledToZero) {
  MaskLoss loss;
  loss.accumulate(1.0, 0.25, false);
  loss.accumulate(0.0, 0.5, true);   // culled: opacity treated as 0
  loss.accumulate(0.0, 0.3, false);
  EXPECT_NEAR(loss.value(), (0.5625 + 0.0 + 0.09) / 3.0, 1e-12);

  MaskLoss culled_fg;
  culled_fg.accumulate(1.0, 0.9, true);
  EXPECT_DOUBLE_EQ(culled_fg.value(), 1.0);

  MaskLoss a, b;
  a.accumulate(1.0, 0.25, false);
  b.accumulate(0.0, 0.5, true);
  b.accumulate(0.0, 0.3, false);
  a.merge(b);
  EXPECT_DOUBLE_EQ(a.value(), loss.value());

  MaskLoss empty;
  EXPECT_THROW(empty.value(), std::runtime_error);
}

TEST(MaskLoss, PixelGradientFormula) {
  EXPECT_DOUBLE_EQ(mask_loss_pixel_grad(1.0, 0.25, false, 3), -2.0 * 0.75 / 3.0);
  EXPECT_DOUBLE_EQ(mask_loss_pixel_grad(0.0, 0.3, false, 3), 0.2);
  EXPECT_DOUBLE_EQ(mask_loss_pixel_grad(1.0, 0.9, true, 3), 0.0);
  EXPECT_THROW(mask_loss_pixel_grad(1.0, 0.5, false, 0), std::runtime_error);

  // quadratic form: central differences agree to machine precision
  const double m = 0.7, o = 0.4, h = 1e-6;
  const int n = 5;
  auto val = [&](double oo) {
    MaskLoss l;
    l.accumulate(m, oo, false);
    for (int k = 1; k < n; ++k) l.accumulate(0.0, 0.0, false);
    return l.value();
  };
  EXPECT_NEAR(mask_loss_pixel_grad(m, o, false, n), (val(o + h) - val(o - h)) / (2 * h), 1e-9);
}

TEST(LaplacianLoss, VertexAtNeighborCentroidContributesNothing) {
  // hexagonal fan: the hub sits exactly at the centroid of its ring
  const double a = std::sqrt(3.0) / 2.0;
  std::vector<Vec3> verts{{0, 0, 0},  {1, 0, 0},  {0.5, a, 0}, {-0.5, a, 0},
                          {-1, 0, 0}, {-0.5, -a, 0}, {0.5, -a, 0}};
  std::vector<std::array<int, 3>> faces;
  for (int i = 0; i < 6; ++i) faces.push_back({0, 1 + i, 1 + (i + 1) % 6});
  TriangleMesh mesh(verts, faces);

  const auto deltas = laplacian_deltas(mesh);
  EXPECT_NEAR(norm(deltas[0]), 0.0, 1e-9);
  // each ring vertex: neighbors are the hub and both ring neighbors,
  // delta = p - p/3, so the loss is 6 * 4/9
  EXPECT_NEAR(laplacian_loss(mesh), 6.0 * 4.0 / 9.0, 1e-9);
}

TEST(LaplacianLoss, HandComputedTriangleWithIsolatedVertex) {
  TriangleMesh mesh(std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 5, 5}},
                    {{0, 1, 2}});
  // deltas: (-.5,-.5,0), (1,-.5,0)... norms 0.5 + 1.25 + 1.25; isolated -> 0
  EXPECT_NEAR(laplacian_loss(mesh), 3.0, 1e-12);
  std::vector<Vec3> grad(4, Vec3{0, 0, 0});
  laplacian_loss(mesh, &grad, 1.0);
  EXPECT_DOUBLE_EQ(norm(grad[3]), 0.0);
}

TEST(LaplacianLoss, GradientMatchesFiniteDifferences) {
  TriangleMesh mesh = make_icosphere(1, 0.5);
  Rng rng(99);
  for (int i = 0; i < mesh.num_vertices(); ++i)
    mesh.set_vertex(i, mesh.vertex(i) + Vec3{rng.uniform(-0.02, 0.02),
                                             rng.uniform(-0.02, 0.02),
                                             rng.uniform(-0.02, 0.02)});

  std::vector<Vec3> grad(mesh.num_vertices(), Vec3{0, 0, 0});
  const double base = laplacian_loss(mesh, &grad, 1.0);
  EXPECT_GT(base, 0.0);

  const double h = 1e-6;
  for (int i = 0; i < mesh.num_vertices(); i += 7)
    for (int c = 0; c < 3; ++c) {
      const Vec3 keep = mesh.vertex(i);
      Vec3 vp = keep, vm = keep;
      vp[c] += h;
      vm[c] -= h;
      mesh.set_vertex(i, vp);
      const double up = laplacian_loss(mesh);
      mesh.set_vertex(i, vm);
      const double dn = laplacian_loss(mesh);
      mesh.set_vertex(i, keep);
      EXPECT_NEAR(grad[i][c], (up - dn) / (2 * h), 1e-6);
    }

  std::vector<Vec3> scaled(mesh.num_vertices(), Vec3{0, 0, 0});
  laplacian_loss(mesh, &scaled, 3.0);
  for (int i = 0; i < mesh.num_vertices(); ++i)
    EXPECT_NEAR(norm(scaled[i] - grad[i] * 3.0), 0.0, 1e-12);
}

TEST(TotalLoss, StageCompositions) {
  LossWeights w;
  LossTerms t;
  t.color = 0.1;
  t.tv = 2.0;
  t.landmark = 0.4;
  t.mask = 0.7;
  t.laplacian = 0.01;

  EXPECT_NEAR(total_loss(Stage::Landmark, t, w), 0.4 + 19.0 * 0.01, 1e-12);
  EXPECT_NEAR(total_loss(Stage::Silhouette, t, w), 0.7 + 19.0 * 0.01, 1e-12);
  EXPECT_NEAR(total_loss(Stage::Appearance, t, w, 5e-3), 0.1 + 5e-3 * 2.0, 1e-12);
  // joint: color plus weighted smoothness, 0.1 + 19 * 0.01
  EXPECT_NEAR(total_loss(Stage::Joint, t, w), 0.29, 1e-12);

  LossWeights custom;
  custom.mask = 2.0;
  custom.laplacian = 3.0;
  EXPECT_NEAR(total_loss(Stage::Silhouette, t, custom), 2.0 * 0.7 + 3.0 * 0.01, 1e-12);
}

TEST(TotalLoss, MissingTermsThrow) {
  LossWeights w;
  LossTerms none;
  EXPECT_THROW(total_loss(Stage::Landmark, none, w), std::runtime_error);
  EXPECT_THROW(total_loss(Stage::Silhouette, none, w), std::runtime_error);
  EXPECT_THROW(total_loss(Stage::Appearance, none, w, 1e-3), std::runtime_error);
  EXPECT_THROW(total_loss(Stage::Joint, none, w), std::runtime_error);

  LossTerms partial;
  partial.landmark = 1.0;
  EXPECT_THROW(total_loss(Stage::Landmark, partial, w), std::runtime_error);
  partial.color = 1.0;
  EXPECT_THROW(total_loss(Stage::Appearance, partial, w, 1e-3), std::runtime_error);
  EXPECT_THROW(total_loss(Stage::Joint, partial, w), std::runtime_error);
}
