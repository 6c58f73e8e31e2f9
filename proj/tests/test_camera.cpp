#include "topofit/camera.hpp"

#include <gtest/gtest.h>

#include "topofit/synth.hpp"

using namespace topofit;

namespace {

Camera make_skewed_camera() {
  Camera cam;
  cam.width = 200;
  cam.height = 160;
  cam.K.m = {180, 2.5, 100, 0, 175, 80, 0, 0, 1};
  // rotation about the y axis by 0.4, then slight tilt about x
  const double cy = std::cos(0.4), sy = std::sin(0.4);
  Mat3 ry;
  ry.m = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  const double cx = std::cos(0.1), sx = std::sin(0.1);
  Mat3 rx;
  rx.m = {1, 0, 0, 0, cx, -sx, 0, sx, cx};
  cam.R = rx * ry;
  cam.t = {0.2, -0.1, 3.0};
  return cam;
}

}  // namespace

TEST(Camera, Validation) {
  Camera cam = make_skewed_camera();
  EXPECT_NO_THROW(cam.validate());

  Camera bad_k = cam;
  bad_k.K(2, 0) = 0.1;
  EXPECT_THROW(bad_k.validate(), std::runtime_error);

  Camera bad_r = cam;
  bad_r.R(0, 0) += 0.01;
  EXPECT_THROW(bad_r.validate(), std::runtime_error);

  Camera mirrored = cam;
  for (int c = 0; c < 3; ++c) mirrored.R(0, c) = -mirrored.R(0, c);  // det -1
  EXPECT_THROW(mirrored.validate(), std::runtime_error);

  Camera empty = cam;
  empty.width = 0;
  EXPECT_THROW(empty.validate(), std::runtime_error);
}

TEST(Camera, CenterMapsToOrigin) {
  const Camera cam = make_skewed_camera();
  const Vec3 c = cam.center();
  const Vec3 q = cam.R * c + cam.t;
  EXPECT_NEAR(norm(q), 0, 1e-12);
}

TEST(Camera, ProjectBackprojectRoundTrip) {
  const Camera cam = make_skewed_camera();
  Rng rng(9);
  for (int i = 0; i < 40; ++i) {
    const Vec2 pixel{rng.uniform(0.0, cam.width), rng.uniform(0.0, cam.height)};
    const Vec3 dir_cam = cam.backproject(pixel);
    EXPECT_DOUBLE_EQ(dir_cam.z, 1.0);
    // K * dir must land back on the pixel
    const Vec3 h = cam.K * dir_cam;
    EXPECT_NEAR(h.x / h.z, pixel.x, 1e-9);
    EXPECT_NEAR(h.y / h.z, pixel.y, 1e-9);
  }
}

TEST(Camera, RayPassesThroughProjectedPoint) {
  const Camera cam = make_skewed_camera();
  Rng rng(21);
  for (int i = 0; i < 40; ++i) {
    const Vec3 p{rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)};
    Vec2 pixel;
    try {
      pixel = project_vertex(cam, p);
    } catch (const std::runtime_error&) {
      continue;
    }
    if (pixel.x < 0 || pixel.x > cam.width || pixel.y < 0 || pixel.y > cam.height) continue;
    const Ray3 ray = generate_ray(cam, pixel);
    EXPECT_NEAR(norm(ray.origin - cam.center()), 0, 1e-12);
    EXPECT_NEAR(norm(ray.dir), 1.0, 1e-12);
    // distance from p to the ray
    const Vec3 rel = p - ray.origin;
    const Vec3 off = rel - ray.dir * dot(rel, ray.dir);
    EXPECT_NEAR(norm(off), 0, 1e-9) << "sample " << i;
  }
  EXPECT_THROW(generate_ray(cam, {-1, 5}), std::runtime_error);
  EXPECT_THROW(generate_ray(cam, {5, cam.height + 1.0}), std::runtime_error);
}

TEST(Camera, ProjectBehindCameraThrows) {
  const Camera cam = make_skewed_camera();
  const Vec3 behind = cam.center() - Vec3{0, 0, 5};  // far along -z from the center
  const Vec3 q = cam.R * behind + cam.t;
  if (q.z <= 0) EXPECT_THROW(project_vertex(cam, behind), std::runtime_error);
}

TEST(Camera, ProjectionJacobianMatchesFiniteDifferences) {
  const Camera cam = make_skewed_camera();
  Rng rng(33);
  const double eps = 1e-6;
  for (int i = 0; i < 30; ++i) {
    const Vec3 p{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    const ProjectionJacobian jac = project_vertex_jacobian(cam, p);
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 pp = p, pm = p;
      pp[axis] += eps;
      pm[axis] -= eps;
      const Vec2 up = project_vertex(cam, pp);
      const Vec2 um = project_vertex(cam, pm);
      EXPECT_NEAR(jac.du[axis], (up.x - um.x) / (2 * eps), 1e-5);
      EXPECT_NEAR(jac.dv[axis], (up.y - um.y) / (2 * eps), 1e-5);
    }
  }
}

TEST(Camera, LookatCameraGeometry) {
  const Camera cam = make_lookat_camera({2, 1, 2}, 128, 96, 50.0);
  EXPECT_NO_THROW(cam.validate());
  EXPECT_NEAR(norm(cam.center() - Vec3(2, 1, 2)), 0, 1e-12);
  // the origin projects to the principal point
  const Vec2 c = project_vertex(cam, {0, 0, 0});
  EXPECT_NEAR(c.x, 64.0, 1e-9);
  EXPECT_NEAR(c.y, 48.0, 1e-9);
  // focal length from the field of view
  EXPECT_NEAR(cam.K(0, 0), 0.5 * 128 / std::tan(0.5 * 50.0 * kPi / 180), 1e-9);
}

TEST(Camera, RingCamerasLookInward) {
  const auto cams = make_ring_cameras(6, 2.5, 64, 64, 45.0);
  ASSERT_EQ(cams.size(), 6u);
  for (const Camera& cam : cams) {
    EXPECT_NO_THROW(cam.validate());
    EXPECT_NEAR(norm(cam.center()), 2.5, 1e-9);
    const Vec2 c = project_vertex(cam, {0, 0, 0});
    EXPECT_NEAR(c.x, 32.0, 1e-7);
    EXPECT_NEAR(c.y, 32.0, 1e-7);
  }
}
