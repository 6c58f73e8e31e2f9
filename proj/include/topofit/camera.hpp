#pragma once

#include "topofit/core.hpp"

namespace topofit {

// Pinhole camera. R, t map world to camera coordinates; K maps camera
// coordinates to pixels. Pixel (i, j) covers [i, i+1) x [j, j+1), so integer
// pixel centers sit at (i + 0.5, j + 0.5).
struct Camera {
  Mat3 K;
  Mat3 R;
  Vec3 t;
  int width = 0;
  int height = 0;

  void validate() const {
    check(width > 0 && height > 0, "camera has empty image plane");
    const Mat3 rtr = R.transposed() * R;
    const Mat3 eye = Mat3::identity();
    for (int i = 0; i < 9; ++i)
      check(std::abs(rtr.m[i] - eye.m[i]) < 1e-9, "camera rotation is not orthonormal");
    check(std::abs(R.det() - 1.0) < 1e-9, "camera rotation must have determinant +1");
    check(K(1, 0) == 0 && K(2, 0) == 0 && K(2, 1) == 0, "intrinsics must be upper-triangular");
    check(K(0, 0) > 0 && K(1, 1) > 0 && K(2, 2) > 0, "focal entries must be positive");
  }

  Vec3 center() const { return R.transposed() * (-t); }

  // Camera-space direction for sub-pixel coordinates (u, v), before rotation.
  Vec3 backproject(const Vec2& pixel) const {
    const double w = K(2, 2);
    const double y = (pixel.y / w - K(1, 2) / w) / (K(1, 1) / w);
    const double x = (pixel.x / w - K(0, 2) / w - K(0, 1) / w * y) / (K(0, 0) / w);
    return {x, y, 1.0};
  }
};

inline Ray3 generate_ray(const Camera& cam, const Vec2& pixel) {
  check(pixel.x >= 0 && pixel.x <= cam.width && pixel.y >= 0 && pixel.y <= cam.height,
        "pixel (", pixel.x, ",", pixel.y, ") outside image bounds");
  const Vec3 dir_cam = cam.backproject(pixel);
  return {cam.center(), normalized(cam.R.transposed() * dir_cam)};
}

inline Vec2 project_vertex(const Camera& cam, const Vec3& v) {
  const Vec3 q = cam.R * v + cam.t;
  check(q.z > 0, "point is behind the camera (depth ", q.z, ")");
  const Vec3 h = cam.K * q;
  return {h.x / h.z, h.y / h.z};
}

// Rows are d(pixel.x)/d(v) and d(pixel.y)/d(v).
struct ProjectionJacobian {
  Vec3 du;
  Vec3 dv;
};

inline ProjectionJacobian project_vertex_jacobian(const Camera& cam, const Vec3& v) {
  const Vec3 q = cam.R * v + cam.t;
  check(q.z > 0, "point is behind the camera (depth ", q.z, ")");
  const Vec3 h = cam.K * q;
  const double iz = 1.0 / h.z;
  // d(h)/d(q) = K, d(q)/d(v) = R, pixel = (h.x/h.z, h.y/h.z), h.z = q.z.
  Vec3 du_q{cam.K(0, 0) * iz, cam.K(0, 1) * iz, cam.K(0, 2) * iz - h.x * iz * iz * cam.K(2, 2)};
  Vec3 dv_q{0.0, cam.K(1, 1) * iz, cam.K(1, 2) * iz - h.y * iz * iz * cam.K(2, 2)};
  ProjectionJacobian j;
  for (int i = 0; i < 3; ++i) {
    j.du[i] = du_q.x * cam.R(0, i) + du_q.y * cam.R(1, i) + du_q.z * cam.R(2, i);
    j.dv[i] = dv_q.x * cam.R(0, i) + dv_q.y * cam.R(1, i) + dv_q.z * cam.R(2, i);
  }
  return j;
}

}  // namespace topofit
