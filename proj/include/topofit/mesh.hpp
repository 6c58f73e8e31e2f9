#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "topofit/core.hpp"

namespace topofit {

inline constexpr double kDegenerateAreaEps = 1e-12;   // scene units^2
inline constexpr double kZeroDistanceEps = 1e-9;      // below this the distance gradient is a subgradient

enum class Region { FaceInterior, Edge, Vertex };

struct ClosestPointResult {
  Vec3 point;              // nearest point on the triangle / mesh
  int face_id = -1;
  Vec3 barycentric;        // weights for the face's three vertices, zeros exact on clamped regions
  Region region = Region::FaceInterior;
  double distance = 0;
  double signed_distance = 0;
};

// Fixed-topology triangle mesh. Faces are set once at construction; only
// vertex positions may change afterwards. Adjacency is built eagerly and
// refers to indices, so it stays valid across vertex updates.
class TriangleMesh {
 public:
  TriangleMesh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> faces)
      : vertices_(std::move(vertices)), faces_(std::move(faces)) {
    check(!vertices_.empty(), "mesh has no vertices");
    check(!faces_.empty(), "mesh has no faces");
    const int nv = static_cast<int>(vertices_.size());
    neighbors_.resize(vertices_.size());
    vertex_faces_.resize(vertices_.size());
    for (size_t f = 0; f < faces_.size(); ++f) {
      const auto& tri = faces_[f];
      for (int k = 0; k < 3; ++k) {
        check(tri[k] >= 0 && tri[k] < nv, "face ", f, " references vertex ", tri[k],
              " outside [0,", nv, ")");
      }
      check(tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2],
            "face ", f, " has repeated vertex indices");
      for (int k = 0; k < 3; ++k) {
        vertex_faces_[tri[k]].push_back(static_cast<int>(f));
        add_neighbor(tri[k], tri[(k + 1) % 3]);
        add_neighbor(tri[k], tri[(k + 2) % 3]);
        int a = tri[k], b = tri[(k + 1) % 3];
        edge_faces_[edge_key(a, b)].push_back(static_cast<int>(f));
      }
    }
    for (auto& n : neighbors_) std::sort(n.begin(), n.end());
    for (auto& [key, fs] : edge_faces_) {
      std::sort(fs.begin(), fs.end());
      fs.erase(std::unique(fs.begin(), fs.end()), fs.end());
    }
  }

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_faces() const { return static_cast<int>(faces_.size()); }
  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& faces() const { return faces_; }
  const std::vector<int>& neighbors(int v) const { return neighbors_[v]; }
  const std::vector<int>& incident_faces(int v) const { return vertex_faces_[v]; }

  const Vec3& vertex(int i) const { return vertices_[i]; }
  std::array<Vec3, 3> face_points(int f) const {
    const auto& t = faces_[f];
    return {vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]};
  }

  // Faces incident to the undirected edge (a, b); empty if no such edge.
  const std::vector<int>& edge_incident_faces(int a, int b) const {
    static const std::vector<int> kNone;
    auto it = edge_faces_.find(edge_key(a, b));
    return it == edge_faces_.end() ? kNone : it->second;
  }

  uint64_t revision() const { return revision_; }

  void set_vertices(std::vector<Vec3> v) {
    check(v.size() == vertices_.size(), "vertex count changed: ", v.size(), " vs ",
          vertices_.size());
    vertices_ = std::move(v);
    ++revision_;
  }
  void set_vertex(int i, const Vec3& p) {
    vertices_[i] = p;
    ++revision_;
  }

  Aabb bounds() const {
    Aabb b;
    for (const auto& v : vertices_) b.expand(v);
    return b;
  }

  // Throws if any face has area at or below the degeneracy threshold.
  void validate_geometry() const {
    for (int f = 0; f < num_faces(); ++f) {
      auto [a, b, c] = face_points(f);
      double area2 = norm(cross(b - a, c - a));
      check(area2 > 2.0 * kDegenerateAreaEps, "face ", f, " is degenerate (area ",
            0.5 * area2, ")");
    }
  }

 private:
  static uint64_t edge_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<uint64_t>(a) << 32) | static_cast<uint32_t>(b);
  }
  void add_neighbor(int a, int b) {
    auto& n = neighbors_[a];
    if (std::find(n.begin(), n.end(), b) == n.end()) n.push_back(b);
  }

  std::vector<Vec3> vertices_;
  const std::vector<std::array<int, 3>> faces_;
  std::vector<std::vector<int>> neighbors_;
  std::vector<std::vector<int>> vertex_faces_;
  std::unordered_map<uint64_t, std::vector<int>> edge_faces_;
  uint64_t revision_ = 0;
};

namespace detail {

// Voronoi-region walk (Ericson). Barycentric zeros are exact on clamped
// regions so the region's support vertices can be recovered from them.
inline ClosestPointResult closest_point_unchecked(const Vec3& p, const Vec3& a, const Vec3& b,
                                                  const Vec3& c) {
  ClosestPointResult r;
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) {
    r.point = a;
    r.barycentric = {1, 0, 0};
    r.region = Region::Vertex;
  } else {
    const Vec3 bp = p - b;
    const double d3 = dot(ab, bp), d4 = dot(ac, bp);
    if (d3 >= 0 && d4 <= d3) {
      r.point = b;
      r.barycentric = {0, 1, 0};
      r.region = Region::Vertex;
    } else {
      const double vc = d1 * d4 - d3 * d2;
      if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        double v = d1 / (d1 - d3);
        r.point = a + ab * v;
        r.barycentric = {1 - v, v, 0};
        r.region = Region::Edge;
      } else {
        const Vec3 cp = p - c;
        const double d5 = dot(ab, cp), d6 = dot(ac, cp);
        if (d6 >= 0 && d5 <= d6) {
          r.point = c;
          r.barycentric = {0, 0, 1};
          r.region = Region::Vertex;
        } else {
          const double vb = d5 * d2 - d1 * d6;
          if (vb <= 0 && d2 >= 0 && d6 <= 0) {
            double w = d2 / (d2 - d6);
            r.point = a + ac * w;
            r.barycentric = {1 - w, 0, w};
            r.region = Region::Edge;
          } else {
            const double va = d3 * d6 - d5 * d4;
            if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
              double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
              r.point = b + (c - b) * w;
              r.barycentric = {0, 1 - w, w};
              r.region = Region::Edge;
            } else {
              const double denom = 1.0 / (va + vb + vc);
              double v = vb * denom, w = vc * denom;
              r.point = a + ab * v + ac * w;
              r.barycentric = {1 - v - w, v, w};
              r.region = Region::FaceInterior;
            }
          }
        }
      }
    }
  }
  r.distance = norm(p - r.point);
  r.signed_distance = r.distance;
  return r;
}

}  // namespace detail

inline ClosestPointResult closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                                    const Vec3& c) {
  const double area = 0.5 * norm(cross(b - a, c - a));
  check(area > kDegenerateAreaEps, "degenerate triangle (area ", area, ")");
  return detail::closest_point_unchecked(p, a, b, c);
}

inline Vec3 face_normal(const TriangleMesh& mesh, int face_id) {
  auto [a, b, c] = mesh.face_points(face_id);
  const Vec3 n = cross(b - a, c - a);
  const double len = norm(n);
  check(0.5 * len > kDegenerateAreaEps, "degenerate face ", face_id, " (area ", 0.5 * len, ")");
  return n / len;
}

namespace detail {

inline double wedge_angle(const Vec3& at, const Vec3& p1, const Vec3& p2) {
  const Vec3 e1 = p1 - at, e2 = p2 - at;
  const double d = dot(normalized(e1), normalized(e2));
  return std::acos(std::clamp(d, -1.0, 1.0));
}

}  // namespace detail

// Normal at a closest-point location. Face interiors take the face normal;
// edges average the incident face normals; vertices use angle-weighted
// averaging so the sign field stays consistent on open surfaces.
inline Vec3 pseudo_normal(const TriangleMesh& mesh, const ClosestPointResult& closest) {
  const Vec3 fn = face_normal(mesh, closest.face_id);
  if (closest.region == Region::FaceInterior) return fn;

  const auto& tri = mesh.faces()[closest.face_id];
  Vec3 sum{0, 0, 0};
  if (closest.region == Region::Edge) {
    int e0 = -1, e1 = -1;
    for (int k = 0; k < 3; ++k) {
      if (closest.barycentric[k] != 0.0) (e0 < 0 ? e0 : e1) = tri[k];
    }
    for (int f : mesh.edge_incident_faces(e0, e1)) sum += face_normal(mesh, f);
  } else {
    int vid = -1;
    for (int k = 0; k < 3; ++k)
      if (closest.barycentric[k] == 1.0) vid = tri[k];
    for (int f : mesh.incident_faces(vid)) {
      const auto& ft = mesh.faces()[f];
      std::array<Vec3, 3> fp = mesh.face_points(f);
      int at = (ft[0] == vid) ? 0 : (ft[1] == vid ? 1 : 2);
      double angle = detail::wedge_angle(fp[at], fp[(at + 1) % 3], fp[(at + 2) % 3]);
      sum += face_normal(mesh, f) * angle;
    }
  }
  const double len = norm(sum);
  if (len < 1e-12) return fn;  // folded configuration, fall back to the query face
  return sum / len;
}

struct DistanceJacobian {
  Vec3 d_point;                    // d distance / d query point
  std::array<Vec3, 3> d_vertices;  // d distance / d triangle vertices a, b, c
  bool zero_distance = false;      // subgradient chosen as zero at d ~ 0
};

// Derivative of the unsigned point-triangle distance. The Voronoi region is
// treated as locally constant; clamped barycentric weights being exact zeros
// makes the vertex distribution correct for edge and vertex regions too.
inline DistanceJacobian closest_point_jacobians(const Vec3& p, const ClosestPointResult& result) {
  DistanceJacobian j;
  if (result.distance <= kZeroDistanceEps) {
    j.zero_distance = true;
    return j;
  }
  const Vec3 u = (p - result.point) / result.distance;
  j.d_point = u;
  for (int k = 0; k < 3; ++k) j.d_vertices[k] = u * (-result.barycentric[k]);
  return j;
}

// Uniform umbrella Laplacian: delta_i = v_i - mean of neighbors.
inline std::vector<Vec3> laplacian_deltas(const TriangleMesh& mesh) {
  std::vector<Vec3> deltas(mesh.num_vertices());
  int isolated = 0;
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const auto& nbrs = mesh.neighbors(i);
    if (nbrs.empty()) {
      deltas[i] = Vec3{0, 0, 0};
      ++isolated;
      continue;
    }
    Vec3 mean{0, 0, 0};
    for (int j : nbrs) mean += mesh.vertex(j);
    deltas[i] = mesh.vertex(i) - mean / static_cast<double>(nbrs.size());
  }
  if (isolated > 0) warn(std::to_string(isolated) + " isolated vertices; their deltas are zero");
  return deltas;
}

}  // namespace topofit
