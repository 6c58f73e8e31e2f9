#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <vector>

#include "topofit/core.hpp"
#include "topofit/mesh.hpp"

namespace topofit {

namespace detail {

// Separating-axis test between a triangle and an axis-aligned box.
// Touching counts as intersecting.
inline bool triangle_box_overlap(const Vec3& a, const Vec3& b, const Vec3& c, const Aabb& box) {
  const Vec3 center = box.center();
  const Vec3 half = box.extent() * 0.5;
  const Vec3 v0 = a - center, v1 = b - center, v2 = c - center;
  const Vec3 e0 = v1 - v0, e1 = v2 - v1, e2 = v0 - v2;

  auto axis_separates = [&](const Vec3& axis) {
    const double p0 = dot(v0, axis), p1 = dot(v1, axis), p2 = dot(v2, axis);
    const double r = half.x * std::abs(axis.x) + half.y * std::abs(axis.y) + half.z * std::abs(axis.z);
    const double lo = std::min({p0, p1, p2}), hi = std::max({p0, p1, p2});
    return lo > r || hi < -r;
  };

  // Box face normals.
  for (int i = 0; i < 3; ++i) {
    const double lo = std::min({v0[i], v1[i], v2[i]});
    const double hi = std::max({v0[i], v1[i], v2[i]});
    if (lo > half[i] || hi < -half[i]) return false;
  }
  // Triangle normal.
  if (axis_separates(cross(e0, e1))) return false;
  // Edge cross products.
  const Vec3 axes[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (const Vec3& e : {e0, e1, e2})
    for (const Vec3& u : axes)
      if (axis_separates(cross(e, u))) return false;
  return true;
}

}  // namespace detail

struct OctreeParams {
  int max_depth = 10;
  int max_leaf_triangles = 16;
  double margin = 1e-4;  // fraction of the bbox diagonal added around the root
};

// Loose-fitting octree over mesh triangles. Triangles are referenced from
// every leaf whose box they touch, so leaves can share triangle ids.
class Octree {
 public:
  struct Node {
    Aabb box;
    std::array<int32_t, 8> child{-1, -1, -1, -1, -1, -1, -1, -1};
    int32_t tri_begin = 0;
    int32_t tri_count = 0;
    bool leaf = false;
  };

  Octree() = default;

  void build(const TriangleMesh& mesh, const OctreeParams& params = {}) {
    check(params.max_depth >= 0, "octree max_depth must be non-negative");
    check(params.max_leaf_triangles >= 1, "octree max_leaf_triangles must be >= 1");
    mesh.validate_geometry();
    nodes_.clear();
    leaf_tris_.clear();
    revision_ = mesh.revision();

    Aabb root_box = mesh.bounds();
    root_box = root_box.inflated(params.margin * root_box.diagonal() + 1e-12);

    std::vector<int> all(static_cast<size_t>(mesh.num_faces()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);

    nodes_.push_back(Node{});
    nodes_[0].box = root_box;
    build_node(mesh, 0, all, 0, params);
  }

  bool built() const { return !nodes_.empty(); }
  uint64_t revision() const { return revision_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  void ensure_fresh(const TriangleMesh& mesh) const {
    check(built(), "octree queried before build");
    check(revision_ == mesh.revision(),
          "octree is stale: built at mesh revision ", revision_, ", mesh is at ", mesh.revision());
  }

  // Closest point on the mesh to p, or nothing if no triangle lies strictly
  // closer than upper_bound. Ties cannot occur: a candidate replaces the
  // best only on strict distance improvement, and leaves are visited in a
  // deterministic near-to-far order.
  std::optional<ClosestPointResult> nearest_triangle(
      const TriangleMesh& mesh, const Vec3& p,
      double upper_bound = std::numeric_limits<double>::infinity()) const {
    ensure_fresh(mesh);
    double best_d2 = upper_bound * upper_bound;
    ClosestPointResult best;
    best.face_id = -1;
    nearest_walk(mesh, 0, p, best_d2, best);
    if (best.face_id < 0) return std::nullopt;
    return best;
  }

  // Parametric [t0, t1] spans along the ray that touch occupied leaves once
  // their boxes are dilated by `band`. Intervals are clipped to t >= t_min,
  // sorted, and merged when closer than merge_gap.
  std::vector<std::pair<double, double>> ray_active_intervals(
      const Ray3& ray, double band, double merge_gap = 0.0, double t_min = 0.0) const {
    check(built(), "octree queried before build");
    check(band >= 0, "band must be non-negative");
    std::vector<std::pair<double, double>> spans;
    interval_walk(0, ray, band, t_min, spans);
    if (spans.empty()) return spans;
    std::sort(spans.begin(), spans.end());
    std::vector<std::pair<double, double>> merged;
    merged.push_back(spans[0]);
    for (size_t i = 1; i < spans.size(); ++i) {
      if (spans[i].first <= merged.back().second + merge_gap)
        merged.back().second = std::max(merged.back().second, spans[i].second);
      else
        merged.push_back(spans[i]);
    }
    return merged;
  }

 private:
  void build_node(const TriangleMesh& mesh, int node_id, const std::vector<int>& tris,
                  int depth, const OctreeParams& params) {
    Node& node = nodes_[node_id];
    if (static_cast<int>(tris.size()) <= params.max_leaf_triangles || depth >= params.max_depth) {
      node.leaf = true;
      node.tri_begin = static_cast<int32_t>(leaf_tris_.size());
      node.tri_count = static_cast<int32_t>(tris.size());
      leaf_tris_.insert(leaf_tris_.end(), tris.begin(), tris.end());
      return;
    }
    const Vec3 mid = node.box.center();
    const Aabb box = node.box;
    const auto octant_box = [&](int oct) {
      Aabb sub;
      sub.lo.x = (oct & 1) ? mid.x : box.lo.x;
      sub.hi.x = (oct & 1) ? box.hi.x : mid.x;
      sub.lo.y = (oct & 2) ? mid.y : box.lo.y;
      sub.hi.y = (oct & 2) ? box.hi.y : mid.y;
      sub.lo.z = (oct & 4) ? mid.z : box.lo.z;
      sub.hi.z = (oct & 4) ? box.hi.z : mid.z;
      return sub;
    };
    bool split_helped = false;
    std::array<std::vector<int>, 8> buckets;
    for (int oct = 0; oct < 8; ++oct) {
      const Aabb sub = octant_box(oct);
      for (int tid : tris) {
        const auto [a, b, c] = mesh.face_points(tid);
        if (detail::triangle_box_overlap(a, b, c, sub)) buckets[oct].push_back(tid);
      }
      if (buckets[oct].size() < tris.size()) split_helped = true;
    }
    if (!split_helped) {  // all children would replicate the parent
      Node& self = nodes_[node_id];
      self.leaf = true;
      self.tri_begin = static_cast<int32_t>(leaf_tris_.size());
      self.tri_count = static_cast<int32_t>(tris.size());
      leaf_tris_.insert(leaf_tris_.end(), tris.begin(), tris.end());
      return;
    }
    for (int oct = 0; oct < 8; ++oct) {
      if (buckets[oct].empty()) continue;
      // shrink the child to the octant clipped against its triangles' tight
      // bounds; this prunes empty space without losing coverage (a triangle's
      // part inside the octant stays inside the clipped box)
      const Aabb sub = octant_box(oct);
      Aabb tight;
      for (int tid : buckets[oct]) {
        const auto [a, b, c] = mesh.face_points(tid);
        tight.expand(a);
        tight.expand(b);
        tight.expand(c);
      }
      Aabb child_box{cwise_max(sub.lo, tight.lo), cwise_min(sub.hi, tight.hi)};
      const int child_id = static_cast<int>(nodes_.size());
      nodes_.push_back(Node{});
      nodes_.back().box = child_box;
      nodes_[node_id].child[oct] = child_id;
      build_node(mesh, child_id, buckets[oct], depth + 1, params);
    }
  }

  void nearest_walk(const TriangleMesh& mesh, int node_id, const Vec3& p,
                    double& best_d2, ClosestPointResult& best) const {
    const Node& node = nodes_[node_id];
    if (node.leaf) {
      for (int32_t i = 0; i < node.tri_count; ++i) {
        const int tid = leaf_tris_[node.tri_begin + i];
        const auto [a, b, c] = mesh.face_points(tid);
        ClosestPointResult r = detail::closest_point_unchecked(p, a, b, c);
        const double d2 = r.distance * r.distance;
        if (d2 < best_d2) {
          best_d2 = d2;
          r.face_id = tid;
          best = r;
        }
      }
      return;
    }
    struct Entry {
      double d2;
      int oct;
      int id;
    };
    std::array<Entry, 8> order;
    int n = 0;
    for (int oct = 0; oct < 8; ++oct) {
      const int cid = node.child[oct];
      if (cid < 0) continue;
      order[n++] = {nodes_[cid].box.distance_sq(p), oct, cid};
    }
    std::sort(order.begin(), order.begin() + n,
              [](const Entry& lhs, const Entry& rhs) {
                return lhs.d2 != rhs.d2 ? lhs.d2 < rhs.d2 : lhs.oct < rhs.oct;
              });
    for (int i = 0; i < n; ++i) {
      if (order[i].d2 >= best_d2) continue;
      nearest_walk(mesh, order[i].id, p, best_d2, best);
    }
  }

  static bool ray_box(const Ray3& ray, const Aabb& box, double band, double t_min,
                      double& t0, double& t1) {
    t0 = t_min;
    t1 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
      const double lo = box.lo[i] - band, hi = box.hi[i] + band;
      const double o = ray.origin[i], d = ray.dir[i];
      if (d == 0.0) {
        if (o < lo || o > hi) return false;
        continue;
      }
      double ta = (lo - o) / d, tb = (hi - o) / d;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    return t0 <= t1;
  }

  void interval_walk(int node_id, const Ray3& ray, double band, double t_min,
                     std::vector<std::pair<double, double>>& spans) const {
    const Node& node = nodes_[node_id];
    double t0, t1;
    if (!ray_box(ray, node.box, band, t_min, t0, t1)) return;
    if (node.leaf) {
      if (node.tri_count > 0 && t1 > t0) spans.emplace_back(t0, t1);
      return;
    }
    for (int oct = 0; oct < 8; ++oct)
      if (node.child[oct] >= 0) interval_walk(node.child[oct], ray, band, t_min, spans);
  }

  std::vector<Node> nodes_;
  std::vector<int> leaf_tris_;
  uint64_t revision_ = 0;
};

// Nearest-point query with the sign convention of the angle-weighted pseudo
// normal: positive outside, negative inside, exact zero treated as outside.
inline ClosestPointResult signed_distance(const TriangleMesh& mesh, const Octree& octree,
                                          const Vec3& p) {
  auto r = octree.nearest_triangle(mesh, p);
  check(r.has_value(), "nearest query on empty octree");
  const Vec3 n = pseudo_normal(mesh, *r);
  const double side = dot(p - r->point, n);
  r->signed_distance = (side < 0) ? -r->distance : r->distance;
  return *r;
}

}  // namespace topofit
