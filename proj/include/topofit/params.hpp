#pragma once

#include <vector>

#include "topofit/density.hpp"
#include "topofit/mesh.hpp"
#include "topofit/triplanes.hpp"

namespace topofit {

enum class ParamGroup { Vertices = 0, Planes = 1, Decoder = 2, Scale = 3 };
inline constexpr int kParamGroups = 4;
inline constexpr const char* kParamGroupNames[kParamGroups] = {"vertices", "planes", "decoder",
                                                               "scale"};

// The optimizable state: mesh vertices (topology fixed), feature planes,
// decoder weights, and the density sharpness.
struct ParamStore {
  TriangleMesh mesh;
  TriPlanes planes;
  MlpDecoder decoder;
  double scale = 1.0;

  ParamStore(TriangleMesh mesh_, TriPlanes planes_, MlpDecoder decoder_, double scale_)
      : mesh(std::move(mesh_)), planes(std::move(planes_)), decoder(std::move(decoder_)),
        scale(scale_) {
    check(scale > 0, "density scale must start positive");
  }

  DensityMapping mapping() const { return DensityMapping{scale, DensityMapping::Mode::PseudoSigned}; }
};

struct GradStore {
  std::vector<Vec3> vertices;
  PlaneGrads planes;
  MlpGrads decoder;
  double scale = 0;

  void resize_like(const ParamStore& p) {
    vertices.assign(static_cast<size_t>(p.mesh.num_vertices()), Vec3{});
    planes.resize_like(p.planes);
    decoder = p.decoder.make_grads();
    scale = 0;
  }
  void clear() {
    std::fill(vertices.begin(), vertices.end(), Vec3{});
    planes.clear();
    decoder.clear();
    scale = 0;
  }
  void add(const GradStore& o) {
    check(vertices.size() == o.vertices.size(), "vertex grad size mismatch");
    for (size_t i = 0; i < vertices.size(); ++i) vertices[i] += o.vertices[i];
    planes.add(o.planes);
    decoder.add(o.decoder);
    scale += o.scale;
  }
};

struct LearnableSet {
  std::array<bool, kParamGroups> on{false, false, false, false};
  bool& operator[](ParamGroup g) { return on[static_cast<int>(g)]; }
  bool operator[](ParamGroup g) const { return on[static_cast<int>(g)]; }
};

struct LrTable {
  double vertices = 3e-2;
  double planes = 2e-3;
  double decoder = 5e-4;
  double scale = 1e-3;

  double of(ParamGroup g) const {
    switch (g) {
      case ParamGroup::Vertices: return vertices;
      case ParamGroup::Planes: return planes;
      case ParamGroup::Decoder: return decoder;
      default: return scale;
    }
  }
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {

// Visits each group's parameters and gradients as flat double sequences.
// Vertex updates go through a staging buffer because the mesh owns them.
template <typename Fn>
void for_group_values(ParamStore& p, const GradStore& g, ParamGroup group, Fn&& fn) {
  switch (group) {
    case ParamGroup::Vertices: {
      std::vector<Vec3> verts = p.mesh.vertices();
      check(verts.size() == g.vertices.size(), "vertex grad size mismatch");
      for (size_t i = 0; i < verts.size(); ++i)
        for (int c = 0; c < 3; ++c) fn(verts[i][c], g.vertices[i][c]);
      p.mesh.set_vertices(verts);
      return;
    }
    case ParamGroup::Planes: {
      for (int pl = 0; pl < 3; ++pl) {
        auto& w = p.planes.plane(pl);
        const auto& gw = g.planes.data[pl];
        check(w.size() == gw.size(), "plane grad size mismatch");
        for (size_t i = 0; i < w.size(); ++i) fn(w[i], gw[i]);
      }
      return;
    }
    case ParamGroup::Decoder: {
      auto each = [&fn](std::vector<double>& w, const std::vector<double>& gw) {
        check(w.size() == gw.size(), "decoder grad size mismatch");
        for (size_t i = 0; i < w.size(); ++i) fn(w[i], gw[i]);
      };
      each(p.decoder.w0(), g.decoder.w0);
      each(p.decoder.b0(), g.decoder.b0);
      each(p.decoder.w1(), g.decoder.w1);
      each(p.decoder.b1(), g.decoder.b1);
      each(p.decoder.w2(), g.decoder.w2);
      each(p.decoder.b2(), g.decoder.b2);
      return;
    }
    case ParamGroup::Scale: {
      fn(p.scale, g.scale);
      return;
    }
  }
}

template <typename Fn>
void for_group_grads(const GradStore& g, ParamGroup group, Fn&& fn) {
  switch (group) {
    case ParamGroup::Vertices:
      for (const Vec3& v : g.vertices)
        for (int c = 0; c < 3; ++c) fn(v[c]);
      return;
    case ParamGroup::Planes:
      for (const auto& plane : g.planes.data)
        for (double v : plane) fn(v);
      return;
    case ParamGroup::Decoder:
      for (const auto* w : {&g.decoder.w0, &g.decoder.b0, &g.decoder.w1, &g.decoder.b1,
                            &g.decoder.w2, &g.decoder.b2})
        for (double v : *w) fn(v);
      return;
    case ParamGroup::Scale:
      fn(g.scale);
      return;
  }
}

inline size_t group_size(const ParamStore& p, ParamGroup group) {
  switch (group) {
    case ParamGroup::Vertices: return static_cast<size_t>(p.mesh.num_vertices()) * 3;
    case ParamGroup::Planes:
      return p.planes.plane(0).size() + p.planes.plane(1).size() + p.planes.plane(2).size();
    case ParamGroup::Decoder:
      return p.decoder.w0().size() + p.decoder.b0().size() + p.decoder.w1().size() +
             p.decoder.b1().size() + p.decoder.w2().size() + p.decoder.b2().size();
    default: return 1;
  }
}

}  // namespace detail

// First and second moment accumulators, one pair per group, plus per-group
// step counters so bias correction matches the number of applied updates.
struct AdamState {
  struct Group {
    std::vector<double> m, v;
    int64_t step = 0;
  };
  std::array<Group, kParamGroups> groups;

  void resize_like(const ParamStore& p) {
    for (int gi = 0; gi < kParamGroups; ++gi) {
      const size_t n = detail::group_size(p, static_cast<ParamGroup>(gi));
      groups[gi].m.assign(n, 0.0);
      groups[gi].v.assign(n, 0.0);
      groups[gi].step = 0;
    }
  }
};

struct AdamStepReport {
  std::array<bool, kParamGroups> applied{false, false, false, false};
  std::array<bool, kParamGroups> rejected{false, false, false, false};
};

// One Adam update over the selected groups. A group whose gradient contains
// a non-finite value is skipped (parameters, moments and step untouched).
// The density scale is projected back to scale > 0 after its update.
inline AdamStepReport adam_step(ParamStore& params, const GradStore& grads,
                                const LearnableSet& learnable, const LrTable& lrs,
                                AdamState& state, const AdamParams& ap = {}) {
  AdamStepReport report;
  for (int gi = 0; gi < kParamGroups; ++gi) {
    const ParamGroup group = static_cast<ParamGroup>(gi);
    if (!learnable[group]) continue;
    AdamState::Group& st = state.groups[gi];
    check(st.m.size() == detail::group_size(params, group),
          "adam state size mismatch for group ", kParamGroupNames[gi]);

    bool finite = true;
    detail::for_group_grads(grads, group, [&finite](double g) {
      if (!std::isfinite(g)) finite = false;
    });
    if (!finite) {
      warn(std::string("non-finite gradient in group ") + kParamGroupNames[gi] +
           "; skipping its update this step");
      report.rejected[gi] = true;
      continue;
    }

    ++st.step;
    const double bc1 = 1.0 - std::pow(ap.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(ap.beta2, static_cast<double>(st.step));
    const double lr = lrs.of(group);
    size_t i = 0;
    detail::for_group_values(params, grads, group, [&](double& w, double g) {
      st.m[i] = ap.beta1 * st.m[i] + (1.0 - ap.beta1) * g;
      st.v[i] = ap.beta2 * st.v[i] + (1.0 - ap.beta2) * g * g;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      w -= lr * mhat / (std::sqrt(vhat) + ap.eps);
      ++i;
    });
    if (group == ParamGroup::Scale && params.scale < 1e-6) {
      warn("density scale hit the positivity floor; clamping to 1e-6");
      params.scale = 1e-6;
    }
    report.applied[gi] = true;
  }
  return report;
}

}  // namespace topofit
