#pragma once

#include <span>
#include <vector>

#include "topofit/core.hpp"

namespace topofit {

// Three axis-aligned feature planes (xy, xz, yz). Each plane stores
// resolution x resolution nodes; node (0,0) maps to bounds.lo and node
// (res-1, res-1) to bounds.hi along the plane's two axes. Queries outside the
// bounds are clamped and flagged.
class TriPlanes {
 public:
  TriPlanes() = default;

  TriPlanes(int resolution, std::array<int, 3> dims, const Aabb& bounds)
      : resolution_(resolution), dims_(dims), bounds_(bounds) {
    check(resolution >= 2, "plane resolution must be >= 2, got ", resolution);
    for (int d : dims) check(d >= 1, "plane feature dim must be >= 1");
    check(!bounds.empty() && bounds.diagonal() > 0, "plane bounds must be non-empty");
    for (int p = 0; p < 3; ++p)
      data_[p].assign(static_cast<size_t>(resolution) * resolution * dims_[p], 0.0);
  }

  void init_uniform(Rng& rng, double amplitude) {
    for (auto& plane : data_)
      for (double& v : plane) v = rng.uniform(-amplitude, amplitude);
  }

  int resolution() const { return resolution_; }
  const std::array<int, 3>& dims() const { return dims_; }
  int feature_dim() const { return dims_[0] + dims_[1] + dims_[2]; }
  const Aabb& bounds() const { return bounds_; }
  std::vector<double>& plane(int p) { return data_[p]; }
  const std::vector<double>& plane(int p) const { return data_[p]; }

  size_t node_offset(int p, int i, int j) const {
    return (static_cast<size_t>(i) * resolution_ + j) * dims_[p];
  }

  // Maps the plane bounds onto [-1, 1]^3 (positions outside fall outside).
  Vec3 normalized_position(const Vec3& pos) const {
    Vec3 out;
    for (int c = 0; c < 3; ++c)
      out[c] = 2.0 * (pos[c] - bounds_.lo[c]) / (bounds_.hi[c] - bounds_.lo[c]) - 1.0;
    return out;
  }

  // World axes spanned by plane p: xy -> (0,1), xz -> (0,2), yz -> (1,2).
  static std::pair<int, int> plane_axes(int p) {
    switch (p) {
      case 0: return {0, 1};
      case 1: return {0, 2};
      default: return {1, 2};
    }
  }

  struct Lookup {
    int i0, j0;
    double fu, fv;          // fractional position inside the cell
    double du, dv;          // d(u)/d(world coord), d(v)/d(world coord)
    bool clamped_u, clamped_v;  // per-axis: interpolation is flat past the clamp
    bool clamped() const { return clamped_u || clamped_v; }
  };

  Lookup lookup(int p, const Vec3& pos) const {
    const auto [au, av] = plane_axes(p);
    Lookup lk;
    double uv[2];
    bool clamped[2] = {false, false};
    const double axes_pos[2] = {pos[au], pos[av]};
    const int axes_idx[2] = {au, av};
    double scale[2];
    for (int k = 0; k < 2; ++k) {
      const double lo = bounds_.lo[axes_idx[k]], hi = bounds_.hi[axes_idx[k]];
      check(hi > lo, "plane bounds degenerate along axis ", axes_idx[k]);
      scale[k] = (resolution_ - 1) / (hi - lo);
      double u = (axes_pos[k] - lo) * scale[k];
      if (u < 0) { u = 0; clamped[k] = true; }
      if (u > resolution_ - 1) { u = resolution_ - 1; clamped[k] = true; }
      uv[k] = u;
    }
    lk.clamped_u = clamped[0];
    lk.clamped_v = clamped[1];
    lk.i0 = std::min(static_cast<int>(uv[0]), resolution_ - 2);
    lk.j0 = std::min(static_cast<int>(uv[1]), resolution_ - 2);
    lk.fu = uv[0] - lk.i0;
    lk.fv = uv[1] - lk.j0;
    lk.du = scale[0];
    lk.dv = scale[1];
    return lk;
  }

  // Bilinear feature at pos, planes concatenated in order xy, xz, yz.
  // out.size() must equal feature_dim(). Returns true when pos was inside
  // the bounds on all planes.
  bool sample(const Vec3& pos, std::span<double> out) const {
    check(static_cast<int>(out.size()) == feature_dim(),
          "feature buffer size ", out.size(), " != ", feature_dim());
    bool inside = true;
    size_t off = 0;
    for (int p = 0; p < 3; ++p) {
      const Lookup lk = lookup(p, pos);
      inside = inside && !lk.clamped();
      const double w00 = (1 - lk.fu) * (1 - lk.fv), w01 = (1 - lk.fu) * lk.fv;
      const double w10 = lk.fu * (1 - lk.fv), w11 = lk.fu * lk.fv;
      const double* n00 = &data_[p][node_offset(p, lk.i0, lk.j0)];
      const double* n01 = &data_[p][node_offset(p, lk.i0, lk.j0 + 1)];
      const double* n10 = &data_[p][node_offset(p, lk.i0 + 1, lk.j0)];
      const double* n11 = &data_[p][node_offset(p, lk.i0 + 1, lk.j0 + 1)];
      for (int c = 0; c < dims_[p]; ++c)
        out[off + c] = w00 * n00[c] + w01 * n01[c] + w10 * n10[c] + w11 * n11[c];
      off += dims_[p];
    }
    return inside;
  }

 private:
  int resolution_ = 0;
  std::array<int, 3> dims_{0, 0, 0};
  Aabb bounds_;
  std::array<std::vector<double>, 3> data_;
};

struct PlaneGrads {
  std::array<std::vector<double>, 3> data;

  void resize_like(const TriPlanes& t) {
    for (int p = 0; p < 3; ++p) data[p].assign(t.plane(p).size(), 0.0);
  }
  void clear() {
    for (auto& plane : data) std::fill(plane.begin(), plane.end(), 0.0);
  }
  void add(const PlaneGrads& o) {
    for (int p = 0; p < 3; ++p) {
      check(data[p].size() == o.data[p].size(), "plane grad size mismatch");
      for (size_t i = 0; i < data[p].size(); ++i) data[p][i] += o.data[p][i];
    }
  }
};

// Scatters upstream feature gradients back to the plane nodes. When d_pos is
// given, also accumulates the gradient with respect to the query position
// (zero along clamped axes).
inline void sample_backward(const TriPlanes& t, const Vec3& pos, std::span<const double> upstream,
                            PlaneGrads& grads, Vec3* d_pos = nullptr) {
  check(static_cast<int>(upstream.size()) == t.feature_dim(), "upstream size mismatch");
  size_t off = 0;
  for (int p = 0; p < 3; ++p) {
    const auto lk = t.lookup(p, pos);
    const auto [au, av] = TriPlanes::plane_axes(p);
    const double w00 = (1 - lk.fu) * (1 - lk.fv), w01 = (1 - lk.fu) * lk.fv;
    const double w10 = lk.fu * (1 - lk.fv), w11 = lk.fu * lk.fv;
    double* g00 = &grads.data[p][t.node_offset(p, lk.i0, lk.j0)];
    double* g01 = &grads.data[p][t.node_offset(p, lk.i0, lk.j0 + 1)];
    double* g10 = &grads.data[p][t.node_offset(p, lk.i0 + 1, lk.j0)];
    double* g11 = &grads.data[p][t.node_offset(p, lk.i0 + 1, lk.j0 + 1)];
    const int dim = t.dims()[p];
    for (int c = 0; c < dim; ++c) {
      const double g = upstream[off + c];
      g00[c] += g * w00;
      g01[c] += g * w01;
      g10[c] += g * w10;
      g11[c] += g * w11;
    }
    if (d_pos && (!lk.clamped_u || !lk.clamped_v)) {
      const std::vector<double>& plane = t.plane(p);
      const double* n00 = &plane[t.node_offset(p, lk.i0, lk.j0)];
      const double* n01 = &plane[t.node_offset(p, lk.i0, lk.j0 + 1)];
      const double* n10 = &plane[t.node_offset(p, lk.i0 + 1, lk.j0)];
      const double* n11 = &plane[t.node_offset(p, lk.i0 + 1, lk.j0 + 1)];
      double su = 0, sv = 0;
      for (int c = 0; c < dim; ++c) {
        const double g = upstream[off + c];
        su += g * ((1 - lk.fv) * (n10[c] - n00[c]) + lk.fv * (n11[c] - n01[c]));
        sv += g * ((1 - lk.fu) * (n01[c] - n00[c]) + lk.fu * (n11[c] - n10[c]));
      }
      if (!lk.clamped_u) (*d_pos)[au] += su * lk.du;
      if (!lk.clamped_v) (*d_pos)[av] += sv * lk.dv;
    }
    off += t.dims()[p];
  }
}

// ---------------------------------------------------------------------------
// Sinusoidal encoding of a position given in normalized coordinates
// (TriPlanes::normalized_position maps the plane bounds to [-1, 1]^3).
// Layout per component c:
// [c, sin(2^0 pi c), cos(2^0 pi c), ..., sin(2^{L-1} pi c), cos(2^{L-1} pi c)].
struct PositionalEncoding {
  int bands = 4;

  int dim() const { return 3 * (2 * bands + 1); }

  void encode(const Vec3& v, std::span<double> out) const {
    check(static_cast<int>(out.size()) == dim(), "encoding buffer size mismatch");
    int k = 0;
    for (int c = 0; c < 3; ++c) {
      out[k++] = v[c];
      double f = kPi;
      for (int b = 0; b < bands; ++b) {
        out[k++] = std::sin(f * v[c]);
        out[k++] = std::cos(f * v[c]);
        f *= 2.0;
      }
    }
  }
};

// ---------------------------------------------------------------------------
// 3-layer perceptron: two ReLU hidden layers, logistic output in (0,1)^3.

struct MlpGrads {
  std::vector<double> w0, b0, w1, b1, w2, b2;

  void clear() {
    auto z = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    z(w0); z(b0); z(w1); z(b1); z(w2); z(b2);
  }
  void add(const MlpGrads& o) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
      check(a.size() == b.size(), "mlp grad size mismatch");
      for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    acc(w0, o.w0); acc(b0, o.b0); acc(w1, o.w1); acc(b1, o.b1); acc(w2, o.w2); acc(b2, o.b2);
  }
};

class MlpDecoder {
 public:
  MlpDecoder() = default;

  MlpDecoder(int in_dim, int hidden, int out_dim)
      : in_dim_(in_dim), hidden_(hidden), out_dim_(out_dim) {
    check(in_dim >= 1 && hidden >= 1 && out_dim >= 1, "mlp dims must be positive");
    w0_.assign(static_cast<size_t>(hidden) * in_dim, 0.0);
    b0_.assign(hidden, 0.0);
    w1_.assign(static_cast<size_t>(hidden) * hidden, 0.0);
    b1_.assign(hidden, 0.0);
    w2_.assign(static_cast<size_t>(out_dim) * hidden, 0.0);
    b2_.assign(out_dim, 0.0);
  }

  void init(Rng& rng) {
    auto fill = [&rng](std::vector<double>& w, int fan_in) {
      const double a = std::sqrt(1.0 / fan_in);
      for (double& v : w) v = rng.uniform(-a, a);
    };
    fill(w0_, in_dim_);
    fill(b0_, in_dim_);
    fill(w1_, hidden_);
    fill(b1_, hidden_);
    fill(w2_, hidden_);
    fill(b2_, hidden_);
  }

  int in_dim() const { return in_dim_; }
  int hidden_dim() const { return hidden_; }
  int out_dim() const { return out_dim_; }

  std::vector<double>& w0() { return w0_; }
  std::vector<double>& b0() { return b0_; }
  std::vector<double>& w1() { return w1_; }
  std::vector<double>& b1() { return b1_; }
  std::vector<double>& w2() { return w2_; }
  std::vector<double>& b2() { return b2_; }
  const std::vector<double>& w0() const { return w0_; }
  const std::vector<double>& b0() const { return b0_; }
  const std::vector<double>& w1() const { return w1_; }
  const std::vector<double>& b1() const { return b1_; }
  const std::vector<double>& w2() const { return w2_; }
  const std::vector<double>& b2() const { return b2_; }

  MlpGrads make_grads() const {
    MlpGrads g;
    g.w0.assign(w0_.size(), 0.0);
    g.b0.assign(b0_.size(), 0.0);
    g.w1.assign(w1_.size(), 0.0);
    g.b1.assign(b1_.size(), 0.0);
    g.w2.assign(w2_.size(), 0.0);
    g.b2.assign(b2_.size(), 0.0);
    return g;
  }

  struct Activations {
    std::vector<double> in, h0, h1, out;
  };

  void forward(std::span<const double> in, std::span<double> out, Activations* acts = nullptr) const {
    check(static_cast<int>(in.size()) == in_dim_, "mlp input size ", in.size(), " != ", in_dim_);
    check(static_cast<int>(out.size()) == out_dim_, "mlp output size mismatch");
    thread_local std::vector<double> h0, h1;
    h0.assign(hidden_, 0.0);
    h1.assign(hidden_, 0.0);
    for (int r = 0; r < hidden_; ++r) {
      const double* row = &w0_[static_cast<size_t>(r) * in_dim_];
      double s = b0_[r];
      for (int c = 0; c < in_dim_; ++c) s += row[c] * in[c];
      h0[r] = s > 0 ? s : 0.0;
    }
    for (int r = 0; r < hidden_; ++r) {
      const double* row = &w1_[static_cast<size_t>(r) * hidden_];
      double s = b1_[r];
      for (int c = 0; c < hidden_; ++c) s += row[c] * h0[c];
      h1[r] = s > 0 ? s : 0.0;
    }
    for (int r = 0; r < out_dim_; ++r) {
      const double* row = &w2_[static_cast<size_t>(r) * hidden_];
      double s = b2_[r];
      for (int c = 0; c < hidden_; ++c) s += row[c] * h1[c];
      out[r] = 1.0 / (1.0 + std::exp(-s));
    }
    if (acts) {
      acts->in.assign(in.begin(), in.end());
      acts->h0 = h0;
      acts->h1 = h1;
      acts->out.assign(out.begin(), out.end());
    }
  }

  // d_in may be empty when input gradients are not needed.
  void backward(const Activations& acts, std::span<const double> d_out, MlpGrads& g,
                std::span<double> d_in = {}) const {
    check(static_cast<int>(d_out.size()) == out_dim_, "mlp upstream size mismatch");
    check(d_in.empty() || static_cast<int>(d_in.size()) == in_dim_, "mlp d_in size mismatch");
    check(static_cast<int>(acts.in.size()) == in_dim_ &&
              static_cast<int>(acts.h0.size()) == hidden_ &&
              static_cast<int>(acts.h1.size()) == hidden_ &&
              static_cast<int>(acts.out.size()) == out_dim_,
          "mlp activations do not match decoder shape");
    thread_local std::vector<double> dz2, dh1, dh0;
    dz2.assign(out_dim_, 0.0);
    dh1.assign(hidden_, 0.0);
    dh0.assign(hidden_, 0.0);
    for (int r = 0; r < out_dim_; ++r) {
      const double y = acts.out[r];
      dz2[r] = d_out[r] * y * (1.0 - y);
      g.b2[r] += dz2[r];
      double* grow = &g.w2[static_cast<size_t>(r) * hidden_];
      const double dz = dz2[r];
      for (int c = 0; c < hidden_; ++c) grow[c] += dz * acts.h1[c];
    }
    for (int r = 0; r < out_dim_; ++r) {
      const double* row = &w2_[static_cast<size_t>(r) * hidden_];
      const double dz = dz2[r];
      for (int c = 0; c < hidden_; ++c) dh1[c] += dz * row[c];
    }
    for (int r = 0; r < hidden_; ++r) {
      if (acts.h1[r] <= 0) { dh1[r] = 0; continue; }
      g.b1[r] += dh1[r];
      double* grow = &g.w1[static_cast<size_t>(r) * hidden_];
      const double dz = dh1[r];
      for (int c = 0; c < hidden_; ++c) grow[c] += dz * acts.h0[c];
    }
    for (int r = 0; r < hidden_; ++r) {
      const double dz = dh1[r];
      if (dz == 0) continue;
      const double* row = &w1_[static_cast<size_t>(r) * hidden_];
      for (int c = 0; c < hidden_; ++c) dh0[c] += dz * row[c];
    }
    for (int r = 0; r < hidden_; ++r) {
      if (acts.h0[r] <= 0) { dh0[r] = 0; continue; }
      g.b0[r] += dh0[r];
      double* grow = &g.w0[static_cast<size_t>(r) * in_dim_];
      const double dz = dh0[r];
      for (int c = 0; c < in_dim_; ++c) grow[c] += dz * acts.in[c];
    }
    if (!d_in.empty()) {
      std::fill(d_in.begin(), d_in.end(), 0.0);
      for (int r = 0; r < hidden_; ++r) {
        const double dz = dh0[r];
        if (dz == 0) continue;
        const double* row = &w0_[static_cast<size_t>(r) * in_dim_];
        for (int c = 0; c < in_dim_; ++c) d_in[c] += dz * row[c];
      }
    }
  }

 private:
  int in_dim_ = 0, hidden_ = 0, out_dim_ = 0;
  std::vector<double> w0_, b0_, w1_, b1_, w2_, b2_;
};

}  // namespace topofit
