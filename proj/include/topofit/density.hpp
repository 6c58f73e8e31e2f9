#pragma once

#include "topofit/core.hpp"

namespace topofit {

// Signed distances are squashed through a logistic CDF with sharpness `scale`;
// the opacity of a segment is how much of the remaining CDF mass it crosses.
struct DensityMapping {
  enum class Mode { PseudoSigned };  // slot for unsigned-distance variants

  double scale = 1.0;
  Mode mode = Mode::PseudoSigned;
};

inline double logistic_cdf(double x, double scale) {
  const double z = scale * x;
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double log_logistic_cdf(double x, double scale) {
  const double z = scale * x;
  if (z >= 0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

// Opacity of the segment between consecutive samples with signed distances
// s_k and s_next: max(1 - CDF(s_next)/CDF(s_k), 0).
inline double alpha_from_distances(double s_k, double s_next, const DensityMapping& mapping) {
  check(mapping.scale > 0, "density scale must be positive, got ", mapping.scale);
  const double log_ratio = log_logistic_cdf(s_next, mapping.scale) - log_logistic_cdf(s_k, mapping.scale);
  if (log_ratio >= 0) return 0.0;
  return -std::expm1(log_ratio);
}

struct AlphaGrad {
  double d_sk = 0;    // d(alpha)/d(s_k)
  double d_snext = 0; // d(alpha)/d(s_next)
  double d_scale = 0; // d(alpha)/d(scale)
};

inline AlphaGrad alpha_gradients(double s_k, double s_next, const DensityMapping& mapping) {
  check(mapping.scale > 0, "density scale must be positive, got ", mapping.scale);
  const double s = mapping.scale;
  const double log_ratio = log_logistic_cdf(s_next, s) - log_logistic_cdf(s_k, s);
  if (log_ratio >= 0) return {};  // clamped at zero, subgradient zero
  const double ratio = std::exp(log_ratio);
  // d log CDF(x) / d(s*x) = CDF(-x)
  const double q_next = logistic_cdf(-s_next, s);
  const double q_k = logistic_cdf(-s_k, s);
  AlphaGrad g;
  g.d_snext = -ratio * s * q_next;
  g.d_sk = ratio * s * q_k;
  g.d_scale = -ratio * (s_next * q_next - s_k * q_k);
  return g;
}

}  // namespace topofit
