#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "rxf/geometry.hpp"
#include "rxf/matching_loss.hpp"
#include "rxf/preprocess.hpp"
#include "rxf/random.hpp"
#include "rxf/spectrum_sim.hpp"

namespace rxf::testing {

// Minimum over all injective maps gt -> pred by enumeration.
inline double brute_force_min(const Eigen::MatrixXd& c) {
  const std::size_t P = static_cast<std::size_t>(c.rows()), G = static_cast<std::size_t>(c.cols());
  std::vector<std::size_t> rows(P);
  std::iota(rows.begin(), rows.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (std::size_t j = 0; j < G; ++j) s += c(static_cast<Eigen::Index>(rows[j]), static_cast<Eigen::Index>(j));
    best = std::min(best, s);
  } while (std::next_permutation(rows.begin(), rows.end()));
  return best;
}

inline double assignment_cost(const Eigen::MatrixXd& c, const Assignment& a) {
  double s = 0;
  for (const auto& [p, g] : a.pairs) s += c(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g));
  return s;
}

// Point-count oracle over the joint bounding volume.
inline double mc_iou(const Box3D& a, const Box3D& b, bool bev, std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  const double ra = 0.5 * std::hypot(a.size[0], a.size[1]), rb = 0.5 * std::hypot(b.size[0], b.size[1]);
  const double x0 = std::min(a.center[0] - ra, b.center[0] - rb), x1 = std::max(a.center[0] + ra, b.center[0] + rb);
  const double y0 = std::min(a.center[1] - ra, b.center[1] - rb), y1 = std::max(a.center[1] + ra, b.center[1] + rb);
  const double z0 = std::min(a.center[2] - a.size[2] / 2, b.center[2] - b.size[2] / 2);
  const double z1 = std::max(a.center[2] + a.size[2] / 2, b.center[2] + b.size[2] / 2);
  std::size_t in_a = 0, in_b = 0, both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    Eigen::Vector3d p(rng.uniform(x0, x1), rng.uniform(y0, y1), bev ? a.center[2] : rng.uniform(z0, z1));
    Eigen::Vector3d pb = p;
    if (bev) pb[2] = b.center[2];
    const bool ia = box_contains(a, p), ib = box_contains(b, pb);
    in_a += ia;
    in_b += ib;
    both += ia && ib;
  }
  return static_cast<double>(both) / static_cast<double>(in_a + in_b - both);
}

inline SpectrumTesseract tesseract(Tensor power) {
  SpectrumGrid g;
  g.doppler_bins = power.dim(0);
  g.spatial.range_bins = power.dim(1);
  g.spatial.elevation_bins = power.dim(2);
  g.spatial.azimuth_bins = power.dim(3);
  return SpectrumTesseract::with_axes(std::move(power), g);
}

// Largest deviation of compress_doppler from the per-cell mean / population
// variance / first-argmax Doppler velocity written as plain loops.
inline double compress_oracle_gap(const SpectrumTesseract& spec) {
  const RadarCube3 c = compress_doppler(spec);
  const std::size_t D = spec.power.dim(0), R = spec.power.dim(1), E = spec.power.dim(2), A = spec.power.dim(3);
  double gap = 0;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t a = 0; a < A; ++a) {
        auto x = [&](std::size_t d) { return spec.power[((d * R + r) * E + e) * A + a]; };
        double m = 0;
        for (std::size_t d = 0; d < D; ++d) m += x(d);
        m /= static_cast<double>(D);
        double v = 0;
        std::size_t best = 0;
        for (std::size_t d = 0; d < D; ++d) {
          v += (x(d) - m) * (x(d) - m);
          if (x(d) > x(best)) best = d;
        }
        v /= static_cast<double>(D);
        gap = std::max({gap, std::abs(c.at(r, e, a, 0) - m), std::abs(c.at(r, e, a, 1) - v),
                        std::abs(c.at(r, e, a, 2) - spec.doppler_mps[best])});
      }
  return gap;
}

}  // namespace rxf::testing
