#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "rxf/spectrum_sim.hpp"
#include "rxf/tensor.hpp"

namespace rxf {

/// Doppler-compressed spectrum: channels [R x E x A x 3] holding mean power,
/// power variance and peak Doppler (m/s) per spatial cell.
struct RadarCube3 {
  Tensor channels;
  std::vector<double> range_m;
  std::vector<double> elevation_rad;
  std::vector<double> azimuth_rad;

  std::size_t range_bins() const { return channels.dim(0); }
  std::size_t elevation_bins() const { return channels.dim(1); }
  std::size_t azimuth_bins() const { return channels.dim(2); }
  double at(std::size_t r, std::size_t e, std::size_t a, std::size_t ch) const {
    return channels[((r * elevation_bins() + e) * azimuth_bins() + a) * 3 + ch];
  }
  /// Channel-first copy [3 x R x E x A] for the convolutional encoder.
  Tensor channels_first() const;
};

RadarCube3 compress_doppler(const SpectrumTesseract& spec);

struct SparsePoint {
  std::uint16_t r = 0, e = 0, a = 0;
  std::array<double, 3> values{0, 0, 0};

  bool operator==(const SparsePoint&) const = default;
};

struct SparseSpectrum {
  std::vector<SparsePoint> points;  // ordered by (r, e, a)
  std::array<std::size_t, 3> dense_shape{0, 0, 0};

  /// Throws ContractError on out-of-range or duplicate indices.
  void validate() const;
  double retention() const;
};

/// Keeps cell (r,e,a) iff mean power >= alpha * max mean power of range slice r.
SparseSpectrum range_filter(const RadarCube3& cube, double alpha, std::size_t jobs = 1);

struct CfarParams {
  std::size_t guard = 2;
  std::size_t train = 8;
  double scale = 3.0;
};

/// Cell-averaging CFAR along azimuth, per (range, elevation) row.
class CaCfar {
 public:
  /// Throws ContractError if some cell of an azimuth row of this length would
  /// have no training cells.
  CaCfar(const CfarParams& params, std::size_t azimuth_bins);
  SparseSpectrum apply(const RadarCube3& cube) const;

 private:
  CfarParams params_;
  std::size_t azimuth_bins_;
};

SparseSpectrum ca_cfar(const RadarCube3& cube, const CfarParams& params = {});

/// Stored values at their cells, zero elsewhere.
RadarCube3 to_dense(const SparseSpectrum& sparse);
/// Spatial cells whose bin-center point lies inside at least one box, in (r, e, a) order.
std::vector<std::array<std::size_t, 3>> cells_in_boxes(const RadarCube3& cube, const std::vector<Box3D>& boxes);
/// Fraction of `cells` present in the sparse spectrum (1 when `cells` is empty).
double cell_recall(const SparseSpectrum& s, const std::vector<std::array<std::size_t, 3>>& cells);

/// Extracts the listed cells of a dense cube.
SparseSpectrum select_cells(const RadarCube3& cube, const std::vector<std::array<std::size_t, 3>>& cells);

// RXS1: "RXS1", u32 N, 3 x u32 (R,E,A), N x (u16 r, u16 e, u16 a, 3 x f32), little-endian.
void write_rxs(std::ostream& os, const SparseSpectrum& s);
SparseSpectrum read_rxs(std::istream& is);
void save_rxs(const std::filesystem::path& path, const SparseSpectrum& s);
SparseSpectrum load_rxs(const std::filesystem::path& path);

}  // namespace rxf
