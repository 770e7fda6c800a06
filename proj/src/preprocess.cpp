#include "rxf/preprocess.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

#include "rxf/io.hpp"
#include "rxf/parallel.hpp"

namespace rxf {

Tensor RadarCube3::channels_first() const {
  const std::size_t n = range_bins() * elevation_bins() * azimuth_bins();
  std::vector<double> out(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * n + i] = channels[i * 3 + c];
  return Tensor({3, range_bins(), elevation_bins(), azimuth_bins()}, std::move(out));
}

RadarCube3 compress_doppler(const SpectrumTesseract& spec) {
  const auto& p = spec.power;
  if (p.rank() != 4) throw DimensionError("compress_doppler: expected [D x R x E x A], got " + shape_str(p.shape()));
  const std::size_t D = p.dim(0), R = p.dim(1), E = p.dim(2), A = p.dim(3);
  if (D < 2) throw ContractError("compress_doppler: need at least 2 Doppler bins");
  if (spec.doppler_mps.size() != D) throw DimensionError("compress_doppler: Doppler axis length mismatch");
  const std::size_t n = R * E * A;
  const double inv_d = 1.0 / static_cast<double>(D);
  std::vector<double> mean(n, 0.0), var(n, 0.0);
  std::vector<std::size_t> peak(n, 0);
  for (std::size_t d = 0; d < D; ++d) {
    const double* slab = p.data().data() + d * n;
    for (std::size_t i = 0; i < n; ++i) {
      mean[i] += slab[i];
      // strict > keeps the lowest Doppler index on ties
      if (slab[i] > p.data()[peak[i] * n + i]) peak[i] = d;
    }
  }
  for (auto& m : mean) m *= inv_d;
  for (std::size_t d = 0; d < D; ++d) {
    const double* slab = p.data().data() + d * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = slab[i] - mean[i];
      var[i] += dv * dv;
    }
  }
  std::vector<double> out(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    out[i * 3 + 0] = mean[i];
    out[i * 3 + 1] = var[i] * inv_d;
    out[i * 3 + 2] = spec.doppler_mps[peak[i]];
  }
  return {Tensor({R, E, A, 3}, std::move(out)), spec.range_m, spec.elevation_rad, spec.azimuth_rad};
}

void SparseSpectrum::validate() const {
  std::set<std::tuple<std::uint16_t, std::uint16_t, std::uint16_t>> seen;
  for (const auto& p : points) {
    if (p.r >= dense_shape[0] || p.e >= dense_shape[1] || p.a >= dense_shape[2]) {
      throw ContractError("SparseSpectrum: index outside dense shape");
    }
    if (!seen.emplace(p.r, p.e, p.a).second) throw ContractError("SparseSpectrum: duplicate cell index");
  }
}

double SparseSpectrum::retention() const {
  const double total = static_cast<double>(dense_shape[0] * dense_shape[1] * dense_shape[2]);
  return total > 0 ? static_cast<double>(points.size()) / total : 0.0;
}

namespace {

void check_index_width(const RadarCube3& cube) {
  if (cube.range_bins() > 65535 || cube.elevation_bins() > 65535 || cube.azimuth_bins() > 65535) {
    throw ContractError("sparse spectrum indices are limited to 16 bits");
  }
}

SparsePoint point_at(const RadarCube3& cube, std::size_t r, std::size_t e, std::size_t a) {
  return {static_cast<std::uint16_t>(r), static_cast<std::uint16_t>(e), static_cast<std::uint16_t>(a),
          {cube.at(r, e, a, 0), cube.at(r, e, a, 1), cube.at(r, e, a, 2)}};
}

}  // namespace

SparseSpectrum range_filter(const RadarCube3& cube, double alpha, std::size_t jobs) {
  if (!(alpha > 0 && alpha < 1)) throw ContractError("range_filter: alpha must lie in (0, 1)");
  check_index_width(cube);
  const std::size_t R = cube.range_bins(), E = cube.elevation_bins(), A = cube.azimuth_bins();
  std::vector<std::vector<SparsePoint>> per_range(R);
  parallel_for(R, jobs, [&](std::size_t r) {
    double mx = 0;
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t a = 0; a < A; ++a) mx = std::max(mx, cube.at(r, e, a, 0));
    const double thr = alpha * mx;
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t a = 0; a < A; ++a)
        if (cube.at(r, e, a, 0) >= thr) per_range[r].push_back(point_at(cube, r, e, a));
  });
  SparseSpectrum out;
  out.dense_shape = {R, E, A};
  for (auto& v : per_range) out.points.insert(out.points.end(), v.begin(), v.end());
  return out;
}

CaCfar::CaCfar(const CfarParams& params, std::size_t azimuth_bins) : params_(params), azimuth_bins_(azimuth_bins) {
  if (params.train < 1) throw ContractError("ca_cfar: need at least one training cell");
  // some cell sees no training cell on either side iff the row is no longer
  // than the guard band on both sides plus the cell itself
  if (azimuth_bins <= 2 * params.guard + 1) {
    throw ContractError("ca_cfar: guard band covers the whole azimuth row; training window is empty");
  }
}

SparseSpectrum CaCfar::apply(const RadarCube3& cube) const {
  check_index_width(cube);
  const std::size_t R = cube.range_bins(), E = cube.elevation_bins(), A = cube.azimuth_bins();
  if (A != azimuth_bins_) throw DimensionError("ca_cfar: detector built for a different azimuth extent");
  const long g = static_cast<long>(params_.guard), t = static_cast<long>(params_.train);
  SparseSpectrum out;
  out.dense_shape = {R, E, A};
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t a = 0; a < A; ++a) {
        double acc = 0;
        std::size_t count = 0;
        for (long off = g + 1; off <= g + t; ++off) {
          for (long j : {static_cast<long>(a) - off, static_cast<long>(a) + off}) {
            if (j < 0 || j >= static_cast<long>(A)) continue;
            acc += cube.at(r, e, static_cast<std::size_t>(j), 0);
            ++count;
          }
        }
        if (count == 0) throw ContractError("ca_cfar: empty training window");
        if (cube.at(r, e, a, 0) > params_.scale * acc / static_cast<double>(count)) {
          out.points.push_back(point_at(cube, r, e, a));
        }
      }
  return out;
}

SparseSpectrum ca_cfar(const RadarCube3& cube, const CfarParams& params) {
  return CaCfar(params, cube.azimuth_bins()).apply(cube);
}

RadarCube3 to_dense(const SparseSpectrum& sparse) {
  sparse.validate();
  const auto [R, E, A] = sparse.dense_shape;
  std::vector<double> out(R * E * A * 3, 0.0);
  for (const auto& p : sparse.points) {
    const std::size_t base = ((static_cast<std::size_t>(p.r) * E + p.e) * A + p.a) * 3;
    for (std::size_t c = 0; c < 3; ++c) out[base + c] = p.values[c];
  }
  return {Tensor({R, E, A, 3}, std::move(out)), {}, {}, {}};
}

SparseSpectrum select_cells(const RadarCube3& cube, const std::vector<std::array<std::size_t, 3>>& cells) {
  check_index_width(cube);
  auto sorted = cells;
  std::sort(sorted.begin(), sorted.end());
  SparseSpectrum out;
  out.dense_shape = {cube.range_bins(), cube.elevation_bins(), cube.azimuth_bins()};
  for (const auto& c : sorted) {
    if (c[0] >= out.dense_shape[0] || c[1] >= out.dense_shape[1] || c[2] >= out.dense_shape[2]) {
      throw ContractError("select_cells: index outside cube");
    }
    out.points.push_back(point_at(cube, c[0], c[1], c[2]));
  }
  out.validate();
  return out;
}

void write_rxs(std::ostream& os, const SparseSpectrum& s) {
  os.write("RXS1", 4);
  put_u32(os, static_cast<std::uint32_t>(s.points.size()));
  for (auto e : s.dense_shape) put_u32(os, static_cast<std::uint32_t>(e));
  for (const auto& p : s.points) {
    put_u16(os, p.r);
    put_u16(os, p.e);
    put_u16(os, p.a);
    for (double v : p.values) put_f32(os, static_cast<float>(v));
  }
}

SparseSpectrum read_rxs(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "RXS1") throw FormatError("bad magic, expected RXS1");
  SparseSpectrum s;
  const auto n = get_u32(is);
  for (auto& e : s.dense_shape) e = get_u32(is);
  s.points.resize(n);
  for (auto& p : s.points) {
    p.r = get_u16(is);
    p.e = get_u16(is);
    p.a = get_u16(is);
    for (auto& v : p.values) v = get_f32(is);
  }
  s.validate();
  return s;
}

void save_rxs(const std::filesystem::path& path, const SparseSpectrum& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_rxs(os, s);
}

SparseSpectrum load_rxs(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_rxs(is);
}

std::vector<std::array<std::size_t, 3>> cells_in_boxes(const RadarCube3& cube, const std::vector<Box3D>& boxes) {
  std::vector<std::array<std::size_t, 3>> out;
  for (std::size_t r = 0; r < cube.range_m.size(); ++r)
    for (std::size_t e = 0; e < cube.elevation_rad.size(); ++e)
      for (std::size_t a = 0; a < cube.azimuth_rad.size(); ++a) {
        const auto p = spherical_to_cartesian({cube.range_m[r], cube.elevation_rad[e], cube.azimuth_rad[a]});
        for (const auto& b : boxes) {
          if (box_contains(b, p)) {
            out.push_back({r, e, a});
            break;
          }
        }
      }
  return out;
}

double cell_recall(const SparseSpectrum& s, const std::vector<std::array<std::size_t, 3>>& cells) {
  if (cells.empty()) return 1.0;
  std::set<std::array<std::size_t, 3>> kept;
  for (const auto& p : s.points) kept.insert({p.r, p.e, p.a});
  std::size_t hit = 0;
  for (const auto& c : cells) hit += kept.count(c);
  return static_cast<double>(hit) / static_cast<double>(cells.size());
}

}  // namespace rxf
