#include <doctest.h>

#include <cmath>
#include <sstream>

#include "filter_probe.hpp"
#include "oracles.hpp"
#include "rxf/preprocess.hpp"
#include "rxf/spectrum_sim.hpp"
#include "support.hpp"

using namespace rxf;
using rxf::testing::random_tensor;
using rxf::testing::tesseract;

namespace {

RadarCube3 cube_from(const std::vector<double>& mean, std::size_t R, std::size_t E, std::size_t A) {
  std::vector<double> v(R * E * A * 3, 0.0);
  for (std::size_t i = 0; i < R * E * A; ++i) {
    v[i * 3] = mean[i];
    v[i * 3 + 1] = 0.1 * mean[i];
    v[i * 3 + 2] = -1.0;
  }
  return {Tensor({R, E, A, 3}, std::move(v)), {}, {}, {}};
}

RadarCube3 random_cube(Rng& rng, std::size_t R, std::size_t E, std::size_t A) {
  std::vector<double> m(R * E * A);
  for (auto& x : m) x = rng.uniform(0, 1) * rng.uniform(0, 1);
  return cube_from(m, R, E, A);
}

}  // namespace

TEST_CASE("compress_doppler matches the scalar definition") {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto spec = tesseract(random_tensor(rng, {8, 4, 4, 4}, 0, 2));
    const RadarCube3 c = compress_doppler(spec);
    CHECK(spec.power.size() * 3 == c.channels.size() * 8);
    CHECK(rxf::testing::compress_oracle_gap(spec) <= 1e-12);
  }
}

TEST_CASE("compress_doppler special cases") {
  const RadarCube3 flat = compress_doppler(tesseract(Tensor::full({6, 4, 4, 4}, 2.5)));
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(flat.channels[i * 3] == 2.5);
    CHECK(flat.channels[i * 3 + 1] == 0.0);
  }
  Tensor spike = Tensor::zeros({6, 4, 4, 4});
  spike.mutable_data()[((3 * 4 + 1) * 4 + 2) * 4 + 0] = 9.0;
  const auto spec = tesseract(spike);
  const RadarCube3 c = compress_doppler(spec);
  CHECK(c.at(1, 2, 0, 2) == spec.doppler_mps[3]);
  CHECK(c.at(1, 2, 0, 1) > 0);
  // ties go to the lowest Doppler bin
  CHECK(c.at(0, 0, 0, 2) == spec.doppler_mps[0]);
  for (std::size_t D : {32u, 64u}) {
    const RadarCube3 k = compress_doppler(tesseract(Tensor::zeros({D, 4, 4, 4})));
    CHECK(static_cast<double>(D * 64) / static_cast<double>(k.channels.size()) == static_cast<double>(D) / 3.0);
  }
}

TEST_CASE("range_filter") {
  const RadarCube3 equal = cube_from(std::vector<double>(2 * 3 * 4, 0.7), 2, 3, 4);
  CHECK(range_filter(equal, 0.15).points.size() == 24);

  std::vector<double> m(2 * 3 * 4, 0.01);
  m[0 * 12 + 5] = 1.0;
  m[1 * 12 + 7] = 1.0;
  const SparseSpectrum s = range_filter(cube_from(m, 2, 3, 4), 0.15);
  REQUIRE(s.points.size() == 2);
  CHECK(s.points[0].r == 0);
  CHECK(s.points[0].e * 4 + s.points[0].a == 5);
  CHECK(s.points[1].r == 1);
  CHECK(s.points[0].values[2] == -1.0);

  // per-slice scale invariance and sequential/parallel identity
  Rng rng(2);
  RadarCube3 c = random_cube(rng, 6, 4, 8);
  const SparseSpectrum base = range_filter(c, 0.3, 1);
  CHECK(range_filter(c, 0.3, 4).points == base.points);
  auto d = c.channels.mutable_data();
  for (std::size_t i = 0; i < 4 * 8; ++i) d[(2 * 32 + i) * 3] *= 37.0;
  const SparseSpectrum scaled = range_filter(c, 0.3, 1);
  REQUIRE(scaled.points.size() == base.points.size());
  for (std::size_t i = 0; i < base.points.size(); ++i) {
    CHECK(scaled.points[i].r == base.points[i].r);
    CHECK(scaled.points[i].e == base.points[i].e);
    CHECK(scaled.points[i].a == base.points[i].a);
  }
}

TEST_CASE("ca_cfar") {
  CHECK(ca_cfar(cube_from(std::vector<double>(2 * 2 * 24, 1.0), 2, 2, 24), {2, 8, 1.5}).points.empty());
  std::vector<double> m(24, 0.1);
  m[11] = 5.0;
  const SparseSpectrum s = ca_cfar(cube_from(m, 1, 1, 24), {2, 8, 3.0});
  REQUIRE(s.points.size() == 1);
  CHECK(s.points[0].a == 11);
  CHECK_THROWS_AS(CaCfar({2, 8, 3.0}, 5), ContractError);
  CHECK_THROWS_AS(CaCfar({2, 0, 3.0}, 24), ContractError);
  CHECK_NOTHROW(CaCfar({2, 1, 3.0}, 6));
}

TEST_CASE("sparse codec") {
  const SparseSpectrum empty{{}, {3, 2, 4}};
  const RadarCube3 zero = to_dense(empty);
  for (double v : zero.channels.data()) CHECK(v == 0.0);

  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    const RadarCube3 c = random_cube(rng, 5, 3, 7);
    const SparseSpectrum s = range_filter(c, 0.4);
    const RadarCube3 d = to_dense(s);
    for (const auto& p : s.points)
      for (std::size_t ch = 0; ch < 3; ++ch) CHECK(d.at(p.r, p.e, p.a, ch) == c.at(p.r, p.e, p.a, ch));
    // idempotent under a second identical pass
    CHECK(range_filter(d, 0.4).points == s.points);
    std::vector<std::array<std::size_t, 3>> cells;
    for (const auto& p : s.points) cells.push_back({p.r, p.e, p.a});
    CHECK(select_cells(d, cells).points == s.points);

    std::stringstream a;
    write_rxs(a, s);
    const std::string bytes = a.str();
    CHECK(bytes.substr(0, 4) == "RXS1");
    CHECK(bytes.size() == 4 + 4 + 12 + s.points.size() * 18);
    std::stringstream b(bytes);
    const SparseSpectrum back = read_rxs(b);
    CHECK(back.points.size() == s.points.size());
    std::stringstream again;
    write_rxs(again, back);
    CHECK(again.str() == bytes);
  }

  SparseSpectrum dup{{SparsePoint{1, 1, 1, {1, 1, 1}}, SparsePoint{1, 1, 1, {2, 2, 2}}}, {3, 3, 3}};
  CHECK_THROWS_AS(to_dense(dup), ContractError);
  SparseSpectrum outside{{SparsePoint{3, 0, 0, {1, 1, 1}}}, {3, 3, 3}};
  CHECK_THROWS_AS(to_dense(outside), ContractError);
}

TEST_CASE("filters on a simulated object") {
  SpectrumGrid g;
  g.spatial.range = {2, 42};
  g.spatial.range_bins = 32;
  RenderOptions ro;
  ro.clutter_density = 0.002;
  SceneObject o;
  o.center = {16, -2, -0.2};
  o.size = {4.2, 1.9, 1.6};
  o.yaw = 0.5;
  o.radial_velocity = 3;
  o.reflectivity = 6000;
  const Scene scene({o}, 0.05, 5, g);
  const RadarCube3 cube = compress_doppler(render_spectrum(scene, g, ro));
  const auto cells = cells_in_boxes(cube, {o.box()});
  REQUIRE(cells.size() > 5);
  const SparseSpectrum rf = range_filter(cube, 0.15);
  CHECK(cell_recall(rf, cells) >= 0.9);
  const SparseSpectrum cf = rxf::testing::cfar_matched(cube, rf.points.size());
  CHECK(cf.points.size() >= rf.points.size());
  CHECK(cell_recall(cf, cells) < cell_recall(rf, cells));

  // noise only: the relative threshold drops most cells
  const Scene noise({}, 0.05, 6, g);
  CHECK(range_filter(compress_doppler(render_spectrum(noise, g)), 0.15).retention() < 0.2);
}
