#include <doctest.h>

#include <cmath>

#include "rxf/encoders.hpp"
#include "rxf/fusion.hpp"
#include "support.hpp"

using namespace rxf;
using rxf::testing::gradcheck;
using rxf::testing::probe;
using rxf::testing::random_tensor;

namespace {

// Boolean dependence volumes pushed through the encoder topology by hand.
// `edge_axis` >= 0 marks a cell as dirty when its window reads padding on
// that axis; otherwise padding is clean.
struct Mask {
  Extent3 ext{};
  std::vector<char> v;
  Mask(Extent3 e) : ext(e), v(e[0] * e[1] * e[2], 0) {}
  char& at(std::size_t d, std::size_t h, std::size_t w) { return v[(d * ext[1] + h) * ext[2] + w]; }
  char at(std::size_t d, std::size_t h, std::size_t w) const { return v[(d * ext[1] + h) * ext[2] + w]; }
};

Mask conv_mask(const Mask& m, Extent3 k, Extent3 stride, int edge_axis) {
  Extent3 e;
  for (int a = 0; a < 3; ++a) e[a] = m.ext[a] / stride[a];
  Mask out(e);
  for (std::size_t d = 0; d < e[0]; ++d)
    for (std::size_t h = 0; h < e[1]; ++h)
      for (std::size_t w = 0; w < e[2]; ++w) {
        const std::array<std::size_t, 3> o{d, h, w};
        char dirty = 0;
        for (std::size_t i = 0; i < k[0]; ++i)
          for (std::size_t j = 0; j < k[1]; ++j)
            for (std::size_t l = 0; l < k[2]; ++l) {
              const std::array<std::size_t, 3> t{i, j, l};
              std::array<long, 3> p;
              bool outside = false;
              for (int a = 0; a < 3; ++a) {
                p[a] = static_cast<long>(o[a] * stride[a] + t[a]) - static_cast<long>(k[a] / 2);
                if (p[a] < 0 || p[a] >= static_cast<long>(m.ext[a])) {
                  outside = true;
                  if (a == edge_axis) dirty = 1;
                }
              }
              if (!outside && m.at(p[0], p[1], p[2])) dirty = 1;
            }
        out.at(d, h, w) = dirty;
      }
  return out;
}

Mask or_mask(Mask a, const Mask& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] |= b.v[i];
  return a;
}

Mask upsample_mask(const Mask& m, Extent3 f) {
  Mask out({m.ext[0] * f[0], m.ext[1] * f[1], m.ext[2] * f[2]});
  for (std::size_t d = 0; d < out.ext[0]; ++d)
    for (std::size_t h = 0; h < out.ext[1]; ++h)
      for (std::size_t w = 0; w < out.ext[2]; ++w) out.at(d, h, w) = m.at(d / f[0], h / f[1], w / f[2]);
  return out;
}

Mask pool_mask(const Mask& m, Extent3 f) {
  Mask out({m.ext[0] / f[0], m.ext[1] / f[1], m.ext[2] / f[2]});
  for (std::size_t d = 0; d < m.ext[0]; ++d)
    for (std::size_t h = 0; h < m.ext[1]; ++h)
      for (std::size_t w = 0; w < m.ext[2]; ++w) out.at(d / f[0], h / f[1], w / f[2]) |= m.at(d, h, w);
  return out;
}

std::vector<Mask> pyramid_mask(const Mask& in, const PyramidConfig& cfg, bool planar, bool skip, int edge_axis) {
  const Extent3 k3{planar ? 1u : 3u, 3, 3}, k1{1, 1, 1}, one{1, 1, 1};
  auto strides = cfg.stage_strides;
  if (planar)
    for (auto& s : strides) s[0] = 1;
  auto cum = [&](std::size_t l) {
    Extent3 s{1, 1, 1};
    for (std::size_t i = 0; i <= l; ++i)
      for (int a = 0; a < 3; ++a) s[a] *= strides[i][a];
    return s;
  };
  std::vector<Mask> feats;
  Mask h = in;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    h = conv_mask(h, k3, strides[l], edge_axis);
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b)
      h = or_mask(h, conv_mask(conv_mask(h, k3, one, edge_axis), k3, one, edge_axis));
    feats.push_back(h);
  }
  std::vector<Mask> out(cfg.levels, Mask({0, 0, 0}));
  for (std::size_t l = cfg.levels; l-- > 0;) {
    Mask p = conv_mask(feats[l], k1, one, edge_axis);
    if (l + 1 < cfg.levels) p = or_mask(p, upsample_mask(out[l + 1], strides[l + 1]));
    if (skip) p = or_mask(p, pool_mask(in, cum(l)));
    out[l] = p;
  }
  if (cfg.neck_smooth)
    for (auto& m : out) m = conv_mask(m, k3, one, edge_axis);
  return out;
}

PyramidConfig small_config() {
  PyramidConfig c;
  c.levels = 2;
  c.base_channels = 2;
  c.out_channels = 3;
  c.blocks_per_stage = 1;
  c.stage_strides = {{1, 1, 1}, {2, 2, 2}};
  return c;
}

struct Variant {
  bool planar;
  bool skip;
};

std::vector<Tensor> run(const PyramidEncoder& enc, const Tensor& x, bool planar) {
  if (!planar) return encode_radar(x, enc);
  auto levels = encode_image(reshape(x, {x.dim(0), x.dim(2), x.dim(3)}), enc);
  for (auto& t : levels) t = reshape(t, {t.dim(0), 1, t.dim(1), t.dim(2)});
  return levels;
}

}  // namespace

TEST_CASE("zero input and zero biases give a zero pyramid") {
  for (const Variant v : {Variant{false, false}, Variant{true, true}}) {
    ParamStore ps(3);
    const PyramidEncoder enc(small_config(), 3, v.planar, v.skip, ps, "enc");
    for (const auto& [name, t] : ps.all())
      if (name.ends_with(".b")) {
        Tensor b = t;
        for (auto& x : b.mutable_data()) x = 0;
      }
    const Tensor x = Tensor::zeros({3, v.planar ? 1u : 4u, 8, 8});
    for (const Tensor& level : run(enc, x, v.planar))
      for (double y : level.data()) CHECK(y == 0.0);
  }
}

TEST_CASE("shape contract") {
  ParamStore ps(1);
  PyramidConfig cfg;
  cfg.out_channels = 5;
  const PyramidEncoder enc(cfg, 3, false, false, ps, "r");
  Rng rng(1);
  const auto levels = encode_radar(random_tensor(rng, {3, 8, 4, 16}), enc);
  REQUIRE(levels.size() == 3);
  const auto ext = enc.level_extents({8, 4, 16});
  for (std::size_t l = 0; l < 3; ++l) {
    const auto s = cfg.cumulative_stride(l);
    CHECK(levels[l].shape() == Shape{5, 8 / s[0], 4 / s[1], 16 / s[2]});
    CHECK(ext[l] == Extent3{8 / s[0], 4 / s[1], 16 / s[2]});
  }
  CHECK_THROWS_AS(enc.level_extents({8, 6, 16}), ContractError);
  CHECK_THROWS_AS(encode_radar(Tensor::zeros({3, 8, 4, 10}), enc), ContractError);

  ParamStore ps2(1);
  const PyramidEncoder img(cfg, 3, true, true, ps2, "i");
  const auto il = encode_image(random_tensor(rng, {3, 8, 16}), img);
  CHECK(il[2].shape() == Shape{5, 2, 4});

  ModelConfig mc;
  mc.grid.azimuth_bins = 30;
  CHECK_THROWS_AS(FusionModel{mc}, ContractError);
  PyramidConfig bad = cfg;
  bad.stage_strides.pop_back();
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("a single-cell change stays inside the receptive field") {
  for (const Variant v : {Variant{false, false}, Variant{false, true}, Variant{true, true}}) {
    ParamStore ps(5);
    const PyramidConfig cfg = small_config();
    const PyramidEncoder enc(cfg, 3, v.planar, v.skip, ps, "enc");
    const Extent3 in{v.planar ? 1u : 8u, 8, 16};
    Rng rng(7);
    const Tensor x = random_tensor(rng, {3, in[0], in[1], in[2]});
    Tensor x2 = x.detach();
    const std::size_t cell[3] = {in[0] > 1 ? 2u : 0u, 1, 3};
    const std::size_t n = in[0] * in[1] * in[2];
    for (std::size_t c = 0; c < 3; ++c) x2.mutable_data()[c * n + (cell[0] * in[1] + cell[1]) * in[2] + cell[2]] += 0.5;

    Mask m(in);
    m.at(cell[0], cell[1], cell[2]) = 1;
    const auto masks = pyramid_mask(m, cfg, v.planar, v.skip, -1);
    const auto a = run(enc, x, v.planar), b = run(enc, x2, v.planar);
    for (std::size_t l = 0; l < a.size(); ++l) {
      const std::size_t cells = a[l].size() / a[l].dim(0);
      std::size_t changed = 0, reach = 0;
      for (std::size_t i = 0; i < cells; ++i) {
        bool diff = false;
        for (std::size_t c = 0; c < a[l].dim(0); ++c) diff |= a[l][c * cells + i] != b[l][c * cells + i];
        changed += diff;
        reach += masks[l].v[i] != 0;
        if (diff) CHECK(masks[l].v[i]);
      }
      CHECK(changed > 0);
      CHECK(reach < cells);
    }
  }
}

TEST_CASE("translation covariance by one coarsest stride") {
  for (const Variant v : {Variant{false, false}, Variant{true, true}}) {
    ParamStore ps(9);
    const PyramidConfig cfg = small_config();
    const PyramidEncoder enc(cfg, 3, v.planar, v.skip, ps, "enc");
    const Extent3 in{v.planar ? 1u : 4u, 4, 24};
    const std::size_t shift = cfg.cumulative_stride(cfg.levels - 1)[2];
    Rng rng(4);
    const Tensor x = random_tensor(rng, {3, in[0], in[1], in[2]});
    Tensor x2 = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
      if (i % in[2] >= shift) x2.mutable_data()[i] = x[i - shift];

    const auto edge = pyramid_mask(Mask(in), cfg, v.planar, v.skip, 2);
    const auto a = run(enc, x, v.planar), b = run(enc, x2, v.planar);
    for (std::size_t l = 0; l < a.size(); ++l) {
      const std::size_t d = shift / cfg.cumulative_stride(l)[2];
      const Extent3 e = edge[l].ext;
      const std::size_t cells = e[0] * e[1] * e[2];
      std::size_t compared = 0;
      for (std::size_t i = 0; i < cells; ++i) {
        const std::size_t w = i % e[2];
        if (w + d >= e[2] || edge[l].v[i] || edge[l].v[i + d]) continue;
        ++compared;
        for (std::size_t c = 0; c < a[l].dim(0); ++c) CHECK(std::abs(b[l][c * cells + i + d] - a[l][c * cells + i]) <= 1e-9);
      }
      CHECK(compared > 0);
    }
  }
}

TEST_CASE("encoder gradients match finite differences") {
  for (const Variant v : {Variant{false, false}, Variant{true, true}}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ParamStore ps(seed);
      const PyramidEncoder enc(small_config(), 3, v.planar, v.skip, ps, "enc");
      Rng rng(seed + 100);
      const Tensor x = random_tensor(rng, {3, v.planar ? 1u : 8u, 4, 8});
      std::vector<Tensor> inputs{x};
      for (const auto& [name, t] : ps.all()) inputs.push_back(t);
      const auto f = [&] {
        Tensor s = Tensor::scalar(0);
        const auto levels = run(enc, x, v.planar);
        for (std::size_t l = 0; l < levels.size(); ++l) s = add(s, probe(levels[l], seed * 10 + l));
        return s;
      };
      const auto r = gradcheck(f, inputs, 1e-6, 24, seed);
      CHECK_MESSAGE(r.max_rel < 1e-4, "worst tensor " << r.worst << " rel " << r.max_rel);
    }
  }
}
