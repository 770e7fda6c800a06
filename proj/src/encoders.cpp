#include "rxf/encoders.hpp"

namespace rxf {

void PyramidConfig::validate() const {
  if (levels < 2) throw ContractError("PyramidConfig: need at least 2 levels");
  if (stage_strides.size() != levels) throw ContractError("PyramidConfig: one stride triple per level required");
  for (const auto& s : stage_strides)
    for (auto v : s)
      if (v < 1) throw ContractError("PyramidConfig: strides must be >= 1");
  if (base_channels < 1 || out_channels < 1) throw ContractError("PyramidConfig: channel widths must be >= 1");
}

Extent3 PyramidConfig::cumulative_stride(std::size_t level) const {
  Extent3 s{1, 1, 1};
  for (std::size_t l = 0; l <= level; ++l)
    for (int ax = 0; ax < 3; ++ax) s[ax] *= stage_strides.at(l)[ax];
  return s;
}

void to_json(nlohmann::json& j, const PyramidConfig& c) {
  j = {{"levels", c.levels},
       {"base_channels", c.base_channels},
       {"out_channels", c.out_channels},
       {"blocks_per_stage", c.blocks_per_stage},
       {"stage_strides", c.stage_strides},
       {"neck_smooth", c.neck_smooth}};
}

void from_json(const nlohmann::json& j, PyramidConfig& c) {
  const PyramidConfig d;
  c.levels = j.value("levels", d.levels);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.out_channels = j.value("out_channels", d.out_channels);
  c.blocks_per_stage = j.value("blocks_per_stage", d.blocks_per_stage);
  c.stage_strides = j.value("stage_strides", d.stage_strides);
  c.neck_smooth = j.value("neck_smooth", d.neck_smooth);
  c.validate();
}

PyramidEncoder::Conv PyramidEncoder::make_conv(ParamStore& params, const std::string& name, std::size_t cin,
                                               std::size_t cout, std::size_t k, const Extent3& stride) const {
  const std::size_t kd = planar_ ? 1 : k;
  Conv c;
  c.w = params.add(name + ".w", {cout, cin, kd, k, k}, cin * kd * k * k);
  c.b = params.add(name + ".b", {cout}, cin * kd * k * k);
  const std::size_t pad = k / 2;
  c.spec.stride = stride;
  c.spec.padding = {planar_ ? 0 : pad, pad, pad};
  return c;
}

PyramidEncoder::PyramidEncoder(const PyramidConfig& cfg, std::size_t in_channels, bool planar, bool input_skip,
                               ParamStore& params, const std::string& prefix)
    : cfg_(cfg), planar_(planar), input_skip_(input_skip) {
  cfg_.validate();
  if (planar_) {
    for (auto& s : cfg_.stage_strides) s[0] = 1;
  }
  const std::size_t L = cfg_.levels;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t cin = l == 0 ? in_channels : cfg_.backbone_width(l - 1);
    const std::size_t w = cfg_.backbone_width(l);
    const std::string stage = prefix + ".stage" + std::to_string(l);
    down_.push_back(make_conv(params, stage + ".down", cin, w, 3, cfg_.stage_strides[l]));
    std::vector<Conv> convs;
    for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
      const std::string blk = stage + ".block" + std::to_string(b);
      convs.push_back(make_conv(params, blk + ".conv0", w, w, 3, {1, 1, 1}));
      convs.push_back(make_conv(params, blk + ".conv1", w, w, 3, {1, 1, 1}));
    }
    blocks_.push_back(std::move(convs));
  }
  for (std::size_t l = 0; l < L; ++l) {
    const std::string neck = prefix + ".neck" + std::to_string(l);
    lateral_.push_back(make_conv(params, neck + ".lateral", cfg_.backbone_width(l), cfg_.out_channels, 1, {1, 1, 1}));
    if (input_skip_) skip_.push_back(make_conv(params, neck + ".skip", in_channels, cfg_.out_channels, 1, {1, 1, 1}));
    if (cfg_.neck_smooth) {
      smooth_.push_back(make_conv(params, neck + ".smooth", cfg_.out_channels, cfg_.out_channels, 3, {1, 1, 1}));
    }
  }
}

std::vector<Extent3> PyramidEncoder::level_extents(const Extent3& input) const {
  std::vector<Extent3> out;
  for (std::size_t l = 0; l < cfg_.levels; ++l) {
    const auto s = cfg_.cumulative_stride(l);
    Extent3 e{};
    for (int ax = 0; ax < 3; ++ax) {
      if (input[ax] % s[ax] != 0) {
        throw ContractError("pyramid: input extent " + std::to_string(input[ax]) +
                            " is not divisible by cumulative stride " + std::to_string(s[ax]) + " at level " +
                            std::to_string(l));
      }
      e[ax] = input[ax] / s[ax];
    }
    out.push_back(e);
  }
  return out;
}

std::vector<Tensor> PyramidEncoder::forward(const Tensor& x) const {
  if (x.rank() != 4) throw DimensionError("pyramid: expected [C x D x H x W], got " + shape_str(x.shape()));
  level_extents({x.dim(1), x.dim(2), x.dim(3)});
  const std::size_t L = cfg_.levels;
  std::vector<Tensor> feats;
  Tensor h = x;
  for (std::size_t l = 0; l < L; ++l) {
    h = relu(apply(down_[l], h));
    for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
      const Tensor t = apply(blocks_[l][2 * b + 1], relu(apply(blocks_[l][2 * b], h)));
      h = relu(add(h, t));
    }
    feats.push_back(h);
  }
  std::vector<Tensor> out(L);
  for (std::size_t l = L; l-- > 0;) {
    Tensor p = apply(lateral_[l], feats[l]);
    if (l + 1 < L) p = add(p, upsample_nearest(out[l + 1], cfg_.stage_strides[l + 1]));
    if (input_skip_) p = add(p, apply(skip_[l], avg_pool(x, cfg_.cumulative_stride(l))));
    out[l] = p;
  }
  if (cfg_.neck_smooth) {
    for (std::size_t l = 0; l < L; ++l) out[l] = apply(smooth_[l], out[l]);
  }
  return out;
}

std::vector<Tensor> encode_radar(const Tensor& cube, const PyramidEncoder& enc) { return enc.forward(cube); }

std::vector<Tensor> encode_image(const Tensor& img, const PyramidEncoder& enc) {
  if (img.rank() != 3) throw DimensionError("encode_image: expected [3 x H x W], got " + shape_str(img.shape()));
  auto levels = enc.forward(reshape(img, {img.dim(0), 1, img.dim(1), img.dim(2)}));
  for (auto& t : levels) t = reshape(t, {t.dim(0), t.dim(2), t.dim(3)});
  return levels;
}

}  // namespace rxf
