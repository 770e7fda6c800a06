#pragma once

#include <vector>

#include "rxf/fusion.hpp"
#include "support.hpp"

namespace rxf::testing {

inline std::vector<Tensor> param_list(const ParamStore& ps) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : ps.all()) out.push_back(t);
  return out;
}

// Smallest model that still exercises every stage.
inline ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig c;
  c.num_queries = 2;
  c.query_lattice = {2, 1, 1};
  c.heads = 2;
  c.points = 1;
  c.channels = 4;
  c.ffn_hidden = 4;
  c.n_iter = 2;
  c.radar_pyramid = {2, 2, 4, 1, {{1, 1, 1}, {2, 2, 2}}, false};
  c.image_pyramid = {2, 2, 4, 1, {{1, 1, 1}, {1, 2, 2}}, false};
  c.grid.range = {2, 20};
  c.grid.range_bins = 4;
  c.grid.elevation_bins = 2;
  c.grid.azimuth_bins = 4;
  c.seed = seed;
  return c;
}

struct Inputs {
  RadarCube3 cube;
  Tensor image;
  CameraModel cam = CameraModel::colocated(4, 8, 1.6);
  std::vector<Box3D> gts;
};

inline Inputs tiny_inputs(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  Inputs in;
  in.cube.channels = random_tensor(rng, {c.grid.range_bins, c.grid.elevation_bins, c.grid.azimuth_bins, 3}, 0, 3);
  in.image = random_tensor(rng, {3, 4, 8}, 0, 1);
  Box3D b;
  b.center = {10, 1, 0};
  b.size = {4, 1.8, 1.6};
  b.yaw = 0.3;
  in.gts = {b};
  return in;
}

// The refinement loop spelled out with caller-supplied reference points per iteration.
inline std::vector<HeadOutput> manual_pipeline(const FusionModel& model, const Inputs& in,
                                               const std::vector<std::vector<SphericalPoint>>& refs) {
  const auto rp = encode_radar(model.radar_input(in.cube), model.radar_encoder());
  const auto ip = encode_image(in.image, model.image_encoder());
  QuerySet q = model.initial_queries();
  std::vector<HeadOutput> out;
  for (const auto& r : refs) {
    q.ref_points = r;
    const QuerySet a = self_attend(q, model.mhsa());
    const Tensor fr = msda_3d(a, rp, model.msda_radar(), model.config().grid);
    const Tensor fi = msda_2d(a, ip, in.cam, model.msda_image());
    const QuerySet fused{fuse(fr, fi, a.features, model.fuser()), r};
    out.push_back(detect_head(fused, model.head()));
    q.features = fused.features;
  }
  return out;
}

}  // namespace rxf::testing
