#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "rxf/params.hpp"
#include "rxf/tensor.hpp"

namespace rxf {

using Extent3 = std::array<std::size_t, 3>;

/// Multi-scale convolutional pyramid: stem + residual stages (backbone) and a
/// top-down neck that brings every level to `out_channels`.
struct PyramidConfig {
  std::size_t levels = 3;
  std::size_t base_channels = 8;   // backbone width at level 0, doubled per level
  std::size_t out_channels = 32;   // neck width shared by all levels
  std::size_t blocks_per_stage = 2;
  /// Per-level downsample factor on each spatial axis; entry 0 applies to the stem.
  std::vector<Extent3> stage_strides{{1, 1, 1}, {2, 2, 2}, {2, 2, 2}};
  bool neck_smooth = true;  // 3x3 conv after each top-down merge

  void validate() const;
  Extent3 cumulative_stride(std::size_t level) const;
  std::size_t backbone_width(std::size_t level) const { return base_channels << level; }
};

void to_json(nlohmann::json& j, const PyramidConfig& c);
void from_json(const nlohmann::json& j, PyramidConfig& c);

/// One pyramid encoder. Volumes are [C x D x H x W]; 2D inputs use D = 1 and
/// kernels of depth 1.
class PyramidEncoder {
 public:
  PyramidEncoder(const PyramidConfig& cfg, std::size_t in_channels, bool planar, bool input_skip,
                 ParamStore& params, const std::string& prefix);

  /// Throws ContractError when extents are not divisible by the cumulative strides.
  std::vector<Extent3> level_extents(const Extent3& input) const;
  std::vector<Tensor> forward(const Tensor& x) const;
  const PyramidConfig& config() const { return cfg_; }

 private:
  struct Conv {
    Tensor w, b;
    Conv3dSpec spec;
  };
  Conv make_conv(ParamStore& params, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                 const Extent3& stride) const;
  static Tensor apply(const Conv& c, const Tensor& x) { return conv3d(x, c.w, c.b, c.spec); }

  PyramidConfig cfg_;
  bool planar_;
  bool input_skip_;
  std::vector<Conv> down_;                 // stem / stage entry, one per level
  std::vector<std::vector<Conv>> blocks_;  // two convs per residual block
  std::vector<Conv> lateral_;
  std::vector<Conv> skip_;
  std::vector<Conv> smooth_;
};

/// Radar pyramid over a channel-first [3 x R x E x A] cube.
std::vector<Tensor> encode_radar(const Tensor& cube, const PyramidEncoder& enc);
/// Image pyramid over [3 x H x W]; levels come back as [C x H_l x W_l].
std::vector<Tensor> encode_image(const Tensor& img, const PyramidEncoder& enc);

}  // namespace rxf
