#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rxf/encoders.hpp"
#include "rxf/geometry.hpp"
#include "rxf/params.hpp"
#include "rxf/preprocess.hpp"
#include "rxf/tensor.hpp"

namespace rxf {

struct ModelConfig {
  std::size_t num_queries = 64;
  /// Query lattice counts (range, elevation, azimuth); all zero picks a balanced factorization.
  std::array<std::size_t, 3> query_lattice{0, 0, 0};
  std::size_t heads = 4;
  std::size_t points = 4;
  std::size_t channels = 32;
  std::size_t ffn_hidden = 64;
  std::size_t n_iter = 4;
  std::size_t num_classes = 1;
  bool aux_loss = true;
  PyramidConfig radar_pyramid;
  PyramidConfig image_pyramid{3, 8, 32, 2, {{1, 1, 1}, {1, 2, 2}, {1, 2, 2}}, true};
  SphericalGrid grid;
  /// Predicted center offsets are multiplied by this (meters per unit).
  double center_scale = 1.0;
  /// Size prior (l, w, h) multiplied by exp(regression).
  std::array<double, 3> size_anchor{1.0, 1.0, 1.0};
  /// Radar input normalization: log1p on mean power and on the power spread,
  /// Doppler divided by doppler_scale. Off feeds the raw channels.
  bool log_input = true;
  double doppler_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t levels() const { return radar_pyramid.levels; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct QuerySet {
  Tensor features;  // [N x C]
  std::vector<SphericalPoint> ref_points;
};

/// Balanced factorization of n into (range, elevation, azimuth) counts.
std::array<std::size_t, 3> lattice_counts(std::size_t n);
/// Cell-centered lattice over the grid's spans, range-major order.
std::vector<SphericalPoint> query_lattice(const std::array<std::size_t, 3>& counts, const SphericalGrid& grid);
QuerySet init_queries(std::size_t n, const SphericalGrid& grid, const Tensor& embedding,
                      std::array<std::size_t, 3> counts = {0, 0, 0});

struct Linear {
  Tensor w;  // [in x out]
  Tensor b;  // [out]
  static Linear create(ParamStore& p, const std::string& name, std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const { return add_row(matmul(x, w), b); }
};

/// Two linear layers with a ReLU between.
struct Ffn {
  Linear l1, l2;
  static Ffn create(ParamStore& p, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out);
  Tensor operator()(const Tensor& x) const { return l2(relu(l1(x))); }
};

struct MhsaParams {
  std::size_t heads = 1;
  Linear q, k, v, o;
  static MhsaParams create(ParamStore& p, const std::string& name, std::size_t channels, std::size_t heads);
};

/// Multi-head self-attention among queries with a residual connection.
QuerySet self_attend(const QuerySet& q, const MhsaParams& params);

/// Per-modality deformable attention parameters. `value` holds one [C x C/M]
/// projection per head; `out` stacks the per-head output maps as [M*C/M x C].
struct MsdaParams {
  std::size_t heads = 1, levels = 1, points = 1, dims = 3;
  Linear offset;     // C -> M*L*K*dims
  Linear attention;  // C -> M*L*K
  std::vector<Tensor> value;
  Tensor out;
  static MsdaParams create(ParamStore& p, const std::string& name, std::size_t channels, std::size_t heads,
                           std::size_t levels, std::size_t points, std::size_t dims);
  std::size_t head_dim() const { return out.dim(0) / heads; }
};

/// Fused sampling stage of deformable attention. For each query q, head m,
/// level l and point k it samples level l at base[q*L + l] + offset(q,m,l,k)
/// (continuous cell index, offsets on the trailing `dims` axes) and sums the
/// samples weighted by weights(q,m,l,k) into row q, block m of an [N x M*C]
/// result. Levels are [C x S0 x S1 x S2]. Rows with mask = 0 stay zero.
Tensor deformable_aggregate(const std::vector<Tensor>& levels, const std::vector<std::array<double, 3>>& base,
                            const Tensor& offsets, const Tensor& weights, std::size_t heads, std::size_t points,
                            std::size_t dims, const std::vector<std::uint8_t>& mask);

/// Attention weights [N x M*L*K], softmax-normalized per head over (l, k).
Tensor msda_attention_weights(const Tensor& features, const MsdaParams& p);

/// Radar branch: trilinear deformable attention over [C x R_l x E_l x A_l] levels.
Tensor msda_3d(const QuerySet& q, const std::vector<Tensor>& pyramid, const MsdaParams& p, const SphericalGrid& grid);
/// Image branch: bilinear deformable attention over [C x H_l x W_l] levels.
/// Queries that do not project into the image receive zeros.
Tensor msda_2d(const QuerySet& q, const std::vector<Tensor>& pyramid, const CameraModel& cam, const MsdaParams& p);

struct FuserParams {
  Ffn ffn;       // 2C -> hidden -> 2C, residual
  Linear merge;  // 2C -> C
  static FuserParams create(ParamStore& p, const std::string& name, std::size_t channels, std::size_t hidden);
};

/// concat(f_R, f_I) -> residual FFN -> linear to C, added to the incoming query features.
Tensor fuse(const Tensor& f_radar, const Tensor& f_image, const Tensor& query, const FuserParams& p);

struct HeadParams {
  Ffn cls, center, size, angle;
  double center_scale = 1.0;
  std::array<double, 3> size_anchor{1, 1, 1};
  static HeadParams create(ParamStore& p, const std::string& name, std::size_t channels, std::size_t hidden,
                           std::size_t num_classes);
};

struct Detection {
  std::vector<double> class_logits;  // foreground classes, background last
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  double sin_yaw = 0, cos_yaw = 1;

  double yaw() const;
  std::vector<double> probabilities() const;
  /// Box with the most probable foreground class; score is its probability.
  Box3D box() const;
};

struct HeadOutput {
  Tensor logits;  // [N x (classes + 1)]
  Tensor center;  // [N x 3], meters
  Tensor size;    // [N x 3]
  Tensor angle;   // [N x 2], unit (sin, cos)
  std::vector<SphericalPoint> ref_points;

  std::vector<Detection> detections() const;
};

HeadOutput detect_head(const QuerySet& q, const HeadParams& p);

struct ForwardResult {
  std::vector<HeadOutput> iterations;
  std::vector<Detection> final_detections() const { return iterations.back().detections(); }
};

/// Encoders, fusion and head with their parameters.
class FusionModel {
 public:
  explicit FusionModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Tensor radar_input(const RadarCube3& cube) const;
  QuerySet initial_queries() const;
  ForwardResult forward(const RadarCube3& cube, const Tensor& image, const CameraModel& cam, std::size_t n_iter) const;
  ForwardResult forward(const RadarCube3& cube, const Tensor& image, const CameraModel& cam) const {
    return forward(cube, image, cam, cfg_.n_iter);
  }

  const PyramidEncoder& radar_encoder() const { return radar_enc_; }
  const PyramidEncoder& image_encoder() const { return image_enc_; }
  const MhsaParams& mhsa() const { return mhsa_; }
  const MsdaParams& msda_radar() const { return msda_radar_; }
  const MsdaParams& msda_image() const { return msda_image_; }
  const FuserParams& fuser() const { return fuser_; }
  const HeadParams& head() const { return head_; }
  const Tensor& query_embedding() const { return embedding_; }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  PyramidEncoder radar_enc_;
  PyramidEncoder image_enc_;
  Tensor embedding_;
  MhsaParams mhsa_;
  MsdaParams msda_radar_;
  MsdaParams msda_image_;
  FuserParams fuser_;
  HeadParams head_;
};

}  // namespace rxf
