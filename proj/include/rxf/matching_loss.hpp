#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rxf/fusion.hpp"
#include "rxf/geometry.hpp"
#include "rxf/io.hpp"
#include "rxf/tensor.hpp"

namespace rxf {

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt), sorted by pred
  std::vector<std::size_t> unmatched_preds;
};

/// Minimum-cost assignment of every column (gt) to a distinct row (prediction).
/// Throws ContractError when rows < columns or a cost is not finite.
Assignment hungarian(const Eigen::MatrixXd& cost);

struct FocalParams {
  double gamma = 2.0;
  /// Weight of foreground targets; background targets get 1 - alpha.
  /// A negative value disables balancing (weight 1 everywhere).
  double alpha = 0.25;
};

/// Softmax focal loss, mean over rows. targets[i] is a class index in
/// [0, K]; K (the last column) is background.
Tensor focal_loss(const Tensor& logits, const std::vector<std::size_t>& targets, const FocalParams& p = {});

/// Matching cost: alpha*(1 - p_gt)^gamma plus L1 center, size and (sin, cos) yaw terms.
double match_cost(const Detection& pred, const Box3D& gt, const FocalParams& p = {});
Eigen::MatrixXd cost_matrix(const std::vector<Detection>& preds, const std::vector<Box3D>& gts,
                            const FocalParams& p = {});

struct LossConfig {
  FocalParams focal;
  bool aux_loss = true;  // supervise every refinement iteration, not only the last
};

struct LossBreakdown {
  Tensor total;
  double cls = 0, center = 0, size = 0, angle = 0;
  std::vector<Assignment> assignments;  // one per supervised iteration
};

LossBreakdown total_loss(const std::vector<HeadOutput>& iterations, const std::vector<Box3D>& gts,
                         const LossConfig& cfg = {});

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay over a fixed parameter list.
class AdamW {
 public:
  AdamW(const NamedTensors& params, const AdamWConfig& cfg = {});
  /// Applies one update from the accumulated gradients; parameters without a
  /// gradient buffer are treated as having zero gradient.
  void step();
  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig cfg_;
  std::size_t t_ = 0;
};

}  // namespace rxf
