#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "rxf/geometry.hpp"

namespace rxf {

using IouFn = std::function<double(const Box3D&, const Box3D&)>;

enum class IouSpace { bev, box3d };
std::string to_string(IouSpace s);
IouFn iou_function(IouSpace s);

/// Predictions and ground truth of one frame.
struct FrameBoxes {
  std::vector<Box3D> preds;
  std::vector<Box3D> gts;
};

struct PrPoint {
  double recall = 0, precision = 0;
};

struct ApResult {
  double ap = 0;
  std::vector<PrPoint> curve;  // one point per ranked prediction
};

/// 40-point interpolated AP over frames for one class. Predictions are ranked
/// by score across all frames; each takes the highest-IoU unclaimed gt of its
/// frame and is a true positive iff that IoU >= threshold.
ApResult average_precision(const std::vector<FrameBoxes>& frames, int class_id, const IouFn& iou, double threshold);
/// Single-frame convenience form; class ids are ignored.
double average_precision(const std::vector<Box3D>& preds, const std::vector<Box3D>& gts, const IouFn& iou,
                         double threshold);

struct ErrorMetrics {
  std::size_t pairs = 0;
  std::array<double, 3> center{0, 0, 0};  // |dx|, |dy|, |dz| in meters
  std::array<double, 3> size{0, 0, 0};    // |dw|, |dl|, |dh| in meters
  double rotation = 0;                     // radians, symmetric under yaw + pi
  double translation_bev = 0;
  double translation_3d = 0;
  double scale = 0;  // 1 - IoU of size-aligned boxes
  double orientation_deg = 0;
};

/// Symmetric yaw difference in [0, pi/2].
double rotation_error(double yaw_a, double yaw_b);
/// 1 - IoU of two boxes sharing center and heading.
double scale_error(const Box3D& a, const Box3D& b);

using BoxPair = std::pair<Box3D, Box3D>;  // (prediction, ground truth)
ErrorMetrics error_metrics(const std::vector<BoxPair>& pairs);
/// Greedy same-class matching by descending score at 3D IoU >= threshold.
std::vector<BoxPair> match_for_errors(const std::vector<FrameBoxes>& frames, double threshold);

struct ApEntry {
  IouSpace space = IouSpace::box3d;
  double threshold = 0;
  int class_id = 0;
  double ap = 0;
};

struct MapEntry {
  IouSpace space = IouSpace::box3d;
  double threshold = 0;
  double map = 0;
};

struct EvalConfig {
  std::vector<double> thresholds{0.3, 0.4, 0.5, 0.7};
  double error_iou = 0.3;
};

struct EvalReport {
  std::size_t frames = 0, predictions = 0, ground_truth = 0;
  std::vector<int> classes;
  std::vector<ApEntry> ap;
  std::vector<MapEntry> map;
  ErrorMetrics errors;

  /// mAP at (space, threshold); throws ContractError if it was not computed.
  double mean_ap(IouSpace space, double threshold) const;
};

EvalReport evaluate(const std::vector<FrameBoxes>& frames, const EvalConfig& cfg = {});

void to_json(nlohmann::json& j, const ErrorMetrics& e);
void to_json(nlohmann::json& j, const EvalReport& r);
/// Rows of (section, space, iou, class, metric, value).
void write_csv(std::ostream& os, const EvalReport& r);

}  // namespace rxf
