#include "rxf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <set>

#include "rxf/tensor.hpp"

namespace rxf {

std::string to_string(IouSpace s) { return s == IouSpace::bev ? "bev" : "3d"; }

IouFn iou_function(IouSpace s) {
  if (s == IouSpace::bev) return [](const Box3D& a, const Box3D& b) { return iou_bev(a, b); };
  return [](const Box3D& a, const Box3D& b) { return iou_3d(a, b); };
}

namespace {

constexpr int kRecallPositions = 40;

struct Ranked {
  double score;
  std::size_t frame, index;
};

double interpolated_ap(const std::vector<PrPoint>& curve) {
  // Precision envelope: max precision at recall >= r.
  double sum = 0;
  for (int i = 1; i <= kRecallPositions; ++i) {
    const double r = static_cast<double>(i) / kRecallPositions;
    double best = 0;
    for (const auto& p : curve)
      if (p.recall >= r - 1e-12) best = std::max(best, p.precision);
    sum += best;
  }
  return sum / kRecallPositions;
}

}  // namespace

ApResult average_precision(const std::vector<FrameBoxes>& frames, int class_id, const IouFn& iou, double threshold) {
  std::vector<Ranked> ranked;
  std::size_t total_gts = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < frames[f].preds.size(); ++i) {
      const Box3D& b = frames[f].preds[i];
      if (b.class_id != class_id) continue;
      if (!(b.score >= 0 && b.score <= 1)) throw ContractError("average_precision: scores must lie in [0, 1]");
      ranked.push_back({b.score, f, i});
    }
    for (const auto& g : frames[f].gts) total_gts += g.class_id == class_id ? 1 : 0;
  }
  ApResult out;
  if (total_gts == 0) {
    out.ap = ranked.empty() ? 1.0 : 0.0;
    return out;
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
  std::vector<std::vector<char>> claimed(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) claimed[f].assign(frames[f].gts.size(), 0);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const auto& r = ranked[k];
    const Box3D& p = frames[r.frame].preds[r.index];
    double best = -1;
    std::size_t best_j = 0;
    const auto& gts = frames[r.frame].gts;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (claimed[r.frame][j] || gts[j].class_id != class_id) continue;
      const double v = iou(p, gts[j]);
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    if (best >= threshold) {
      claimed[r.frame][best_j] = 1;
      ++tp;
    }
    out.curve.push_back({static_cast<double>(tp) / static_cast<double>(total_gts),
                         static_cast<double>(tp) / static_cast<double>(k + 1)});
  }
  out.ap = interpolated_ap(out.curve);
  return out;
}

double average_precision(const std::vector<Box3D>& preds, const std::vector<Box3D>& gts, const IouFn& iou,
                         double threshold) {
  FrameBoxes f{preds, gts};
  for (auto& b : f.preds) b.class_id = 0;
  for (auto& b : f.gts) b.class_id = 0;
  return average_precision({f}, 0, iou, threshold).ap;
}

double rotation_error(double yaw_a, double yaw_b) {
  const double d = std::fmod(std::abs(wrap_angle(yaw_a - yaw_b)), std::numbers::pi);
  return std::min(d, std::numbers::pi - d);
}

double scale_error(const Box3D& a, const Box3D& b) {
  double inter = 1;
  for (int k = 0; k < 3; ++k) inter *= std::min(a.size[k], b.size[k]);
  const double uni = a.size.prod() + b.size.prod() - inter;
  return uni > 0 ? 1.0 - inter / uni : 0.0;
}

ErrorMetrics error_metrics(const std::vector<BoxPair>& pairs) {
  ErrorMetrics e;
  e.pairs = pairs.size();
  if (pairs.empty()) return e;
  for (const auto& [p, g] : pairs) {
    const Eigen::Vector3d d = (p.center - g.center).cwiseAbs();
    for (int k = 0; k < 3; ++k) e.center[static_cast<std::size_t>(k)] += d[k];
    e.size[0] += std::abs(p.size[1] - g.size[1]);
    e.size[1] += std::abs(p.size[0] - g.size[0]);
    e.size[2] += std::abs(p.size[2] - g.size[2]);
    e.rotation += rotation_error(p.yaw, g.yaw);
    e.translation_bev += std::hypot(d[0], d[1]);
    e.translation_3d += d.norm();
    e.scale += scale_error(p, g);
  }
  const double n = static_cast<double>(pairs.size());
  for (auto& v : e.center) v /= n;
  for (auto& v : e.size) v /= n;
  e.rotation /= n;
  e.translation_bev /= n;
  e.translation_3d /= n;
  e.scale /= n;
  e.orientation_deg = e.rotation * 180.0 / std::numbers::pi;
  return e;
}

std::vector<BoxPair> match_for_errors(const std::vector<FrameBoxes>& frames, double threshold) {
  std::vector<BoxPair> out;
  for (const auto& f : frames) {
    std::vector<std::size_t> order(f.preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return f.preds[a].score > f.preds[b].score; });
    std::vector<char> claimed(f.gts.size(), 0);
    for (std::size_t i : order) {
      double best = -1;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < f.gts.size(); ++j) {
        if (claimed[j] || f.gts[j].class_id != f.preds[i].class_id) continue;
        const double v = iou_3d(f.preds[i], f.gts[j]);
        if (v > best) {
          best = v;
          best_j = j;
        }
      }
      if (best >= threshold) {
        claimed[best_j] = 1;
        out.emplace_back(f.preds[i], f.gts[best_j]);
      }
    }
  }
  return out;
}

double EvalReport::mean_ap(IouSpace space, double threshold) const {
  for (const auto& m : map)
    if (m.space == space && std::abs(m.threshold - threshold) < 1e-12) return m.map;
  throw ContractError("EvalReport: no mAP at " + to_string(space) + " IoU " + std::to_string(threshold));
}

EvalReport evaluate(const std::vector<FrameBoxes>& frames, const EvalConfig& cfg) {
  EvalReport r;
  r.frames = frames.size();
  std::set<int> classes;
  for (const auto& f : frames) {
    r.predictions += f.preds.size();
    r.ground_truth += f.gts.size();
    for (const auto& b : f.preds) classes.insert(b.class_id);
    for (const auto& b : f.gts) classes.insert(b.class_id);
  }
  r.classes.assign(classes.begin(), classes.end());
  for (IouSpace space : {IouSpace::bev, IouSpace::box3d}) {
    const auto fn = iou_function(space);
    for (double t : cfg.thresholds) {
      double sum = 0;
      for (int c : r.classes) {
        const double ap = average_precision(frames, c, fn, t).ap;
        r.ap.push_back({space, t, c, ap});
        sum += ap;
      }
      r.map.push_back({space, t, r.classes.empty() ? 1.0 : sum / static_cast<double>(r.classes.size())});
    }
  }
  r.errors = error_metrics(match_for_errors(frames, cfg.error_iou));
  return r;
}

void to_json(nlohmann::json& j, const ErrorMetrics& e) {
  j = {{"pairs", e.pairs},
       {"center_error_m", {{"x", e.center[0]}, {"y", e.center[1]}, {"z", e.center[2]}}},
       {"size_error_m", {{"w", e.size[0]}, {"l", e.size[1]}, {"h", e.size[2]}}},
       {"rotation_error_rad", e.rotation},
       {"translation_error_bev_m", e.translation_bev},
       {"translation_error_3d_m", e.translation_3d},
       {"scale_error", e.scale},
       {"orientation_error_deg", e.orientation_deg}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json ap = nlohmann::json::array(), map = nlohmann::json::array();
  for (const auto& a : r.ap) ap.push_back({{"space", to_string(a.space)}, {"iou", a.threshold}, {"class_id", a.class_id}, {"ap", a.ap}});
  for (const auto& m : r.map) map.push_back({{"space", to_string(m.space)}, {"iou", m.threshold}, {"map", m.map}});
  j = {{"frames", r.frames},         {"predictions", r.predictions}, {"ground_truth", r.ground_truth},
       {"classes", r.classes},       {"ap", ap},                     {"map", map},
       {"errors", r.errors}};
}

void write_csv(std::ostream& os, const EvalReport& r) {
  os << "section,space,iou,class,metric,value\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& a : r.ap)
    os << "ap," << to_string(a.space) << ',' << num(a.threshold) << ',' << a.class_id << ",ap," << num(a.ap) << '\n';
  for (const auto& m : r.map) os << "map," << to_string(m.space) << ',' << num(m.threshold) << ",all,map," << num(m.map) << '\n';
  const auto& e = r.errors;
  const std::pair<const char*, double> rows[] = {
      {"center_x_m", e.center[0]},        {"center_y_m", e.center[1]},         {"center_z_m", e.center[2]},
      {"size_w_m", e.size[0]},            {"size_l_m", e.size[1]},             {"size_h_m", e.size[2]},
      {"rotation_rad", e.rotation},       {"translation_bev_m", e.translation_bev},
      {"translation_3d_m", e.translation_3d}, {"scale", e.scale},             {"orientation_deg", e.orientation_deg}};
  for (const auto& [name, v] : rows) os << "error,,,all," << name << ',' << num(v) << '\n';
}

}  // namespace rxf
