#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "rxf/eval.hpp"
#include "rxf/random.hpp"
#include "rxf/tensor.hpp"

using namespace rxf;

namespace {

Box3D box(double x, double y, double yaw = 0, double score = 1, int cls = 0) {
  Box3D b;
  b.center = {x, y, 0};
  b.size = {4, 2, 1.5};
  b.yaw = yaw;
  b.score = score;
  b.class_id = cls;
  return b;
}

std::vector<FrameBoxes> random_frames(Rng& rng, std::size_t n) {
  std::vector<FrameBoxes> frames(n);
  for (auto& f : frames) {
    const std::size_t g = rng.below(4);
    for (std::size_t i = 0; i < g; ++i) {
      Box3D b = box(rng.uniform(0, 40), rng.uniform(-10, 10), rng.uniform(-1, 1), 1, static_cast<int>(rng.below(2)));
      f.gts.push_back(b);
      if (rng.uniform(0, 1) < 0.8) {
        Box3D p = b;
        p.center += Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3));
        p.yaw += rng.uniform(-0.3, 0.3);
        p.score = rng.uniform(0.05, 1);
        f.preds.push_back(p);
      }
    }
    for (std::size_t i = rng.below(3); i > 0; --i)
      f.preds.push_back(box(rng.uniform(0, 40), rng.uniform(-10, 10), 0, rng.uniform(0, 0.6), static_cast<int>(rng.below(2))));
  }
  return frames;
}

}  // namespace

TEST_CASE("average precision examples") {
  const IouFn bev = iou_function(IouSpace::bev);
  CHECK(average_precision({box(10, 0)}, {box(10, 0)}, bev, 0.7) == 1.0);
  const std::vector<Box3D> none;
  CHECK(average_precision(none, {box(10, 0)}, bev, 0.5) == 0.0);
  CHECK(average_precision(none, none, bev, 0.5) == 1.0);
  CHECK(average_precision({box(10, 0)}, none, bev, 0.5) == 0.0);

  // ranks: 0.9 hit, 0.8 miss, 0.7 hit. PR points (1/2, 1), (1/2, 1/2), (1, 2/3).
  // Interpolated precision is 1 at recall 1/40..20/40 and 2/3 at 21/40..40/40.
  const std::vector<Box3D> gts{box(10, 0), box(20, 5)};
  const std::vector<Box3D> preds{box(10, 0, 0, 0.9), box(30, -5, 0, 0.8), box(20, 5, 0, 0.7)};
  const double expect = (20 * 1.0 + 20 * (2.0 / 3.0)) / 40.0;
  CHECK(std::abs(average_precision(preds, gts, bev, 0.5) - expect) < 1e-9);

  const ApResult r = average_precision({{preds, gts}}, 0, bev, 0.5);
  REQUIRE(r.curve.size() == 3);
  CHECK(r.curve[1].recall == 0.5);
  CHECK(r.curve[1].precision == 0.5);
  CHECK(std::abs(r.curve[2].precision - 2.0 / 3.0) < 1e-15);

  // classes are kept apart in the multi-frame form
  std::vector<Box3D> other = preds;
  for (auto& b : other) b.class_id = 1;
  CHECK(average_precision({{other, gts}}, 0, bev, 0.5).ap == 0.0);
  // a gt can be claimed only once: the duplicate is a false positive
  const std::vector<Box3D> dup{box(10, 0, 0, 0.9), box(10, 0, 0, 0.8)};
  CHECK(std::abs(average_precision(dup, {box(10, 0)}, bev, 0.5) - 1.0) < 1e-12);
  CHECK(std::abs(average_precision({box(10, 0, 0, 0.8), box(10, 0, 0, 0.9)}, {box(10, 0), box(50, 0)}, bev, 0.5) -
                 20.0 / 40.0) < 1e-12);
}

TEST_CASE("AP monotonicity and duplicates") {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto frames = random_frames(rng, 8);
    for (IouSpace s : {IouSpace::bev, IouSpace::box3d}) {
      const IouFn f = iou_function(s);
      for (int cls : {0, 1}) {
        double prev = 2;
        for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
          const double ap = average_precision(frames, cls, f, thr).ap;
          CHECK(ap >= 0);
          CHECK(ap <= 1);
          CHECK(ap <= prev + 1e-12);
          prev = ap;
        }
        auto doubled = frames;
        for (auto& fr : doubled) {
          const auto copy = fr.preds;
          for (auto b : copy) {
            b.score *= 0.999;
            fr.preds.push_back(b);
          }
        }
        CHECK(average_precision(doubled, cls, f, 0.5).ap <= average_precision(frames, cls, f, 0.5).ap + 1e-12);
      }
    }
  }
}

TEST_CASE("error metrics") {
  CHECK(rotation_error(0.3, 0.3 + std::numbers::pi) < 1e-12);
  CHECK(std::abs(rotation_error(0.0, std::numbers::pi / 2) - std::numbers::pi / 2) < 1e-12);
  CHECK(std::abs(rotation_error(0.1, 0.1 + 3 * std::numbers::pi / 4) - std::numbers::pi / 4) < 1e-12);
  CHECK(std::abs(rotation_error(-3.0, 3.0) - (2 * std::numbers::pi - 6.0)) < 1e-12);

  Box3D a = box(0, 0), b = box(0, 0);
  b.size = {2, 2, 1.5};
  CHECK(std::abs(scale_error(a, b) - 0.5) < 1e-12);
  b.center = {5, 5, 5};
  b.yaw = 1.0;
  CHECK(std::abs(scale_error(a, b) - 0.5) < 1e-12);

  const ErrorMetrics zero = error_metrics({{box(3, 4, 0.2), box(3, 4, 0.2)}});
  CHECK(zero.translation_3d == 0.0);
  CHECK(zero.rotation == 0.0);
  CHECK(zero.scale < 1e-12);

  Box3D p = box(10, 1, 0.5), g = box(10.3, 1.4, 0.5 + std::numbers::pi);
  p.size = {4.2, 2.1, 1.5};
  const ErrorMetrics e = error_metrics({{p, g}});
  CHECK(e.pairs == 1);
  CHECK(std::abs(e.translation_bev - 0.5) < 1e-12);
  CHECK(std::abs(e.translation_3d - 0.5) < 1e-12);
  CHECK(std::abs(e.center[0] - 0.3) < 1e-12);
  CHECK(std::abs(e.center[1] - 0.4) < 1e-12);
  CHECK(e.center[2] == 0.0);
  CHECK(std::abs(e.size[0] - 0.1) < 1e-12);  // width
  CHECK(std::abs(e.size[1] - 0.2) < 1e-12);  // length
  CHECK(e.size[2] == 0.0);
  CHECK(e.rotation < 1e-12);
  CHECK(std::abs(e.scale - (1 - (4 * 2 * 1.5) / (4.2 * 2.1 * 1.5))) < 1e-12);

  const ErrorMetrics two = error_metrics({{p, g}, {box(0, 0, 0), box(0, 0, std::numbers::pi / 2)}});
  CHECK(std::abs(two.rotation - std::numbers::pi / 4) < 1e-12);
  CHECK(std::abs(two.orientation_deg - 45.0) < 1e-9);
  CHECK(std::abs(two.translation_bev - 0.25) < 1e-12);
  CHECK(error_metrics({}).pairs == 0);
}

TEST_CASE("error matching") {
  FrameBoxes f;
  f.gts = {box(10, 0), box(20, 0, 0, 1, 1)};
  f.preds = {box(10.2, 0, 0, 0.9), box(10.1, 0, 0, 0.95), box(20, 0, 0, 0.8, 0), box(40, 0, 0, 0.99)};
  const auto pairs = match_for_errors({f}, 0.3);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].first.score == 0.95);
}

TEST_CASE("self-evaluation is perfect") {
  Rng rng(3);
  auto frames = random_frames(rng, 12);
  for (auto& f : frames) {
    f.preds = f.gts;
    for (auto& b : f.preds) b.score = rng.uniform(0.2, 1);
  }
  const EvalReport r = evaluate(frames);
  CHECK(r.map.size() == 8);
  for (const auto& m : r.map) CHECK(m.map == 1.0);
  for (const auto& a : r.ap) CHECK(a.ap == 1.0);
  CHECK(r.errors.pairs == r.ground_truth);
  CHECK(r.errors.translation_3d == 0.0);
  CHECK(r.errors.translation_bev == 0.0);
  CHECK(r.errors.rotation == 0.0);
  CHECK(r.errors.orientation_deg == 0.0);
  CHECK(r.errors.scale < 1e-12);
  for (int k = 0; k < 3; ++k) {
    CHECK(r.errors.center[k] == 0.0);
    CHECK(r.errors.size[k] == 0.0);
  }
  CHECK(r.mean_ap(IouSpace::bev, 0.7) == 1.0);
  CHECK_THROWS_AS(r.mean_ap(IouSpace::bev, 0.6), ContractError);

  const nlohmann::json j = r;
  CHECK(j.at("map").size() == 8);
  std::ostringstream csv;
  write_csv(csv, r);
  CHECK(csv.str().find("map") != std::string::npos);
}
