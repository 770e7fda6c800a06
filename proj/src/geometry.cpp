#include "rxf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rxf/tensor.hpp"

namespace rxf {

namespace {

constexpr double kDegenerateArea = 1e-12;

double normalize_in(const Span& s, double v) { return s.width() > 0 ? (v - s.lo) / s.width() : 0.5; }

}  // namespace

std::vector<double> linspace_centers(const Span& s, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = s.mid();
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = s.lo + s.width() * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  out.back() = s.hi;
  return out;
}

void SphericalGrid::validate() const {
  if (!(range.width() > 0) || !(elevation.width() > 0) || !(azimuth.width() > 0)) {
    throw ContractError("SphericalGrid: degenerate span");
  }
  if (range.lo < 0) throw ContractError("SphericalGrid: negative range");
  if (range_bins < 1 || elevation_bins < 1 || azimuth_bins < 1) {
    throw ContractError("SphericalGrid: extents must be >= 1");
  }
}

std::vector<double> SphericalGrid::range_axis() const { return linspace_centers(range, range_bins); }
std::vector<double> SphericalGrid::elevation_axis() const { return linspace_centers(elevation, elevation_bins); }
std::vector<double> SphericalGrid::azimuth_axis() const { return linspace_centers(azimuth, azimuth_bins); }

bool SphericalGrid::contains(const SphericalPoint& p) const {
  return range.contains(p.range) && elevation.contains(p.elevation) && azimuth.contains(p.azimuth);
}

SphericalPoint SphericalGrid::clamp(const SphericalPoint& p) const {
  return {std::clamp(p.range, range.lo, range.hi), std::clamp(p.elevation, elevation.lo, elevation.hi),
          std::clamp(p.azimuth, azimuth.lo, azimuth.hi)};
}

std::array<double, 3> SphericalGrid::normalize(const SphericalPoint& p) const {
  return {normalize_in(range, p.range), normalize_in(elevation, p.elevation), normalize_in(azimuth, p.azimuth)};
}

SphericalPoint SphericalGrid::denormalize(const std::array<double, 3>& u) const {
  return {range.lo + u[0] * range.width(), elevation.lo + u[1] * elevation.width(),
          azimuth.lo + u[2] * azimuth.width()};
}

Eigen::Vector3d spherical_to_cartesian(const SphericalPoint& p) {
  const double ce = std::cos(p.elevation);
  return {p.range * ce * std::cos(p.azimuth), p.range * ce * std::sin(p.azimuth), p.range * std::sin(p.elevation)};
}

SphericalPoint cartesian_to_spherical(const Eigen::Vector3d& x) {
  const double rho = std::hypot(x.x(), x.y());
  return {x.norm(), std::atan2(x.z(), rho), std::atan2(x.y(), x.x())};
}

void CameraModel::validate() const {
  if (!(intrinsics(0, 0) > 0) || !(intrinsics(1, 1) > 0)) throw ContractError("CameraModel: focal lengths must be positive");
  if ((rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
    throw ContractError("CameraModel: rotation is not orthonormal");
  }
  if (height == 0 || width == 0) throw ContractError("CameraModel: empty image");
}

CameraModel CameraModel::colocated(std::size_t height, std::size_t width, double horizontal_fov) {
  CameraModel cam;
  cam.height = height;
  cam.width = width;
  const double f = 0.5 * static_cast<double>(width) / std::tan(0.5 * horizontal_fov);
  cam.intrinsics << f, 0, 0.5 * (static_cast<double>(width) - 1.0), 0, f, 0.5 * (static_cast<double>(height) - 1.0), 0,
      0, 1;
  // radar (fwd, left, up) -> camera (right, down, fwd)
  cam.rotation << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  return cam;
}

Projection project_to_image(const Eigen::Vector3d& p, const CameraModel& cam) {
  const Eigen::Vector3d pc = cam.rotation * p + cam.translation;
  if (pc.z() <= 1e-9) return {0, 0, false};
  const Eigen::Vector3d h = cam.intrinsics * pc;
  Projection out{h.x() / h.z(), h.y() / h.z(), true};
  out.valid = out.u >= -0.5 && out.u < static_cast<double>(cam.width) - 0.5 && out.v >= -0.5 &&
              out.v < static_cast<double>(cam.height) - 0.5;
  return out;
}

std::array<double, 2> normalize_pixel(const Projection& px, const CameraModel& cam) {
  auto norm = [](double x, std::size_t n) { return n > 1 ? x / static_cast<double>(n - 1) : 0.5; };
  return {norm(px.v, cam.height), norm(px.u, cam.width)};
}

void Box3D::validate() const {
  if (!(size.minCoeff() > 0)) throw ContractError("Box3D: size must be positive");
  if (!(score >= 0 && score <= 1)) throw ContractError("Box3D: score outside [0,1]");
}

Polygon2 footprint(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.size.x(), hw = 0.5 * b.size.y();
  const Eigen::Vector2d ctr(b.center.x(), b.center.y());
  const Eigen::Vector2d ax(c, s), ay(-s, c);
  return {ctr + hl * ax - hw * ay, ctr + hl * ax + hw * ay, ctr - hl * ax + hw * ay, ctr - hl * ax - hw * ay};
}

double polygon_area(const Polygon2& poly) {
  double a = 0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(a);
}

Polygon2 clip_polygon(const Polygon2& subject, const Polygon2& clip) {
  Polygon2 out = subject;
  for (std::size_t i = 0, n = clip.size(); i < n && !out.empty(); ++i) {
    const Eigen::Vector2d a = clip[i], b = clip[(i + 1) % n];
    const Eigen::Vector2d edge = b - a;
    auto side = [&](const Eigen::Vector2d& p) { return edge.x() * (p.y() - a.y()) - edge.y() * (p.x() - a.x()); };
    Polygon2 input;
    input.swap(out);
    for (std::size_t j = 0, m = input.size(); j < m; ++j) {
      const auto& cur = input[j];
      const auto& prev = input[(j + m - 1) % m];
      const double sc = side(cur), sp = side(prev);
      if (sc >= 0) {
        if (sp < 0) out.push_back(prev + (cur - prev) * (sp / (sp - sc)));
        out.push_back(cur);
      } else if (sp >= 0) {
        out.push_back(prev + (cur - prev) * (sp / (sp - sc)));
      }
    }
  }
  return out;
}

double bev_intersection(const Box3D& a, const Box3D& b) {
  const auto poly = clip_polygon(footprint(a), footprint(b));
  if (poly.size() < 3) return 0.0;
  const double area = polygon_area(poly);
  return area < kDegenerateArea ? 0.0 : area;
}

double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection(a, b);
  const double ua = a.size.x() * a.size.y() + b.size.x() * b.size.y() - inter;
  return ua > 0 ? std::clamp(inter / ua, 0.0, 1.0) : 0.0;
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double zlo = std::max(a.center.z() - 0.5 * a.size.z(), b.center.z() - 0.5 * b.size.z());
  const double zhi = std::min(a.center.z() + 0.5 * a.size.z(), b.center.z() + 0.5 * b.size.z());
  if (zhi <= zlo) return 0.0;
  const double inter = bev_intersection(a, b) * (zhi - zlo);
  const double uv = a.size.prod() + b.size.prod() - inter;
  return uv > 0 ? std::clamp(inter / uv, 0.0, 1.0) : 0.0;
}

bool box_contains(const Box3D& b, const Eigen::Vector3d& p) {
  const Eigen::Vector3d d = p - b.center;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) <= 0.5 * b.size.x() && std::abs(ly) <= 0.5 * b.size.y() && std::abs(d.z()) <= 0.5 * b.size.z();
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2 * pi);
  if (a <= 0) a += 2 * pi;
  return a - pi;
}

// ---- JSON ------------------------------------------------------------------

void to_json(nlohmann::json& j, const SphericalGrid& g) {
  j = {{"range_m", {g.range.lo, g.range.hi}},
       {"elevation_rad", {g.elevation.lo, g.elevation.hi}},
       {"azimuth_rad", {g.azimuth.lo, g.azimuth.hi}},
       {"extents", {g.range_bins, g.elevation_bins, g.azimuth_bins}}};
}

void from_json(const nlohmann::json& j, SphericalGrid& g) {
  auto span = [&](const char* key) { return Span{j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()}; };
  g.range = span("range_m");
  g.elevation = span("elevation_rad");
  g.azimuth = span("azimuth_rad");
  g.range_bins = j.at("extents").at(0).get<std::size_t>();
  g.elevation_bins = j.at("extents").at(1).get<std::size_t>();
  g.azimuth_bins = j.at("extents").at(2).get<std::size_t>();
  g.validate();
}

void to_json(nlohmann::json& j, const CameraModel& c) {
  std::vector<double> k(9);
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) k[static_cast<std::size_t>(r * 3 + col)] = c.intrinsics(r, col);
  const Eigen::Quaterniond q(c.rotation);
  j = {{"intrinsics", k},
       {"rotation_quaternion_wxyz", {q.w(), q.x(), q.y(), q.z()}},
       {"translation_m", {c.translation.x(), c.translation.y(), c.translation.z()}},
       {"image_size_hw", {c.height, c.width}}};
}

void from_json(const nlohmann::json& j, CameraModel& c) {
  const auto k = j.at("intrinsics").get<std::vector<double>>();
  if (k.size() != 9) throw ContractError("calibration: intrinsics must have 9 entries");
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) c.intrinsics(r, col) = k[static_cast<std::size_t>(r * 3 + col)];
  const auto q = j.at("rotation_quaternion_wxyz").get<std::vector<double>>();
  c.rotation = Eigen::Quaterniond(q.at(0), q.at(1), q.at(2), q.at(3)).normalized().toRotationMatrix();
  const auto t = j.at("translation_m").get<std::vector<double>>();
  c.translation = Eigen::Vector3d(t.at(0), t.at(1), t.at(2));
  c.height = j.at("image_size_hw").at(0).get<std::size_t>();
  c.width = j.at("image_size_hw").at(1).get<std::size_t>();
  c.validate();
}

void to_json(nlohmann::json& j, const Box3D& b) {
  j = {{"class_id", b.class_id},
       {"score", b.score},
       {"center", {b.center.x(), b.center.y(), b.center.z()}},
       {"size", {b.size.x(), b.size.y(), b.size.z()}},
       {"yaw", b.yaw}};
}

void from_json(const nlohmann::json& j, Box3D& b) {
  b.class_id = j.at("class_id").get<int>();
  b.score = j.value("score", 1.0);
  const auto c = j.at("center").get<std::vector<double>>();
  const auto s = j.at("size").get<std::vector<double>>();
  b.center = Eigen::Vector3d(c.at(0), c.at(1), c.at(2));
  b.size = Eigen::Vector3d(s.at(0), s.at(1), s.at(2));
  b.yaw = j.at("yaw").get<double>();
  b.validate();
}

}  // namespace rxf
