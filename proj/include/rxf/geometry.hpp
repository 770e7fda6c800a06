#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace rxf {

// Radar frame: x forward, y left, z up (meters). Azimuth is positive toward +y,
// elevation positive toward +z.

struct SphericalPoint {
  double range = 0;
  double elevation = 0;
  double azimuth = 0;
};

struct Span {
  double lo = 0;
  double hi = 0;
  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Spatial extent of the radar cube. Bin centers are evenly spaced and
/// include both span endpoints.
struct SphericalGrid {
  Span range{0.0, 80.0};
  Span elevation{-0.2617993877991494, 0.2617993877991494};
  Span azimuth{-1.0471975511965976, 1.0471975511965976};
  std::size_t range_bins = 64;
  std::size_t elevation_bins = 16;
  std::size_t azimuth_bins = 64;

  void validate() const;
  std::vector<double> range_axis() const;
  std::vector<double> elevation_axis() const;
  std::vector<double> azimuth_axis() const;
  bool contains(const SphericalPoint& p) const;
  SphericalPoint clamp(const SphericalPoint& p) const;
  /// Affine map from the physical spans onto [0,1]^3, ordered (range, elevation, azimuth).
  std::array<double, 3> normalize(const SphericalPoint& p) const;
  SphericalPoint denormalize(const std::array<double, 3>& u) const;
};

/// Evenly spaced centers over [lo, hi] including both ends; n = 1 gives the midpoint.
std::vector<double> linspace_centers(const Span& s, std::size_t n);

Eigen::Vector3d spherical_to_cartesian(const SphericalPoint& p);
SphericalPoint cartesian_to_spherical(const Eigen::Vector3d& x);

/// Pinhole camera with a rigid radar-to-camera transform. Camera frame is
/// x right, y down, z along the optical axis; pixel (u, v) = (column, row)
/// with pixel centers at integer coordinates.
struct CameraModel {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  std::size_t height = 1;
  std::size_t width = 1;

  void validate() const;
  /// Camera colocated with the radar, looking along +x, with the given
  /// horizontal field of view and a centered principal point.
  static CameraModel colocated(std::size_t height, std::size_t width, double horizontal_fov);
};

struct Projection {
  double u = 0;
  double v = 0;
  bool valid = false;
};

Projection project_to_image(const Eigen::Vector3d& p, const CameraModel& cam);

/// Maps a pixel position to normalized (row, column) coordinates in [0,1]^2.
std::array<double, 2> normalize_pixel(const Projection& px, const CameraModel& cam);

struct Box3D {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();  // (l, w, h)
  double yaw = 0;
  int class_id = 0;
  double score = 1.0;

  void validate() const;
};

using Polygon2 = std::vector<Eigen::Vector2d>;

/// Counter-clockwise footprint corners of a yaw-rotated box.
Polygon2 footprint(const Box3D& b);
double polygon_area(const Polygon2& poly);
/// Sutherland-Hodgman clip of `subject` against the convex CCW polygon `clip`.
Polygon2 clip_polygon(const Polygon2& subject, const Polygon2& clip);

double bev_intersection(const Box3D& a, const Box3D& b);
double iou_bev(const Box3D& a, const Box3D& b);
double iou_3d(const Box3D& a, const Box3D& b);

/// True if the point lies inside the box (yaw about z).
bool box_contains(const Box3D& b, const Eigen::Vector3d& p);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

void to_json(nlohmann::json& j, const SphericalGrid& g);
void from_json(const nlohmann::json& j, SphericalGrid& g);
void to_json(nlohmann::json& j, const CameraModel& c);
void from_json(const nlohmann::json& j, CameraModel& c);
void to_json(nlohmann::json& j, const Box3D& b);
void from_json(const nlohmann::json& j, Box3D& b);

}  // namespace rxf
