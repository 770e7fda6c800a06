#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rxf/geometry.hpp"
#include "rxf/tensor.hpp"

namespace rxf {

/// Spatial grid plus the Doppler axis of a 4D spectrum.
struct SpectrumGrid {
  SphericalGrid spatial;
  Span doppler{-15.0, 15.0};  // m/s
  std::size_t doppler_bins = 32;

  void validate() const;
  std::vector<double> doppler_axis() const { return linspace_centers(doppler, doppler_bins); }
};

struct SceneObject {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();  // (l, w, h)
  double yaw = 0;
  double radial_velocity = 0;
  double reflectivity = 1;
  int class_id = 0;

  Box3D box() const;
};

class Scene {
 public:
  /// Rejects objects whose center falls outside the grid's field of view.
  Scene(std::vector<SceneObject> objects, double noise_floor, std::uint64_t seed, const SpectrumGrid& grid);

  const std::vector<SceneObject>& objects() const { return objects_; }
  double noise_floor() const { return noise_floor_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::vector<SceneObject> objects_;
  double noise_floor_;
  std::uint64_t seed_;
};

struct SpectrumTesseract {
  Tensor power;  // [D x R x E x A], linear power
  std::vector<double> doppler_mps;
  std::vector<double> range_m;
  std::vector<double> elevation_rad;
  std::vector<double> azimuth_rad;

  static SpectrumTesseract with_axes(Tensor power, const SpectrumGrid& grid);
};

struct RenderOptions {
  /// Gaussian blob standard deviation in bins, ordered (doppler, range, elevation, azimuth).
  std::array<double, 4> blob_sigma_bins{1.5, 1.5, 1.5, 1.5};
  bool clutter = true;
  /// Probability that a 4D cell holds a clutter return.
  double clutter_density = 0.005;
};

SpectrumTesseract render_spectrum(const Scene& scene, const SpectrumGrid& grid, const RenderOptions& opt = {});

/// Continuous (doppler, range, elevation, azimuth) bin position of an object's peak.
std::array<double, 4> object_bin_position(const SceneObject& obj, const SpectrumGrid& grid);

struct ImageOptions {
  std::array<double, 3> background{0.25, 0.25, 0.25};
  double pixel_noise = 0.0;  // uniform amplitude
};

std::array<double, 3> class_color(int class_id);

/// RGB image [3 x H x W] with each visible object drawn as the filled
/// bounding rectangle of its projected corners, far objects first.
Tensor render_image(const Scene& scene, const CameraModel& cam, const ImageOptions& opt = {});

// ---- datasets --------------------------------------------------------------

struct ClassSpec {
  std::string name = "car";
  Eigen::Vector3d mean_size{4.0, 1.8, 1.6};
  double size_jitter = 0.1;  // relative, uniform
  Span reflectivity{4000.0, 8000.0};
};

struct DatasetConfig {
  std::size_t train = 8;
  std::size_t val = 0;
  std::size_t test = 2;
  std::uint64_t seed = 0;
  SpectrumGrid grid;
  std::size_t image_height = 32;
  std::size_t image_width = 64;
  double camera_hfov = 2.0943951023931953;  // 120 deg
  std::vector<ClassSpec> classes{ClassSpec{}};
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  Span yaw{-3.141592653589793, 3.141592653589793};
  Span velocity{-10.0, 10.0};
  double ground_z = -1.0;  // height of the ground plane in the radar frame
  double noise_floor = 0.05;
  RenderOptions render;
  ImageOptions image;
  double fov_margin = 0.1;  // fraction of each span kept free at the edges

  std::size_t frame_count() const { return train + val + test; }
  CameraModel camera() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const SpectrumGrid& g);
void from_json(const nlohmann::json& j, SpectrumGrid& g);
void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);
void to_json(nlohmann::json& j, const SceneObject& o);
void from_json(const nlohmann::json& j, SceneObject& o);

/// Random scene for frame `index`, a pure function of (config, index).
Scene sample_scene(const DatasetConfig& cfg, std::size_t index);

struct Frame {
  std::string id;
  SpectrumGrid grid;
  CameraModel camera;
  std::vector<SceneObject> objects;
  SpectrumTesseract spectrum;
  Tensor image;
  double noise_floor = 0;
  std::uint64_t seed = 0;

  std::vector<Box3D> boxes() const;
};

struct Split {
  std::vector<std::string> train, val, test;
  const std::vector<std::string>& get(const std::string& name) const;
};

std::string frame_id(std::size_t index);
Frame synthesize_frame(const DatasetConfig& cfg, std::size_t index);
nlohmann::json labels_json(const Frame& f);

/// Writes frames/<id>/{spectrum.rxt, image.rxt, labels.json}, split.json and
/// dataset.json under `root`. Frames are rendered on `jobs` workers; output
/// bytes do not depend on the worker count.
void make_dataset(const DatasetConfig& cfg, const std::filesystem::path& root, std::size_t jobs = 1);

Split load_split(const std::filesystem::path& root);
Frame load_frame(const std::filesystem::path& root, const std::string& id, bool with_tensors = true);

}  // namespace rxf
