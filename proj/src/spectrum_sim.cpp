#include "rxf/spectrum_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "rxf/io.hpp"
#include "rxf/parallel.hpp"
#include "rxf/random.hpp"

namespace rxf {

namespace fs = std::filesystem;

namespace {

double bin_position(const Span& s, std::size_t n, double v) {
  if (n == 1) return 0.0;
  return (v - s.lo) / s.width() * static_cast<double>(n - 1);
}

std::vector<double> gaussian_profile(std::size_t n, double center, double sigma) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (static_cast<double>(i) - center) / sigma;
    g[i] = std::exp(-0.5 * d * d);
  }
  return g;
}

nlohmann::json span_json(const Span& s) { return {s.lo, s.hi}; }
Span span_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

void SpectrumGrid::validate() const {
  spatial.validate();
  if (doppler_bins < 4 || spatial.range_bins < 4 || spatial.elevation_bins < 4 || spatial.azimuth_bins < 4) {
    throw ContractError("SpectrumGrid: every extent must be >= 4");
  }
  if (!(doppler.width() > 0)) throw ContractError("SpectrumGrid: degenerate Doppler span");
}

Box3D SceneObject::box() const {
  Box3D b;
  b.center = center;
  b.size = size;
  b.yaw = yaw;
  b.class_id = class_id;
  b.score = 1.0;
  return b;
}

Scene::Scene(std::vector<SceneObject> objects, double noise_floor, std::uint64_t seed, const SpectrumGrid& grid)
    : objects_(std::move(objects)), noise_floor_(noise_floor), seed_(seed) {
  if (!(noise_floor > 0)) throw ContractError("Scene: noise floor must be positive");
  for (const auto& o : objects_) {
    if (!(o.size.minCoeff() > 0)) throw ContractError("Scene: object size must be positive");
    if (!(o.yaw > -std::numbers::pi && o.yaw <= std::numbers::pi)) throw ContractError("Scene: yaw outside (-pi, pi]");
    if (!(o.reflectivity > 0)) throw ContractError("Scene: reflectivity must be positive");
    if (!grid.spatial.contains(cartesian_to_spherical(o.center))) {
      throw ContractError("Scene: object center outside the radar field of view");
    }
  }
}

SpectrumTesseract SpectrumTesseract::with_axes(Tensor power, const SpectrumGrid& grid) {
  return {std::move(power), grid.doppler_axis(), grid.spatial.range_axis(), grid.spatial.elevation_axis(),
          grid.spatial.azimuth_axis()};
}

std::array<double, 4> object_bin_position(const SceneObject& obj, const SpectrumGrid& grid) {
  const auto sp = cartesian_to_spherical(obj.center);
  const auto& g = grid.spatial;
  return {bin_position(grid.doppler, grid.doppler_bins, obj.radial_velocity),
          bin_position(g.range, g.range_bins, sp.range), bin_position(g.elevation, g.elevation_bins, sp.elevation),
          bin_position(g.azimuth, g.azimuth_bins, sp.azimuth)};
}

SpectrumTesseract render_spectrum(const Scene& scene, const SpectrumGrid& grid, const RenderOptions& opt) {
  grid.validate();
  const std::size_t D = grid.doppler_bins, R = grid.spatial.range_bins, E = grid.spatial.elevation_bins,
                    A = grid.spatial.azimuth_bins;
  std::vector<double> power(D * R * E * A, 0.0);
  for (const auto& obj : scene.objects()) {
    const auto pos = object_bin_position(obj, grid);
    const double range = std::max(obj.center.norm(), 1e-3);
    const double amp = obj.reflectivity / (range * range);
    const auto gd = gaussian_profile(D, pos[0], opt.blob_sigma_bins[0]);
    const auto gr = gaussian_profile(R, pos[1], opt.blob_sigma_bins[1]);
    const auto ge = gaussian_profile(E, pos[2], opt.blob_sigma_bins[2]);
    const auto ga = gaussian_profile(A, pos[3], opt.blob_sigma_bins[3]);
    std::size_t i = 0;
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t e = 0; e < E; ++e) {
          const double w = amp * gd[d] * gr[r] * ge[e];
          for (std::size_t a = 0; a < A; ++a) power[i++] += w * ga[a];
        }
  }
  if (opt.clutter && opt.clutter_density > 0) {
    Rng rng(mix_seed(scene.seed(), 0xC1u));
    for (auto& p : power) {
      if (rng.uniform() < opt.clutter_density) p += rng.rayleigh(scene.noise_floor());
    }
  }
  return SpectrumTesseract::with_axes(Tensor({D, R, E, A}, std::move(power)), grid);
}

std::array<double, 3> class_color(int class_id) {
  static constexpr std::array<std::array<double, 3>, 4> palette{
      {{0.9, 0.2, 0.2}, {0.2, 0.8, 0.3}, {0.2, 0.4, 0.95}, {0.95, 0.85, 0.2}}};
  return palette[static_cast<std::size_t>(class_id) % palette.size()];
}

Tensor render_image(const Scene& scene, const CameraModel& cam, const ImageOptions& opt) {
  cam.validate();
  const std::size_t H = cam.height, W = cam.width;
  std::vector<double> img(3 * H * W);
  for (std::size_t c = 0; c < 3; ++c) std::fill_n(img.begin() + c * H * W, H * W, opt.background[c]);

  struct Rect {
    double depth;
    double u0, u1, v0, v1;
    int cls;
  };
  std::vector<Rect> rects;
  for (const auto& obj : scene.objects()) {
    const Box3D b = obj.box();
    const auto fp = footprint(b);
    double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
    bool in_front = true;
    for (const auto& xy : fp) {
      for (double dz : {-0.5, 0.5}) {
        const Eigen::Vector3d p(xy.x(), xy.y(), b.center.z() + dz * b.size.z());
        const Eigen::Vector3d pc = cam.rotation * p + cam.translation;
        if (pc.z() <= 1e-9) {
          in_front = false;
          break;
        }
        const Eigen::Vector3d h = cam.intrinsics * pc;
        const double u = h.x() / h.z(), v = h.y() / h.z();
        u0 = std::min(u0, u);
        u1 = std::max(u1, u);
        v0 = std::min(v0, v);
        v1 = std::max(v1, v);
      }
      if (!in_front) break;
    }
    if (!in_front) continue;
    const double depth = (cam.rotation * b.center + cam.translation).z();
    rects.push_back({depth, u0, u1, v0, v1, obj.class_id});
  }
  std::stable_sort(rects.begin(), rects.end(), [](const Rect& a, const Rect& b) { return a.depth > b.depth; });
  for (const auto& r : rects) {
    // pixel centers at integer coordinates; fill those inside the rectangle
    const long c0 = std::max<long>(0, static_cast<long>(std::ceil(r.u0)));
    const long c1 = std::min<long>(static_cast<long>(W) - 1, static_cast<long>(std::floor(r.u1)));
    const long r0 = std::max<long>(0, static_cast<long>(std::ceil(r.v0)));
    const long r1 = std::min<long>(static_cast<long>(H) - 1, static_cast<long>(std::floor(r.v1)));
    const auto col = class_color(r.cls);
    for (long y = r0; y <= r1; ++y)
      for (long x = c0; x <= c1; ++x)
        for (std::size_t c = 0; c < 3; ++c) img[(c * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x)] = col[c];
  }
  if (opt.pixel_noise > 0) {
    Rng rng(mix_seed(scene.seed(), 0x1A6u));
    for (auto& v : img) v += opt.pixel_noise * (2.0 * rng.uniform() - 1.0);
  }
  return Tensor({3, H, W}, std::move(img));
}

// ---- datasets --------------------------------------------------------------

CameraModel DatasetConfig::camera() const { return CameraModel::colocated(image_height, image_width, camera_hfov); }

void DatasetConfig::validate() const {
  grid.validate();
  if (frame_count() < 1) throw ContractError("DatasetConfig: frame count must be >= 1");
  if (classes.empty()) throw ContractError("DatasetConfig: no classes");
  if (min_objects > max_objects) throw ContractError("DatasetConfig: min_objects > max_objects");
  if (!(noise_floor > 0)) throw ContractError("DatasetConfig: noise floor must be positive");
}

void to_json(nlohmann::json& j, const SpectrumGrid& g) {
  j = g.spatial;
  j["doppler_mps"] = span_json(g.doppler);
  j["doppler_bins"] = g.doppler_bins;
}

void from_json(const nlohmann::json& j, SpectrumGrid& g) {
  g.spatial = j.get<SphericalGrid>();
  g.doppler = span_from(j.at("doppler_mps"));
  g.doppler_bins = j.at("doppler_bins").get<std::size_t>();
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& k : c.classes) {
    classes.push_back({{"name", k.name},
                       {"mean_size", {k.mean_size.x(), k.mean_size.y(), k.mean_size.z()}},
                       {"size_jitter", k.size_jitter},
                       {"reflectivity", span_json(k.reflectivity)}});
  }
  j = {{"train", c.train},
       {"val", c.val},
       {"test", c.test},
       {"seed", c.seed},
       {"grid", c.grid},
       {"image_size_hw", {c.image_height, c.image_width}},
       {"camera_hfov_rad", c.camera_hfov},
       {"classes", classes},
       {"objects_per_frame", {c.min_objects, c.max_objects}},
       {"yaw_rad", span_json(c.yaw)},
       {"velocity_mps", span_json(c.velocity)},
       {"ground_z_m", c.ground_z},
       {"noise_floor", c.noise_floor},
       {"blob_sigma_bins", c.render.blob_sigma_bins},
       {"clutter", c.render.clutter},
       {"clutter_density", c.render.clutter_density},
       {"image_background", c.image.background},
       {"pixel_noise", c.image.pixel_noise},
       {"fov_margin", c.fov_margin}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  DatasetConfig d;
  c.train = j.value("train", d.train);
  c.val = j.value("val", d.val);
  c.test = j.value("test", d.test);
  c.seed = j.value("seed", d.seed);
  if (j.contains("grid")) c.grid = j.at("grid").get<SpectrumGrid>();
  if (j.contains("image_size_hw")) {
    c.image_height = j.at("image_size_hw").at(0).get<std::size_t>();
    c.image_width = j.at("image_size_hw").at(1).get<std::size_t>();
  }
  c.camera_hfov = j.value("camera_hfov_rad", d.camera_hfov);
  if (j.contains("classes")) {
    c.classes.clear();
    for (const auto& k : j.at("classes")) {
      ClassSpec s;
      s.name = k.value("name", s.name);
      if (k.contains("mean_size")) {
        const auto v = k.at("mean_size").get<std::vector<double>>();
        s.mean_size = Eigen::Vector3d(v.at(0), v.at(1), v.at(2));
      }
      s.size_jitter = k.value("size_jitter", s.size_jitter);
      if (k.contains("reflectivity")) s.reflectivity = span_from(k.at("reflectivity"));
      c.classes.push_back(s);
    }
  }
  if (j.contains("objects_per_frame")) {
    c.min_objects = j.at("objects_per_frame").at(0).get<std::size_t>();
    c.max_objects = j.at("objects_per_frame").at(1).get<std::size_t>();
  }
  if (j.contains("yaw_rad")) c.yaw = span_from(j.at("yaw_rad"));
  if (j.contains("velocity_mps")) c.velocity = span_from(j.at("velocity_mps"));
  c.ground_z = j.value("ground_z_m", d.ground_z);
  c.noise_floor = j.value("noise_floor", d.noise_floor);
  if (j.contains("blob_sigma_bins")) c.render.blob_sigma_bins = j.at("blob_sigma_bins").get<std::array<double, 4>>();
  c.render.clutter = j.value("clutter", d.render.clutter);
  c.render.clutter_density = j.value("clutter_density", d.render.clutter_density);
  if (j.contains("image_background")) c.image.background = j.at("image_background").get<std::array<double, 3>>();
  c.image.pixel_noise = j.value("pixel_noise", d.image.pixel_noise);
  c.fov_margin = j.value("fov_margin", d.fov_margin);
  c.validate();
}

void to_json(nlohmann::json& j, const SceneObject& o) {
  j = o.box();
  j.erase("score");
  j["radial_velocity"] = o.radial_velocity;
  j["reflectivity"] = o.reflectivity;
}

void from_json(const nlohmann::json& j, SceneObject& o) {
  const auto b = j.get<Box3D>();
  o.center = b.center;
  o.size = b.size;
  o.yaw = b.yaw;
  o.class_id = b.class_id;
  o.radial_velocity = j.value("radial_velocity", 0.0);
  o.reflectivity = j.value("reflectivity", 1.0);
}

Scene sample_scene(const DatasetConfig& cfg, std::size_t index) {
  const std::uint64_t seed = mix_seed(cfg.seed, index);
  Rng rng(seed);
  const auto& g = cfg.grid.spatial;
  auto inner = [&](const Span& s) {
    const double m = cfg.fov_margin * s.width();
    return Span{s.lo + m, s.hi - m};
  };
  const Span rs = inner(g.range), as = inner(g.azimuth), es = inner(g.elevation);
  const std::size_t n = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
  std::vector<SceneObject> objects;
  for (std::size_t attempt = 0; objects.size() < n && attempt < 1000; ++attempt) {
    SceneObject o;
    o.class_id = static_cast<int>(rng.below(cfg.classes.size()));
    const auto& cls = cfg.classes[static_cast<std::size_t>(o.class_id)];
    for (int k = 0; k < 3; ++k) o.size[k] = cls.mean_size[k] * (1.0 + cls.size_jitter * (2.0 * rng.uniform() - 1.0));
    const double range = rng.uniform(rs.lo, rs.hi);
    const double az = rng.uniform(as.lo, as.hi);
    const double z = cfg.ground_z + 0.5 * o.size.z();
    const double ground = std::sqrt(std::max(range * range - z * z, 0.0));
    o.center = Eigen::Vector3d(ground * std::cos(az), ground * std::sin(az), z);
    o.yaw = rng.uniform(cfg.yaw.lo, cfg.yaw.hi);
    if (o.yaw <= -std::numbers::pi) o.yaw += 2 * std::numbers::pi;
    o.radial_velocity = rng.uniform(cfg.velocity.lo, cfg.velocity.hi);
    o.reflectivity = rng.uniform(cls.reflectivity.lo, cls.reflectivity.hi);
    const auto sp = cartesian_to_spherical(o.center);
    if (!es.contains(sp.elevation) || !g.contains(sp)) continue;
    const Box3D b = o.box();
    const bool clear = std::none_of(objects.begin(), objects.end(), [&](const SceneObject& other) {
      const Box3D ob = other.box();
      return bev_intersection(b, ob) > 0 ||
             (other.center - o.center).head<2>().norm() < 0.5 * (b.size.head<2>().norm() + ob.size.head<2>().norm());
    });
    if (clear) objects.push_back(o);
  }
  return Scene(std::move(objects), cfg.noise_floor, seed, cfg.grid);
}

std::vector<Box3D> Frame::boxes() const {
  std::vector<Box3D> out;
  for (const auto& o : objects) out.push_back(o.box());
  return out;
}

const std::vector<std::string>& Split::get(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ContractError("unknown split '" + name + "'");
}

std::string frame_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

Frame synthesize_frame(const DatasetConfig& cfg, std::size_t index) {
  const Scene scene = sample_scene(cfg, index);
  const CameraModel cam = cfg.camera();
  Frame f;
  f.id = frame_id(index);
  f.grid = cfg.grid;
  f.camera = cam;
  f.objects = scene.objects();
  f.spectrum = render_spectrum(scene, cfg.grid, cfg.render);
  f.image = render_image(scene, cam, cfg.image);
  f.noise_floor = scene.noise_floor();
  f.seed = scene.seed();
  return f;
}

nlohmann::json labels_json(const Frame& f) {
  return {{"frame_id", f.id},
          {"grid", f.grid},
          {"calibration", f.camera},
          {"noise_floor", f.noise_floor},
          {"seed", f.seed},
          {"objects", f.objects}};
}

void make_dataset(const DatasetConfig& cfg, const fs::path& root, std::size_t jobs) {
  cfg.validate();
  const std::size_t n = cfg.frame_count();
  fs::create_directories(root / "frames");
  parallel_for(n, jobs, [&](std::size_t i) {
    const Frame f = synthesize_frame(cfg, i);
    const fs::path dir = root / "frames" / f.id;
    fs::create_directories(dir);
    save_rxt(dir / "spectrum.rxt", f.spectrum.power);
    save_rxt(dir / "image.rxt", f.image);
    write_file(dir / "labels.json", labels_json(f).dump(2) + "\n");
  });

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(cfg.seed, 0x5B1u));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  Split split;
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = k < cfg.train ? split.train : (k < cfg.train + cfg.val ? split.val : split.test);
    dst.push_back(frame_id(order[k]));
  }
  for (auto* v : {&split.train, &split.val, &split.test}) std::sort(v->begin(), v->end());
  const nlohmann::json sj = {{"train", split.train}, {"val", split.val}, {"test", split.test}};
  write_file(root / "split.json", sj.dump(2) + "\n");
  write_file(root / "dataset.json", nlohmann::json(cfg).dump(2) + "\n");
}

Split load_split(const fs::path& root) {
  const auto j = nlohmann::json::parse(read_file(root / "split.json"));
  Split s;
  s.train = j.value("train", std::vector<std::string>{});
  s.val = j.value("val", std::vector<std::string>{});
  s.test = j.value("test", std::vector<std::string>{});
  return s;
}

Frame load_frame(const fs::path& root, const std::string& id, bool with_tensors) {
  const fs::path dir = root / "frames" / id;
  const auto j = nlohmann::json::parse(read_file(dir / "labels.json"));
  Frame f;
  f.id = id;
  f.grid = j.at("grid").get<SpectrumGrid>();
  f.camera = j.at("calibration").get<CameraModel>();
  f.objects = j.at("objects").get<std::vector<SceneObject>>();
  f.noise_floor = j.value("noise_floor", 0.0);
  f.seed = j.value("seed", std::uint64_t{0});
  if (with_tensors) {
    f.spectrum = SpectrumTesseract::with_axes(load_rxt(dir / "spectrum.rxt"), f.grid);
    f.image = load_rxt(dir / "image.rxt");
  }
  return f;
}

}  // namespace rxf
