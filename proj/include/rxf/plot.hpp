#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rxf/geometry.hpp"
#include "rxf/preprocess.hpp"

namespace rxf {

using Rgb = std::array<std::uint8_t, 3>;

/// Minimal RGB raster with binary PPM output.
class Canvas {
 public:
  Canvas(std::size_t width, std::size_t height, Rgb background = {255, 255, 255});

  std::size_t width() const { return w_; }
  std::size_t height() const { return h_; }
  Rgb at(std::size_t x, std::size_t y) const { return px_[y * w_ + x]; }

  /// Out-of-bounds pixels are ignored.
  void set(long x, long y, Rgb c);
  void line(double x0, double y0, double x1, double y1, Rgb c);
  void fill_rect(long x0, long y0, long x1, long y1, Rgb c);
  void save_ppm(const std::filesystem::path& path) const;

 private:
  std::size_t w_, h_;
  std::vector<Rgb> px_;
};

/// Dark-blue to yellow ramp for t in [0, 1].
Rgb colormap(double t);

struct Series {
  std::vector<double> x, y;
  Rgb color{31, 119, 180};
};

/// Line chart with a frame and faint gridlines; axes span the data (or the given limits when lo < hi).
Canvas line_chart(const std::vector<Series>& series, std::size_t width, std::size_t height,
                  std::array<double, 2> xlim = {0, 0}, std::array<double, 2> ylim = {0, 0});

/// Top-down (x forward up the image, y left) view of the max-over-elevation
/// mean power, log-scaled, with box footprints overlaid.
Canvas bev_spectrum(const RadarCube3& cube, const std::vector<Box3D>& gts, const std::vector<Box3D>& preds,
                    double meters_per_pixel = 0.25);

}  // namespace rxf
