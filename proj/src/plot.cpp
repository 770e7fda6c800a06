#include "rxf/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rxf/io.hpp"

namespace rxf {

Canvas::Canvas(std::size_t width, std::size_t height, Rgb background)
    : w_(width), h_(height), px_(width * height, background) {
  if (width == 0 || height == 0) throw ContractError("Canvas: empty raster");
}

void Canvas::set(long x, long y, Rgb c) {
  if (x < 0 || y < 0 || x >= static_cast<long>(w_) || y >= static_cast<long>(h_)) return;
  px_[static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)] = c;
}

void Canvas::line(double x0, double y0, double x1, double y1, Rgb c) {
  const double n = std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)));
  if (!std::isfinite(n)) return;
  const long steps = std::max(1L, static_cast<long>(std::min(n, 1e5)));
  for (long i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps);
    set(std::lround(x0 + t * (x1 - x0)), std::lround(y0 + t * (y1 - y0)), c);
  }
}

void Canvas::fill_rect(long x0, long y0, long x1, long y1, Rgb c) {
  for (long y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (long x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

void Canvas::save_ppm(const std::filesystem::path& path) const {
  std::string s = "P6\n" + std::to_string(w_) + " " + std::to_string(h_) + "\n255\n";
  s.reserve(s.size() + px_.size() * 3);
  for (const auto& p : px_) s.append(reinterpret_cast<const char*>(p.data()), 3);
  write_file(path, s);
}

Rgb colormap(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  // piecewise linear through navy, teal, green, yellow
  static constexpr std::array<std::array<double, 3>, 4> stops{{{20, 20, 80}, {30, 120, 140}, {90, 190, 80}, {250, 230, 40}}};
  const double s = t * 3.0;
  const std::size_t i = std::min<std::size_t>(2, static_cast<std::size_t>(s));
  const double f = s - static_cast<double>(i);
  Rgb c;
  for (int k = 0; k < 3; ++k) {
    c[static_cast<std::size_t>(k)] =
        static_cast<std::uint8_t>(std::lround(stops[i][static_cast<std::size_t>(k)] * (1 - f) + stops[i + 1][static_cast<std::size_t>(k)] * f));
  }
  return c;
}

Canvas line_chart(const std::vector<Series>& series, std::size_t width, std::size_t height, std::array<double, 2> xlim,
                  std::array<double, 2> ylim) {
  Canvas c(width, height);
  const double m = 12;
  auto fit = [&](std::array<double, 2> lim, bool is_x) {
    if (lim[0] < lim[1]) return lim;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series)
      for (double v : is_x ? s.x : s.y)
        if (std::isfinite(v)) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
    if (!(lo < hi)) {
      lo = std::isfinite(lo) ? lo - 1 : 0;
      hi = lo + 2;
    }
    return std::array<double, 2>{lo, hi};
  };
  xlim = fit(xlim, true);
  ylim = fit(ylim, false);
  const double W = static_cast<double>(width) - 2 * m, H = static_cast<double>(height) - 2 * m;
  auto px = [&](double x) { return m + (x - xlim[0]) / (xlim[1] - xlim[0]) * W; };
  auto py = [&](double y) { return m + H - (y - ylim[0]) / (ylim[1] - ylim[0]) * H; };
  const Rgb grid{225, 225, 225}, frame{60, 60, 60};
  for (int i = 1; i < 4; ++i) {
    const double f = i / 4.0;
    c.line(m + f * W, m, m + f * W, m + H, grid);
    c.line(m, m + f * H, m + W, m + f * H, grid);
  }
  c.line(m, m, m + W, m, frame);
  c.line(m, m + H, m + W, m + H, frame);
  c.line(m, m, m, m + H, frame);
  c.line(m + W, m, m + W, m + H, frame);
  for (const auto& s : series)
    for (std::size_t i = 1; i < std::min(s.x.size(), s.y.size()); ++i)
      c.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.color);
  return c;
}

Canvas bev_spectrum(const RadarCube3& cube, const std::vector<Box3D>& gts, const std::vector<Box3D>& preds,
                    double meters_per_pixel) {
  if (!(meters_per_pixel > 0)) throw ContractError("bev_spectrum: meters_per_pixel must be positive");
  const std::size_t R = cube.range_bins(), E = cube.elevation_bins(), A = cube.azimuth_bins();
  if (cube.range_m.size() != R || cube.azimuth_rad.size() != A) {
    throw ContractError("bev_spectrum: cube has no axis coordinates");
  }
  const double rmax = cube.range_m.back();
  const double amax = std::max(std::abs(cube.azimuth_rad.front()), std::abs(cube.azimuth_rad.back()));
  const double half_width = rmax * std::sin(std::min(amax, 1.5707963267948966));
  const std::size_t Wp = static_cast<std::size_t>(std::ceil(2 * half_width / meters_per_pixel)) + 1;
  const std::size_t Hp = static_cast<std::size_t>(std::ceil(rmax / meters_per_pixel)) + 1;
  Canvas c(Wp, Hp, {0, 0, 0});

  std::vector<double> ra(R * A, 0.0);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t a = 0; a < A; ++a) {
      double v = 0;
      for (std::size_t e = 0; e < E; ++e) v = std::max(v, cube.at(r, e, a, 0));
      ra[r * A + a] = std::log10(v + 1e-12);
      lo = std::min(lo, ra[r * A + a]);
      hi = std::max(hi, ra[r * A + a]);
    }
  const double dr = R > 1 ? (cube.range_m[R - 1] - cube.range_m[0]) / static_cast<double>(R - 1) : rmax;
  const double da = A > 1 ? (cube.azimuth_rad[A - 1] - cube.azimuth_rad[0]) / static_cast<double>(A - 1) : 1.0;
  auto to_px = [&](double x, double y) {
    return std::array<double, 2>{(half_width - y) / meters_per_pixel, (rmax - x) / meters_per_pixel};
  };
  // nearest-bin lookup per pixel
  for (std::size_t py = 0; py < Hp; ++py)
    for (std::size_t px = 0; px < Wp; ++px) {
      const double x = rmax - static_cast<double>(py) * meters_per_pixel;
      const double y = half_width - static_cast<double>(px) * meters_per_pixel;
      const double rho = std::hypot(x, y), az = std::atan2(y, x);
      const double ri = std::round((rho - cube.range_m[0]) / dr), ai = std::round((az - cube.azimuth_rad[0]) / da);
      if (ri < 0 || ai < 0 || ri >= static_cast<double>(R) || ai >= static_cast<double>(A)) continue;
      const double v = ra[static_cast<std::size_t>(ri) * A + static_cast<std::size_t>(ai)];
      c.set(static_cast<long>(px), static_cast<long>(py), colormap(hi > lo ? (v - lo) / (hi - lo) : 0.0));
    }
  auto draw = [&](const Box3D& b, Rgb col) {
    const auto fp = footprint(b);
    for (std::size_t i = 0; i < fp.size(); ++i) {
      const auto p0 = to_px(fp[i].x(), fp[i].y());
      const auto p1 = to_px(fp[(i + 1) % fp.size()].x(), fp[(i + 1) % fp.size()].y());
      c.line(p0[0], p0[1], p1[0], p1[1], col);
    }
  };
  for (const auto& b : gts) draw(b, {255, 255, 255});
  for (const auto& b : preds) draw(b, {230, 60, 60});
  return c;
}

}  // namespace rxf
