#include "vmfcil/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "vmfcil/errors.hpp"
#include "vmfcil/png_io.hpp"

namespace vmfcil {

Chart::Chart(int width, int height, double x_min, double x_max, double y_min, double y_max)
    : canvas_(height, width, 3), x_min_(x_min), x_max_(x_max), y_min_(y_min), y_max_(y_max) {
  if (width <= 2 * margin_ || height <= 2 * margin_) throw PreconditionError("chart too small");
  if (!(x_max > x_min) || !(y_max > y_min)) throw PreconditionError("chart needs a nonempty data range");
  std::fill(canvas_.pixels.begin(), canvas_.pixels.end(), 1.0);
  const Color axis{0.0, 0.0, 0.0};
  segment(margin_, height - margin_, width - margin_, height - margin_, axis, 1);
  segment(margin_, margin_, margin_, height - margin_, axis, 1);
}

int Chart::px(double x) const {
  const double f = (x - x_min_) / (x_max_ - x_min_);
  return margin_ + static_cast<int>(std::lround(f * (canvas_.width - 2 * margin_)));
}

int Chart::py(double y) const {
  const double f = (y - y_min_) / (y_max_ - y_min_);
  return canvas_.height - margin_ - static_cast<int>(std::lround(f * (canvas_.height - 2 * margin_)));
}

void Chart::set(int x, int y, const Color& c) {
  if (x < 0 || y < 0 || x >= canvas_.width || y >= canvas_.height) return;
  for (int k = 0; k < 3; ++k) canvas_.at(y, x, k) = c[static_cast<std::size_t>(k)];
}

void Chart::segment(int x0, int y0, int x1, int y1, const Color& c, int thickness) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  const int lo = -(thickness - 1) / 2, hi = thickness / 2;
  while (true) {
    for (int a = lo; a <= hi; ++a)
      for (int b = lo; b <= hi; ++b) set(x0 + a, y0 + b, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Chart::grid(int x_divisions, int y_divisions) {
  const Color light{0.88, 0.88, 0.88};
  for (int i = 1; i <= x_divisions; ++i) vline(x_min_ + (x_max_ - x_min_) * i / x_divisions, light);
  for (int i = 1; i <= y_divisions; ++i) hline(y_min_ + (y_max_ - y_min_) * i / y_divisions, light);
}

void Chart::hline(double y, const Color& color) { segment(px(x_min_), py(y), px(x_max_), py(y), color, 1); }
void Chart::vline(double x, const Color& color) { segment(px(x), py(y_min_), px(x), py(y_max_), color, 1); }

void Chart::line(const std::vector<double>& xs, const std::vector<double>& ys, const Color& color, int thickness) {
  for (std::size_t i = 1; i < std::min(xs.size(), ys.size()); ++i)
    segment(px(xs[i - 1]), py(ys[i - 1]), px(xs[i]), py(ys[i]), color, thickness);
  if (xs.size() == 1 && !ys.empty()) points(xs, ys, color, 2);
}

void Chart::points(const std::vector<double>& xs, const std::vector<double>& ys, const Color& color, int radius) {
  for (std::size_t i = 0; i < std::min(xs.size(), ys.size()); ++i)
    for (int a = -radius; a <= radius; ++a)
      for (int b = -radius; b <= radius; ++b) set(px(xs[i]) + a, py(ys[i]) + b, color);
}

void Chart::save(const std::filesystem::path& path) const { write_png(path, canvas_); }

Color Chart::palette(int k) {
  static const Color colors[] = {{0.12, 0.47, 0.71}, {1.0, 0.5, 0.05},  {0.17, 0.63, 0.17}, {0.84, 0.15, 0.16},
                                 {0.58, 0.4, 0.74},  {0.55, 0.34, 0.29}, {0.89, 0.47, 0.76}, {0.5, 0.5, 0.5}};
  return colors[static_cast<std::size_t>(k) % 8];
}

}  // namespace vmfcil
