#ifndef VMFCIL_RASTER_HPP_
#define VMFCIL_RASTER_HPP_

#include <array>
#include <filesystem>
#include <vector>

#include "vmfcil/types.hpp"

namespace vmfcil {

using Color = std::array<double, 3>;

/// Minimal line/scatter chart on an RGB canvas. Data coordinates map into a
/// plot area inset by a fixed margin; there is no text rendering.
class Chart {
 public:
  Chart(int width, int height, double x_min, double x_max, double y_min, double y_max);

  void grid(int x_divisions, int y_divisions);
  void line(const std::vector<double>& xs, const std::vector<double>& ys, const Color& color, int thickness = 2);
  void points(const std::vector<double>& xs, const std::vector<double>& ys, const Color& color, int radius = 1);
  void hline(double y, const Color& color);
  void vline(double x, const Color& color);

  const Image& image() const { return canvas_; }
  void save(const std::filesystem::path& path) const;

  static Color palette(int k);

 private:
  int px(double x) const;
  int py(double y) const;
  void set(int x, int y, const Color& c);
  void segment(int x0, int y0, int x1, int y1, const Color& c, int thickness);

  Image canvas_;
  double x_min_, x_max_, y_min_, y_max_;
  int margin_ = 24;
};

}  // namespace vmfcil

#endif  // VMFCIL_RASTER_HPP_
