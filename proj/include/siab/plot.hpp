#pragma once

// Small line and bar charts for diagnostics. One layout routine draws onto
// either an SVG document or an RGB raster saved as PNG.

#include <filesystem>
#include <string>
#include <vector>

namespace siab {

enum class PlotFormat { Png, Svg };

/// "png" or "svg"; anything else is InvalidInput.
PlotFormat parse_plot_format(const std::string& text);
const char* extension(PlotFormat format);

struct Series {
  std::string label;
  std::vector<double> y;  // x is the index
};

struct LinePanel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

/// Panels are laid out left to right and share one legend.
void write_line_plot(const std::filesystem::path& path, const std::vector<LinePanel>& panels, PlotFormat format);

struct BarChart {
  std::string title;
  std::string y_label;
  std::vector<std::string> categories;
  std::vector<Series> groups;  // groups[g].y[c] is the bar of group g in category c
};

void write_bar_plot(const std::filesystem::path& path, const BarChart& chart, PlotFormat format);

}  // namespace siab
