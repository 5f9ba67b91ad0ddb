#include "siab/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "siab/data.hpp"
#include "siab/error.hpp"

namespace siab {
namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

constexpr std::array<Rgb, 8> kPalette{{{31, 119, 180},
                                       {255, 127, 14},
                                       {44, 160, 44},
                                       {214, 39, 40},
                                       {148, 103, 189},
                                       {140, 86, 75},
                                       {227, 119, 194},
                                       {127, 127, 127}}};
constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kGrid{220, 220, 220};

// Drawing surface in pixel coordinates, y pointing down.
class Canvas {
 public:
  virtual ~Canvas() = default;
  virtual void line(double x0, double y0, double x1, double y1, Rgb c, double width) = 0;
  virtual void rect(double x, double y, double w, double h, Rgb c) = 0;
  // anchor: 0 left, 1 centre, 2 right; baseline at y.
  virtual void text(double x, double y, const std::string& s, int anchor, bool vertical = false) = 0;
  virtual void save(const std::filesystem::path& path) const = 0;
};

std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += ch;
    }
  }
  return out;
}

class SvgCanvas final : public Canvas {
 public:
  SvgCanvas(int w, int h) : w_(w), h_(h) {}
  void line(double x0, double y0, double x1, double y1, Rgb c, double width) override {
    body_ << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y1 << "\" stroke=\""
          << hex(c) << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, Rgb c) override {
    body_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h << "\" fill=\""
          << hex(c) << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, int anchor, bool vertical) override {
    static const char* anchors[] = {"start", "middle", "end"};
    body_ << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"" << anchors[anchor] << "\"";
    if (vertical) body_ << " transform=\"rotate(-90 " << x << " " << y << ")\"";
    body_ << ">" << escape(s) << "</text>\n";
  }
  void save(const std::filesystem::path& path) const override {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write plot " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body_.str() << "</svg>\n";
  }

 private:
  int w_, h_;
  std::ostringstream body_;
};

// 5x7 bitmap glyphs, one byte per row, low five bits used (bit 4 = left).
const std::array<std::uint8_t, 7>* glyph(char ch) {
  static const std::pair<char, std::array<std::uint8_t, 7>> table[] = {
      {'0', {14, 17, 19, 21, 25, 17, 14}}, {'1', {4, 12, 4, 4, 4, 4, 14}},     {'2', {14, 17, 1, 2, 4, 8, 31}},
      {'3', {31, 2, 4, 2, 1, 17, 14}},     {'4', {2, 6, 10, 18, 31, 2, 2}},    {'5', {31, 16, 30, 1, 1, 17, 14}},
      {'6', {6, 8, 16, 30, 17, 17, 14}},   {'7', {31, 1, 2, 4, 8, 8, 8}},      {'8', {14, 17, 17, 14, 17, 17, 14}},
      {'9', {14, 17, 17, 15, 1, 2, 12}},   {'A', {14, 17, 17, 31, 17, 17, 17}}, {'B', {30, 17, 17, 30, 17, 17, 30}},
      {'C', {14, 17, 16, 16, 16, 17, 14}}, {'D', {28, 18, 17, 17, 17, 18, 28}}, {'E', {31, 16, 16, 30, 16, 16, 31}},
      {'F', {31, 16, 16, 30, 16, 16, 16}}, {'G', {14, 17, 16, 23, 17, 17, 15}}, {'H', {17, 17, 17, 31, 17, 17, 17}},
      {'I', {14, 4, 4, 4, 4, 4, 14}},      {'J', {7, 2, 2, 2, 2, 18, 12}},     {'K', {17, 18, 20, 24, 20, 18, 17}},
      {'L', {16, 16, 16, 16, 16, 16, 31}}, {'M', {17, 27, 21, 21, 17, 17, 17}}, {'N', {17, 17, 25, 21, 19, 17, 17}},
      {'O', {14, 17, 17, 17, 17, 17, 14}}, {'P', {30, 17, 17, 30, 16, 16, 16}}, {'Q', {14, 17, 17, 17, 21, 18, 13}},
      {'R', {30, 17, 17, 30, 20, 18, 17}}, {'S', {15, 16, 16, 14, 1, 1, 30}},  {'T', {31, 4, 4, 4, 4, 4, 4}},
      {'U', {17, 17, 17, 17, 17, 17, 14}}, {'V', {17, 17, 17, 17, 17, 10, 4}}, {'W', {17, 17, 17, 21, 21, 21, 10}},
      {'X', {17, 17, 10, 4, 10, 17, 17}},  {'Y', {17, 17, 17, 10, 4, 4, 4}},   {'Z', {31, 1, 2, 4, 8, 16, 31}},
      {'.', {0, 0, 0, 0, 0, 12, 12}},      {'-', {0, 0, 0, 31, 0, 0, 0}},      {'+', {0, 4, 4, 31, 4, 4, 0}},
      {'_', {0, 0, 0, 0, 0, 0, 31}},       {':', {0, 12, 12, 0, 12, 12, 0}},   {'(', {2, 4, 8, 8, 8, 4, 2}},
      {')', {8, 4, 2, 2, 2, 4, 8}},        {'/', {0, 1, 2, 4, 8, 16, 0}},      {'%', {24, 25, 2, 4, 8, 19, 3}},
      {',', {0, 0, 0, 0, 12, 4, 8}},       {'=', {0, 0, 31, 0, 31, 0, 0}},     {'#', {10, 10, 31, 10, 31, 10, 10}},
  };
  // Lowercase letters reuse the capitals.
  if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
  for (const auto& [c, rows] : table) {
    if (c == ch) return &rows;
  }
  return nullptr;
}

class RasterCanvas final : public Canvas {
 public:
  RasterCanvas(int w, int h) : w_(w), h_(h), pixels_(static_cast<std::size_t>(w) * h * 3, 255) {}

  void line(double x0, double y0, double x1, double y1, Rgb c, double width) override {
    const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
    const int r = std::max(0, static_cast<int>(std::lround(width / 2.0 - 0.5)));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
      const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) put(x + dx, y + dy, c);
      }
    }
  }

  void rect(double x, double y, double w, double h, Rgb c) override {
    const int xa = static_cast<int>(std::lround(x)), ya = static_cast<int>(std::lround(y));
    const int xb = static_cast<int>(std::lround(x + w)), yb = static_cast<int>(std::lround(y + h));
    for (int yy = ya; yy < yb; ++yy) {
      for (int xx = xa; xx < xb; ++xx) put(xx, yy, c);
    }
  }

  void text(double x, double y, const std::string& s, int anchor, bool vertical) override {
    const int advance = 6;
    const double extent = static_cast<double>(s.size()) * advance;
    const double start = anchor == 0 ? 0.0 : anchor == 1 ? -extent / 2.0 : -extent;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto* rows = glyph(s[i]);
      if (rows == nullptr) continue;
      for (int ry = 0; ry < 7; ++ry) {
        for (int rx = 0; rx < 5; ++rx) {
          if (!((*rows)[ry] & (16 >> rx))) continue;
          const double along = start + static_cast<double>(i) * advance + rx;
          const double across = ry - 7;
          if (vertical) {
            put(static_cast<int>(std::lround(x + across)), static_cast<int>(std::lround(y - along)), kBlack);
          } else {
            put(static_cast<int>(std::lround(x + along)), static_cast<int>(std::lround(y + across)), kBlack);
          }
        }
      }
    }
  }

  void save(const std::filesystem::path& path) const override { write_png_rgb(path, w_, h_, pixels_); }

 private:
  void put(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    std::uint8_t* p = &pixels_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  int w_, h_;
  std::vector<std::uint8_t> pixels_;
};

std::unique_ptr<Canvas> make_canvas(PlotFormat format, int w, int h) {
  if (format == PlotFormat::Svg) return std::make_unique<SvgCanvas>(w, h);
  return std::make_unique<RasterCanvas>(w, h);
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Range {
  double lo, hi;
};

Range padded_range(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) {
    const double pad = std::max(1e-3, std::abs(lo) * 0.1);
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

// Frame, four horizontal grid lines with tick values, title and labels.
void draw_axes(Canvas& c, double x, double y, double w, double h, Range yr, const std::string& title,
               const std::string& x_label, const std::string& y_label) {
  for (int i = 0; i <= 4; ++i) {
    const double gy = y + h - h * i / 4.0;
    c.line(x, gy, x + w, gy, kGrid, 1);
    c.text(x - 6, gy + 4, tick_label(yr.lo + (yr.hi - yr.lo) * i / 4.0), 2);
  }
  c.line(x, y, x, y + h, kBlack, 1);
  c.line(x, y + h, x + w, y + h, kBlack, 1);
  c.text(x + w / 2, y - 10, title, 1);
  c.text(x + w / 2, y + h + 34, x_label, 1);
  c.text(x - 48, y + h / 2, y_label, 1, true);
}

void draw_legend(Canvas& c, double x, double y, const std::vector<std::string>& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double ly = y + 18.0 * i;
    c.rect(x, ly - 9, 12, 10, kPalette[i % kPalette.size()]);
    c.text(x + 18, ly, labels[i], 0);
  }
}

}  // namespace

PlotFormat parse_plot_format(const std::string& text) {
  if (text == "png") return PlotFormat::Png;
  if (text == "svg") return PlotFormat::Svg;
  throw InvalidInput("plot format must be png or svg, got '" + text + "'");
}

const char* extension(PlotFormat format) { return format == PlotFormat::Png ? ".png" : ".svg"; }

void write_line_plot(const std::filesystem::path& path, const std::vector<LinePanel>& panels, PlotFormat format) {
  if (panels.empty()) throw InvalidInput("line plot needs at least one panel");
  const int panel_w = 380, panel_h = 260, left = 70, top = 40, legend_w = 150, gap = 80;
  const int width = left + static_cast<int>(panels.size()) * (panel_w + gap) + legend_w;
  const int height = top + panel_h + 60;
  auto canvas = make_canvas(format, width, height);

  std::vector<std::string> labels;
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const LinePanel& panel = panels[p];
    double lo = INFINITY, hi = -INFINITY;
    std::size_t n = 0;
    for (const Series& s : panel.series) {
      for (double v : s.y) {
        if (!std::isfinite(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      n = std::max(n, s.y.size());
    }
    const Range yr = padded_range(lo, hi);
    const double x0 = left + static_cast<double>(p) * (panel_w + gap);
    draw_axes(*canvas, x0, top, panel_w, panel_h, yr, panel.title, panel.x_label, panel.y_label);
    const double span = n > 1 ? static_cast<double>(n - 1) : 1.0;
    auto px = [&](std::size_t i) { return x0 + panel_w * static_cast<double>(i) / span; };
    auto py = [&](double v) { return top + panel_h - panel_h * (v - yr.lo) / (yr.hi - yr.lo); };
    for (std::size_t i = 0; i < n; i += std::max<std::size_t>(1, n / 8)) {
      canvas->text(px(i), top + panel_h + 16, std::to_string(i), 1);
    }
    for (std::size_t s = 0; s < panel.series.size(); ++s) {
      const auto& y = panel.series[s].y;
      const Rgb color = kPalette[s % kPalette.size()];
      for (std::size_t i = 1; i < y.size(); ++i) {
        if (std::isfinite(y[i - 1]) && std::isfinite(y[i])) canvas->line(px(i - 1), py(y[i - 1]), px(i), py(y[i]), color, 2);
      }
      if (y.size() == 1 && std::isfinite(y[0])) canvas->rect(px(0) - 2, py(y[0]) - 2, 4, 4, color);
      if (p == 0) labels.push_back(panel.series[s].label);
    }
  }
  draw_legend(*canvas, width - legend_w + 10, top + 10, labels);
  canvas->save(path);
}

void write_bar_plot(const std::filesystem::path& path, const BarChart& chart, PlotFormat format) {
  if (chart.categories.empty() || chart.groups.empty()) throw InvalidInput("bar plot needs categories and groups");
  for (const Series& g : chart.groups) {
    if (g.y.size() != chart.categories.size()) throw InvalidInput("bar plot: group '" + g.label + "' size mismatch");
  }
  const int plot_w = std::max(300, static_cast<int>(chart.categories.size()) * 40 * static_cast<int>(chart.groups.size() + 1));
  const int plot_h = 260, left = 70, top = 40, legend_w = 170;
  const int width = left + plot_w + legend_w, height = top + plot_h + 60;
  auto canvas = make_canvas(format, width, height);

  double hi = 0.0, lo = 0.0;
  for (const Series& g : chart.groups) {
    for (double v : g.y) {
      if (std::isfinite(v)) hi = std::max(hi, v), lo = std::min(lo, v);
    }
  }
  const Range yr{lo, hi > lo ? hi * 1.05 : lo + 1.0};
  draw_axes(*canvas, left, top, plot_w, plot_h, yr, chart.title, "", chart.y_label);
  const double slot = static_cast<double>(plot_w) / chart.categories.size();
  const double bar = slot / (chart.groups.size() + 1);
  auto py = [&](double v) { return top + plot_h - plot_h * (v - yr.lo) / (yr.hi - yr.lo); };
  for (std::size_t c = 0; c < chart.categories.size(); ++c) {
    const double x0 = left + slot * c + bar / 2;
    for (std::size_t g = 0; g < chart.groups.size(); ++g) {
      const double v = chart.groups[g].y[c];
      if (!std::isfinite(v)) continue;
      const double y_top = py(std::max(v, 0.0)), y_bot = py(std::min(v, 0.0));
      canvas->rect(x0 + bar * g, y_top, bar * 0.9, y_bot - y_top, kPalette[g % kPalette.size()]);
    }
    canvas->text(left + slot * (c + 0.5), top + plot_h + 16, chart.categories[c], 1);
  }
  std::vector<std::string> labels;
  for (const Series& g : chart.groups) labels.push_back(g.label);
  draw_legend(*canvas, width - legend_w + 10, top + 10, labels);
  canvas->save(path);
}

}  // namespace siab
