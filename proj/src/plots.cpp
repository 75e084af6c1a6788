#include "dcmil/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace dcmil::plots {

namespace {

constexpr double kW = 640.0, kH = 420.0, kMargin = 60.0;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

const char* kPalette[] = {"#c0392b", "#2980b9", "#27ae60", "#8e44ad"};

}  // namespace

void write_km_svg(const std::string& path,
                  const std::vector<std::pair<std::string, survival::KMCurve>>& curves) {
  double t_max = 1.0;
  for (const auto& [name, c] : curves)
    for (double t : c.event_times) t_max = std::max(t_max, t);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_km_svg: cannot open " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kW << "' height='" << kH
    << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  auto X = [&](double t) { return kMargin + (kW - 2 * kMargin) * t / t_max; };
  auto Y = [&](double s) { return kH - kMargin - (kH - 2 * kMargin) * s; };
  // Axes
  f << "<line x1='" << X(0) << "' y1='" << Y(0) << "' x2='" << X(t_max) << "' y2='"
    << Y(0) << "' stroke='black'/>\n";
  f << "<line x1='" << X(0) << "' y1='" << Y(0) << "' x2='" << X(0) << "' y2='" << Y(1)
    << "' stroke='black'/>\n";
  f << "<text x='" << kW / 2 << "' y='" << kH - 15
    << "' text-anchor='middle' font-size='13'>time (months)</text>\n";
  f << "<text x='15' y='" << kH / 2
    << "' text-anchor='middle' font-size='13' transform='rotate(-90 15 " << kH / 2
    << ")'>survival probability</text>\n";

  int ci = 0;
  for (const auto& [name, c] : curves) {
    const char* color = kPalette[ci % 4];
    std::string d = "M " + num(X(0)) + " " + num(Y(1.0));
    double s = 1.0;
    for (std::size_t i = 0; i < c.event_times.size(); ++i) {
      d += " L " + num(X(c.event_times[i])) + " " + num(Y(s));
      s = c.survival_probs[i];
      d += " L " + num(X(c.event_times[i])) + " " + num(Y(s));
    }
    d += " L " + num(X(t_max)) + " " + num(Y(s));
    f << "<path d='" << d << "' fill='none' stroke='" << color << "' stroke-width='2'/>\n";
    f << "<text x='" << kW - kMargin - 5 << "' y='" << kMargin + 18 * (ci + 1)
      << "' text-anchor='end' font-size='13' fill='" << color << "'>" << name
      << "</text>\n";
    ++ci;
  }
  f << "</svg>\n";
}

void write_histogram_svg(const std::string& path, const std::vector<double>& values,
                         double bin_width, const std::string& title) {
  if (bin_width <= 0.0) throw std::invalid_argument("write_histogram_svg: bin width");
  double v_max = 0.0;
  for (double v : values) v_max = std::max(v_max, v);
  int n_bins = std::max(1, static_cast<int>(std::floor(v_max / bin_width)) + 1);
  std::vector<int> counts(static_cast<std::size_t>(n_bins), 0);
  for (double v : values) {
    int b = std::min(n_bins - 1, static_cast<int>(std::floor(v / bin_width)));
    counts[static_cast<std::size_t>(std::max(0, b))]++;
  }
  int c_max = 1;
  for (int c : counts) c_max = std::max(c_max, c);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_histogram_svg: cannot open " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kW << "' height='" << kH
    << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  f << "<text x='" << kW / 2 << "' y='30' text-anchor='middle' font-size='14'>" << title
    << "</text>\n";
  double plot_w = kW - 2 * kMargin, plot_h = kH - 2 * kMargin;
  double bw = plot_w / n_bins;
  for (int b = 0; b < n_bins; ++b) {
    double h = plot_h * counts[static_cast<std::size_t>(b)] / c_max;
    f << "<rect x='" << num(kMargin + b * bw) << "' y='" << num(kH - kMargin - h)
      << "' width='" << num(bw * 0.9) << "' height='" << num(h)
      << "' fill='#2980b9'/>\n";
    f << "<text x='" << num(kMargin + (b + 0.5) * bw) << "' y='" << kH - kMargin + 16
      << "' text-anchor='middle' font-size='10'>" << num(b * bin_width) << "</text>\n";
  }
  f << "<line x1='" << kMargin << "' y1='" << kH - kMargin << "' x2='" << kW - kMargin
    << "' y2='" << kH - kMargin << "' stroke='black'/>\n";
  f << "</svg>\n";
}

}  // namespace dcmil::plots
