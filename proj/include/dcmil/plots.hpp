#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dcmil/survival.hpp"

// Static SVG renderings: Kaplan-Meier step curves and simple histograms.
namespace dcmil::plots {

void write_km_svg(const std::string& path,
                  const std::vector<std::pair<std::string, survival::KMCurve>>& curves);

// Histogram of values with a fixed bin width starting at zero.
void write_histogram_svg(const std::string& path, const std::vector<double>& values,
                         double bin_width, const std::string& title);

}  // namespace dcmil::plots
