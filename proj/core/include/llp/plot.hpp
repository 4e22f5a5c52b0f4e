#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace llp {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;  ///< NaN entries are skipped
};

/// Writes a static PNG line chart: one colored polyline per series inside an
/// axis box, scaled to the joint data range. No text is rendered.
void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series, int width = 640,
                     int height = 400);

}  // namespace llp
