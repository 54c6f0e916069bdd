#pragma once

#include <string>
#include <utility>
#include <vector>

namespace usra {

struct Series {
    std::string label;
    std::string color;  // css color
    std::vector<std::pair<double, double>> points;
};

/// Static SVG line chart: axes with tick labels, one <path> per series, a
/// small legend. Input must contain at least one non-empty series.
void write_svg_chart(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series);

}  // namespace usra
