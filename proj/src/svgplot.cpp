#include "usra/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "usra/error.hpp"

namespace usra {

namespace {

constexpr double kWidth = 800, kHeight = 500;
constexpr double kMarginL = 70, kMarginR = 30, kMarginT = 50, kMarginB = 60;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_svg_chart(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series) {
    bool any = false;
    double xmin = std::numeric_limits<double>::max(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const Series& s : series)
        for (const auto& [x, y] : s.points) {
            any = true;
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!any) raise(ErrorKind::config, "svg chart: no data points");
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;

    const double pw = kWidth - kMarginL - kMarginR;
    const double ph = kHeight - kMarginT - kMarginB;
    auto sx = [&](double x) { return kMarginL + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return kHeight - kMarginB - (y - ymin) / (ymax - ymin) * ph; };

    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorKind::filesystem, "cannot open '" + path + "' for writing");
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    out << "  <rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    out << "  <text x=\"" << kWidth / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"18\" "
        << "font-family=\"sans-serif\">" << escape_xml(title) << "</text>\n";

    // axes
    out << "  <line x1=\"" << kMarginL << "\" y1=\"" << kHeight - kMarginB << "\" x2=\"" << kWidth - kMarginR
        << "\" y2=\"" << kHeight - kMarginB << "\" stroke=\"black\"/>\n";
    out << "  <line x1=\"" << kMarginL << "\" y1=\"" << kMarginT << "\" x2=\"" << kMarginL << "\" y2=\""
        << kHeight - kMarginB << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 5.0;
        const double fy = ymin + (ymax - ymin) * i / 5.0;
        out << "  <text x=\"" << sx(fx) << "\" y=\"" << kHeight - kMarginB + 18
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(fx) << "</text>\n";
        out << "  <text x=\"" << kMarginL - 8 << "\" y=\"" << sy(fy) + 4
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(fy) << "</text>\n";
        out << "  <line x1=\"" << kMarginL << "\" y1=\"" << sy(fy) << "\" x2=\"" << kWidth - kMarginR
            << "\" y2=\"" << sy(fy) << "\" stroke=\"#dddddd\"/>\n";
    }
    out << "  <text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 16
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << escape_xml(x_label)
        << "</text>\n";
    out << "  <text x=\"18\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
        << "font-family=\"sans-serif\" transform=\"rotate(-90 18 " << kHeight / 2 << ")\">" << escape_xml(y_label)
        << "</text>\n";

    // one path per series
    for (const Series& s : series) {
        if (s.points.empty()) continue;
        out << "  <path fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" d=\"";
        for (std::size_t i = 0; i < s.points.size(); ++i)
            out << (i == 0 ? "M" : " L") << fmt(sx(s.points[i].first)) << " " << fmt(sy(s.points[i].second));
        out << "\"/>\n";
    }

    // legend
    double ly = kMarginT + 6;
    for (const Series& s : series) {
        out << "  <line x1=\"" << kWidth - kMarginR - 150 << "\" y1=\"" << ly << "\" x2=\""
            << kWidth - kMarginR - 120 << "\" y2=\"" << ly << "\" stroke=\"" << s.color
            << "\" stroke-width=\"2\"/>\n";
        out << "  <text x=\"" << kWidth - kMarginR - 112 << "\" y=\"" << ly + 4
            << "\" font-size=\"12\" font-family=\"sans-serif\">" << escape_xml(s.label) << "</text>\n";
        ly += 18;
    }
    out << "</svg>\n";
    if (!out) raise(ErrorKind::filesystem, "short write to '" + path + "'");
}

}  // namespace usra
