#pragma once

// Minimal SVG line charts for run reports.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gossipvar/io.hpp"

namespace gossipvar {

struct ChartSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
    double stroke_width = 1.5;
    double opacity = 1.0;
    bool legend = true;
};

struct ChartMarker {
    double x = 0;
    std::string label;
};

inline std::string xml_escape(const std::string& s) {
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

class LineChart {
public:
    std::string title;
    std::string x_label = "tick";
    std::string y_label;
    bool log_y = false;
    std::vector<ChartSeries> series;
    std::vector<ChartMarker> markers;

    std::string render(int width = 800, int height = 480) const {
        constexpr double left = 80, right = 170, top = 40, bottom = 50;
        const double pw = width - left - right;
        const double ph = height - top - bottom;

        double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
        for (const auto& s : series)
            for (auto [x, y] : s.points) {
                if (log_y && !(y > 0)) continue;
                const double ty = log_y ? std::log10(y) : y;
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, ty);
                y1 = std::max(y1, ty);
            }
        if (!std::isfinite(x0)) {
            x0 = 0;
            x1 = 1;
            y0 = 0;
            y1 = 1;
        }
        if (x1 == x0) x1 = x0 + 1;
        if (log_y) {
            y0 = std::floor(y0);
            y1 = std::ceil(y1);
        }
        if (y1 == y0) y1 = y0 + 1;

        auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
        auto sy = [&](double y) {
            const double ty = log_y ? std::log10(y) : y;
            return top + (1.0 - (ty - y0) / (y1 - y0)) * ph;
        };

        std::ostringstream o;
        o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
          << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
          << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
          << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
          << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
          << "</text>\n"
          << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
          << "\" fill=\"none\" stroke=\"#444\"/>\n";

        for (int i = 0; i <= 5; ++i) {
            const double x = x0 + (x1 - x0) * i / 5.0;
            o << "<text x=\"" << sx(x) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
              << format_tick(x) << "</text>\n";
        }
        if (log_y) {
            for (int e = static_cast<int>(y0); e <= static_cast<int>(y1); ++e) {
                const double yy = top + (1.0 - (e - y0) / (y1 - y0)) * ph;
                o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << yy << "\" y2=\"" << yy
                  << "\" stroke=\"#ddd\"/>\n"
                  << "<text x=\"" << left - 6 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\">1e" << e
                  << "</text>\n";
            }
        } else {
            for (int i = 0; i <= 5; ++i) {
                const double y = y0 + (y1 - y0) * i / 5.0;
                const double yy = top + (1.0 - i / 5.0) * ph;
                o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << yy << "\" y2=\"" << yy
                  << "\" stroke=\"#ddd\"/>\n"
                  << "<text x=\"" << left - 6 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\">" << format_tick(y)
                  << "</text>\n";
            }
        }
        o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">"
          << xml_escape(x_label) << "</text>\n"
          << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
          << xml_escape(y_label) << (log_y ? " (log scale)" : "") << "</text>\n";

        static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                        "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
        int legend_row = 0;
        for (std::size_t i = 0; i < series.size(); ++i) {
            const auto& s = series[i];
            const char* color = palette[i % 10];
            o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << s.stroke_width
              << "\" stroke-opacity=\"" << s.opacity << "\" points=\"";
            for (auto [x, y] : s.points) {
                if (log_y && !(y > 0)) continue;
                o << sx(x) << ',' << sy(y) << ' ';
            }
            o << "\"/>\n";
            if (s.legend) {
                const double ly = top + 10 + 18 * legend_row++;
                o << "<line x1=\"" << left + pw + 10 << "\" x2=\"" << left + pw + 30 << "\" y1=\"" << ly << "\" y2=\""
                  << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
                  << "<text x=\"" << left + pw + 35 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.name)
                  << "</text>\n";
            }
        }
        for (std::size_t i = 0; i < markers.size(); ++i) {
            const auto& m = markers[i];
            if (m.x < x0 || m.x > x1) continue;
            o << "<line x1=\"" << sx(m.x) << "\" x2=\"" << sx(m.x) << "\" y1=\"" << top << "\" y2=\"" << top + ph
              << "\" stroke=\"#000\" stroke-dasharray=\"4,3\"/>\n"
              << "<text x=\"" << sx(m.x) + 4 << "\" y=\"" << top + 14 + 14 * static_cast<double>(i) << "\">"
              << xml_escape(m.label) << "</text>\n";
        }
        o << "</svg>\n";
        return o.str();
    }

private:
    static std::string format_tick(double v) {
        std::ostringstream s;
        s.precision(4);
        s << v;
        return s.str();
    }
};

}  // namespace gossipvar
