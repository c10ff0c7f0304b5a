#include "cortical/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

namespace cortical::io {

std::string num(double v) {
    if (v == 0.0) return "0";  // folds -0
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_pgm(std::ostream& os, int width, int height, const std::vector<double>& values) {
    double lo = 0.0, hi = 0.0;
    if (!values.empty()) {
        auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        lo = *mn;
        hi = *mx;
    }
    const double span = hi - lo;
    os << "P2\n" << width << ' ' << height << "\n255\n";
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            double v = values[static_cast<std::size_t>(r) * width + c];
            int g = span > 0.0 ? static_cast<int>(std::lround(255.0 * (v - lo) / span)) : 0;
            os << g << (c + 1 < width ? ' ' : '\n');
        }
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

}  // namespace cortical::io
