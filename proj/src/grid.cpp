#include "cortical/grid.hpp"

#include <cmath>
#include <string>

#include "cortical/errors.hpp"

namespace cortical {

Axis Axis::open_interval(double lo, double hi, double step) {
    if (!(step > 0.0) || !(hi > lo)) throw ConfigError("open interval axis needs hi > lo and step > 0");
    const double eps = 1e-9 * step;
    const long k0 = static_cast<long>(std::floor((lo + eps) / step)) + 1;
    const long k1 = static_cast<long>(std::ceil((hi - eps) / step)) - 1;
    if (k1 < k0) throw ConfigError("open interval contains no grid multiple");
    Axis a;
    a.start = k0 * step;
    a.step = step;
    a.count = static_cast<int>(k1 - k0 + 1);
    return a;
}

Axis Axis::closed(double lo, double hi, int count) {
    if (count < 2 || !(hi > lo)) throw ConfigError("closed axis needs hi > lo and at least 2 samples");
    Axis a;
    a.start = lo;
    a.step = (hi - lo) / (count - 1);
    a.count = count;
    return a;
}

Axis Axis::circle(int count, double period) {
    if (count < 1) throw ConfigError("circle axis needs at least 1 sample");
    Axis a;
    a.start = 0.0;
    a.step = period / count;
    a.count = count;
    a.periodic = true;
    return a;
}

int Axis::find(double v) const {
    double off = (v - start) / step;
    if (periodic) off = wrap_angle(off, count);
    const long k = std::lround(off);
    double miss = std::abs(off - k);
    long kk = k;
    if (periodic && kk == count) kk = 0;
    if (kk < 0 || kk >= count || miss > 1e-9) return -1;
    return static_cast<int>(kk);
}

void Axis::validate(const char* name) const {
    if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError(std::string(name) + " step must be positive");
    if (count < 1) throw ConfigError(std::string(name) + " needs at least one sample");
    if (!std::isfinite(start)) throw ConfigError(std::string(name) + " start must be finite");
}

FeatureGrid::FeatureGrid(Axis x, Axis y, Axis theta) : x_(x), y_(y), theta_(theta) {
    x_.validate("x axis");
    y_.validate("y axis");
    theta_.validate("theta axis");
    if (theta_.periodic && std::abs(theta_.count * theta_.step - kTwoPi) > 1e-9)
        throw ConfigError("periodic theta axis must cover exactly 2pi");
}

std::array<int, 3> FeatureGrid::coords(std::size_t idx) const {
    const int k = static_cast<int>(idx % theta_.count);
    idx /= theta_.count;
    const int j = static_cast<int>(idx % y_.count);
    const int i = static_cast<int>(idx / y_.count);
    return {i, j, k};
}

FeaturePoint FeatureGrid::point(std::size_t idx) const {
    auto [i, j, k] = coords(idx);
    return FeaturePoint(x_.at(i), y_.at(j), theta_.at(k));
}

std::size_t FeatureGrid::find(const FeaturePoint& p) const {
    const int i = x_.find(p.x), j = y_.find(p.y);
    int k = -1;
    // p.theta is reduced mod 2pi; the axis may store raw values outside [0, 2pi)
    for (int c = 0; c < theta_.count && k < 0; ++c) {
        double d = wrap_angle(theta_.at(c) - p.theta);
        if (d > kPi) d -= kTwoPi;
        if (std::abs(d) <= 1e-9 * theta_.step) k = c;
    }
    if (i < 0 || j < 0 || k < 0) throw NodeNotOnGrid("point is not a node of the feature grid");
    return index(i, j, k);
}

PlaneGrid::PlaneGrid(Axis x, Axis y) : x_(x), y_(y) {
    x_.validate("x axis");
    y_.validate("y axis");
}

bool PlaneGrid::contains(double x, double y) const {
    return x >= x_.lo() && x <= x_.hi() && y >= y_.lo() && y <= y_.hi();
}

}  // namespace cortical
