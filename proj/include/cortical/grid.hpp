#ifndef CORTICAL_GRID_HPP
#define CORTICAL_GRID_HPP

#include <array>
#include <cstddef>

#include "cortical/filter_bank.hpp"

namespace cortical {

struct Axis {
    double start = 0.0;
    double step = 1.0;
    int count = 1;
    bool periodic = false;  // values wrap with period count * step

    double at(int i) const { return start + i * step; }
    double lo() const { return start; }
    double hi() const { return at(count - 1); }

    // Integer multiples of step lying strictly inside (lo, hi).
    static Axis open_interval(double lo, double hi, double step);
    // count samples from lo to hi inclusive.
    static Axis closed(double lo, double hi, int count);
    // count samples covering [0, period).
    static Axis circle(int count, double period = kTwoPi);

    // Index of the sample equal to v within 1e-9 steps, or -1.
    int find(double v) const;
    void validate(const char* name) const;
};

class FeatureGrid {
public:
    FeatureGrid() = default;
    FeatureGrid(Axis x, Axis y, Axis theta);

    const Axis& x() const { return x_; }
    const Axis& y() const { return y_; }
    const Axis& theta() const { return theta_; }

    std::size_t size() const { return static_cast<std::size_t>(x_.count) * y_.count * theta_.count; }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * y_.count + j) * theta_.count + k;
    }
    std::array<int, 3> coords(std::size_t idx) const;
    FeaturePoint point(std::size_t idx) const;
    // Raw theta coordinate of the node, before reduction mod 2pi.
    double theta_value(std::size_t idx) const { return theta_.at(coords(idx)[2]); }
    double cell_volume() const { return x_.step * y_.step * theta_.step; }

    // Throws NodeNotOnGrid.
    std::size_t find(const FeaturePoint& p) const;

private:
    Axis x_, y_, theta_;
};

class PlaneGrid {
public:
    PlaneGrid() = default;
    PlaneGrid(Axis x, Axis y);

    const Axis& x() const { return x_; }
    const Axis& y() const { return y_; }
    std::size_t size() const { return static_cast<std::size_t>(x_.count) * y_.count; }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * y_.count + j; }
    std::array<int, 2> coords(std::size_t idx) const {
        return {static_cast<int>(idx / y_.count), static_cast<int>(idx % y_.count)};
    }
    double cell_area() const { return x_.step * y_.step; }
    bool contains(double x, double y) const;

private:
    Axis x_, y_;
};

}  // namespace cortical

#endif
