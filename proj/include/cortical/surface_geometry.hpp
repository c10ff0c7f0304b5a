#ifndef CORTICAL_SURFACE_GEOMETRY_HPP
#define CORTICAL_SURFACE_GEOMETRY_HPP

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "cortical/grid.hpp"
#include "json.hpp"

namespace cortical {

using Vec2 = Eigen::Vector2d;

struct OrientationMap {
    PlaneGrid grid;
    std::vector<double> theta;                // Theta at nodes, in [0, pi)
    std::vector<std::complex<double>> field;  // plane-wave sum z, empty for analytic maps
    std::vector<std::size_t> pinwheel_set;    // node indices of Z
    std::vector<std::uint8_t> pinwheel_mask;  // per node
    std::uint64_t rng_seed = 0;
    int n_waves = 0;
    double wavenumber = 0.0;
    double pinwheel_threshold = 0.05;

    // Nearest node to xi belongs to the pinwheel set.
    bool exceptional(const Vec2& xi) const;
    std::size_t nearest_node(const Vec2& xi) const;
    Vec2 node_point(std::size_t idx) const;
};

OrientationMap generate_map(const PlaneGrid& grid, int n_waves, double wavenumber, std::uint64_t seed,
                            double pinwheel_threshold = 0.05);
// Theta = f(x, y) mod pi, empty pinwheel set.
OrientationMap map_from_function(const PlaneGrid& grid, const std::function<double(double, double)>& f);

struct FrameVW {
    Vec2 V;
    Vec2 W;
};
FrameVW frame(double theta);

// Bilinear interpolation of Theta with the four corner values lifted mod pi to the branch
// nearest ref. Throws LeftDomain outside the grid.
double theta_at(const OrientationMap& map, const Vec2& xi, double ref);
// Same, with ref taken from the nearest node.
double theta_at(const OrientationMap& map, const Vec2& xi);
// Central differences of the lifted Theta, step = grid step.
Vec2 theta_gradient(const OrientationMap& map, const Vec2& xi);

struct ExpCoords {
    double e1 = 0.0;
    double e2 = 0.0;
};

// Flow of e1 V + e2 W for the given time, classical RK4 with a fixed number of steps.
Vec2 flow(const OrientationMap& map, const Vec2& xi0, const ExpCoords& c, double time, int steps = 64);
Vec2 exp_map(const OrientationMap& map, const Vec2& xi0, const ExpCoords& c, int steps = 64);

struct LogOptions {
    int max_iter = 50;
    double tol = 1e-11;  // residual in position
    int steps = 64;
};
ExpCoords log_map(const OrientationMap& map, const Vec2& xi0, const Vec2& xi1, const LogOptions& opt = {});

double surface_distance(const OrientationMap& map, const Vec2& xi0, const Vec2& xi1, const LogOptions& opt = {});

ExpCoords dilate(const ExpCoords& c, double t);
// Phi_t(x, y) = exp_x(dilate(log_x(y), t)).
Vec2 contract(const OrientationMap& map, const Vec2& x, const Vec2& y, double t, const LogOptions& opt = {});

// |N_h| for the graph of Theta, without the exceptional-set check.
double horizontal_normal_norm(const OrientationMap& map, const Vec2& xi);
// |N_h| sqrt(det g_Sigma) with det g_Sigma = 1. Throws OnExceptionalSet.
double area_density(const OrientationMap& map, const Vec2& xi);

void write_map_pgm(const OrientationMap& map, std::ostream& os);
void write_map_csv(const OrientationMap& map, std::ostream& os);
nlohmann::json pinwheels_json(const OrientationMap& map);

}  // namespace cortical

#endif
