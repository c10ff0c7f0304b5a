#ifndef CORTICAL_MEASURE_MCP_HPP
#define CORTICAL_MEASURE_MCP_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cortical/metric_space.hpp"
#include "cortical/surface_geometry.hpp"
#include "json.hpp"

namespace cortical {

template <int D>
using VecD = Eigen::Matrix<double, D, 1>;

// Regular lattice origin + sum_k idx[k] * step[k] * axes.col(k), axes orthonormal,
// idx[k] in [lo[k], hi[k]].
template <int D>
struct Lattice {
    VecD<D> origin = VecD<D>::Zero();
    Eigen::Matrix<double, D, D> axes = Eigen::Matrix<double, D, D>::Identity();
    std::array<double, D> step{};
    std::array<int, D> lo{};
    std::array<int, D> hi{};

    VecD<D> node(const std::array<int, D>& idx) const {
        VecD<D> p = origin;
        for (int k = 0; k < D; ++k) p += axes.col(k) * (idx[k] * step[k]);
        return p;
    }
    double cell_volume() const {
        double v = 1.0;
        for (double s : step) v *= s;
        return v;
    }
    std::size_t size() const {
        std::size_t n = 1;
        for (int k = 0; k < D; ++k) n *= static_cast<std::size_t>(hi[k] - lo[k] + 1);
        return n;
    }
    std::size_t linear(const std::array<int, D>& idx) const {
        std::size_t n = 0;
        for (int k = 0; k < D; ++k) n = n * (hi[k] - lo[k] + 1) + (idx[k] - lo[k]);
        return n;
    }
    std::array<int, D> unlinear(std::size_t n) const {
        std::array<int, D> idx{};
        for (int k = D - 1; k >= 0; --k) {
            const std::size_t w = hi[k] - lo[k] + 1;
            idx[k] = static_cast<int>(n % w) + lo[k];
            n /= w;
        }
        return idx;
    }
    // Axis-aligned lattice centered at c, half-width n_half cells per axis.
    static Lattice centered(const VecD<D>& c, const std::array<double, D>& step, int n_half);
};

enum class MeasureKind { gabor_volume, surface_area, lebesgue };

template <int D>
struct MeasureSpec {
    MeasureKind kind = MeasureKind::lebesgue;
    std::function<double(const VecD<D>&)> density;
};

// dist(q, x): distance of q from the ball center x. NumericError thrown by dist marks q
// as outside the ball and is counted in failures.
template <int D>
using DistanceFn = std::function<double(const VecD<D>&, const VecD<D>&)>;

enum class BallSearch { flood, scan };

struct BallCount {
    double volume = 0.0;
    std::size_t nodes = 0;
    std::size_t failures = 0;
    bool truncated = false;         // some member lies on the lattice bound
    std::array<int, 3> extent{};    // cells spanned per axis (first D used)
};

template <int D>
BallCount ball_count(const MeasureSpec<D>& spec, const DistanceFn<D>& dist, const Lattice<D>& lattice,
                     const VecD<D>& x, double r, BallSearch mode = BallSearch::flood,
                     std::vector<std::size_t>* members = nullptr);

// Throws RadiusUnresolved when the ball spans fewer than 4 cells on some lattice axis and
// GridTooSmall when it reaches the lattice bound.
template <int D>
double ball_volume(const MeasureSpec<D>& spec, const DistanceFn<D>& dist, const Lattice<D>& lattice,
                   const VecD<D>& x, double r, BallSearch mode = BallSearch::flood);

struct BallVolumeTable {
    std::vector<double> center;
    std::vector<double> radii;
    std::vector<double> volumes;

    nlohmann::json to_json() const;
    void write_csv(std::ostream& os) const;
    // Least-squares slope of log volume against log radius.
    double loglog_slope() const;
};

template <int D>
BallVolumeTable ball_volume_table(const MeasureSpec<D>& spec, const DistanceFn<D>& dist,
                                  const Lattice<D>& lattice, const VecD<D>& x, std::vector<double> radii);

// sum over A of density * cell / sqrt(mu(B_r(q))). ball_lattice(q) gives the counting lattice
// around each node.
template <int D>
double mu_r_mass(const MeasureSpec<D>& spec, const DistanceFn<D>& dist,
                 const std::function<Lattice<D>(const VecD<D>&)>& ball_lattice,
                 const std::vector<VecD<D>>& A, double cell_volume, double r);

struct DirichletOptions {
    double normalization = 0.0;         // N; <= 0 selects the dimension
    std::vector<std::uint8_t> outer;    // nodes integrated over x; empty = all
};

// Discrete Sturm form on a bounded lattice; u is indexed by Lattice::linear.
template <int D>
double dirichlet_form_Er(const MeasureSpec<D>& spec, const DistanceFn<D>& dist, const Lattice<D>& lattice,
                         const std::vector<double>& u, double r, const DirichletOptions& opt = {});

// Geometry needed for the measure contraction check in the plane. Phi_t(x, z) is
// exp(x, dilate(log(x, z), t)); dilate is linear with matrix dilate_jacobian(t).
struct McpGeometry {
    std::string name;
    MeasureSpec<2> measure;
    DistanceFn<2> dist;
    std::function<Vec2(const Vec2& x, const Vec2& z)> log;
    std::function<Vec2(const Vec2& x, const Vec2& v)> exp;
    std::function<Eigen::Matrix2d(double t)> dilate_jacobian;
    // Optional derivative of v -> exp(x, v); central differences when empty.
    std::function<Eigen::Matrix2d(const Vec2& x, const Vec2& v)> exp_jacobian;
    std::function<bool(const Vec2&)> exceptional;
    // Counting lattice for B_r(x), bounded generously.
    std::function<Lattice<2>(const Vec2& x, double r)> ball_lattice;
};

McpGeometry euclidean_mcp_geometry(int cells_per_radius = 20);
McpGeometry surface_mcp_geometry(const OrientationMap& map, int cells_per_radius = 20, const LogOptions& opt = {});

struct McpSample {
    std::size_t center = 0;
    double r = 0.0;
    double t = 0.0;
    std::size_t cells = 0;
    std::size_t excluded = 0;
    double ball_ratio = 0.0;    // mu(B_rt(x)) / mu(B_r(x))
    double volume_ratio = 0.0;  // mu(Phi_t(x, B_r(x))) / mu(B_r(x))
    double theta_cells = 0.0;   // worst single-cell required Theta
    double theta_ball = 0.0;    // required Theta for A = B_r(x)
    double theta_mu_r = -1.0;   // full mu_r form, -1 when not computed
};

struct McpOptions {
    double theta_max = 4.0;
    int cell_stride = 1;      // subsample the cells of A
    bool mu_r_form = false;   // also evaluate the mu_r form (costly)
    int mu_r_stride = 8;
};

struct McpReport {
    std::string geometry;
    std::vector<Vec2> centers;
    std::vector<double> radii;
    std::vector<double> t_values;
    std::vector<McpSample> samples;
    std::vector<double> theta_worst_by_radius;
    double theta_worst = 0.0;
    double theta_max = 4.0;
    bool decreasing = false;
    bool pass = false;
    std::vector<std::string> excluded;

    nlohmann::json to_json() const;
};

McpReport mcp_check(const McpGeometry& geom, const std::vector<Vec2>& centers, const std::vector<double>& radii,
                    const std::vector<double>& t_values, const McpOptions& opt = {});

// Measures and distances of the two spaces.
MeasureSpec<3> gabor_volume_measure(const MetricConfig& cfg);
DistanceFn<3> gabor_distance_fn(const MetricConfig& cfg);
MeasureSpec<2> surface_area_measure(const OrientationMap& map);
DistanceFn<2> surface_distance_fn(const OrientationMap& map, const LogOptions& opt = {});

}  // namespace cortical

#endif
