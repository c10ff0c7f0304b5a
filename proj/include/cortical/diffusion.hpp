#ifndef CORTICAL_DIFFUSION_HPP
#define CORTICAL_DIFFUSION_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cortical/grid.hpp"
#include "cortical/metric_space.hpp"
#include "cortical/surface_geometry.hpp"

namespace cortical {

struct SparseKernel {
    std::size_t n = 0;
    std::vector<std::size_t> row_ptr;  // n + 1 offsets
    std::vector<std::uint32_t> col;    // sorted within each row
    std::vector<double> val;           // all > 0
    std::string cutoff;
    std::size_t isolated = 0;  // rows holding only the diagonal

    std::size_t nnz() const { return col.size(); }
    std::size_t row_size(std::size_t i) const { return row_ptr[i + 1] - row_ptr[i]; }
    // Stored value or 0.
    double at(std::size_t i, std::size_t j) const;
};

double sigmoid(double z);

enum class Activation { sigmoid, threshold };

struct KernelBuildParams {
    double r_cut = 0.75;  // metric units
    Activation activation = Activation::sigmoid;
    double threshold = 0.1;  // on K / t
    // Keep nodes without neighbours instead of throwing EmptyRow. On the surface, nodes next to a
    // pinwheel can see Theta jump past every neighbour.
    bool allow_isolated = false;
};

// Candidate generator: calls emit(j) for every j that may lie within the cutoff of i.
using CandidateFn = std::function<void(std::size_t i, const std::function<void(std::size_t)>& emit)>;

SparseKernel build_base_kernel(const MetricConfig& cfg, const std::vector<FeaturePoint>& nodes,
                               const CandidateFn& candidates, const KernelBuildParams& params);
SparseKernel build_base_kernel(const MetricConfig& cfg, const FeatureGrid& grid, const KernelBuildParams& params);
// Surface restriction: node (x, y) carries the filter at angle Theta(x, y).
SparseKernel build_base_kernel(const MetricConfig& cfg, const OrientationMap& map, const KernelBuildParams& params);

std::vector<FeaturePoint> surface_nodes(const OrientationMap& map);
// Spatial candidates within the Gaussian-envelope bound for distance r.
CandidateFn surface_candidates(const MetricConfig& cfg, const OrientationMap& map, double r);
CandidateFn grid_candidates(const MetricConfig& cfg, const FeatureGrid& grid, double r);

SparseKernel cl_normalize(const SparseKernel& k, double alpha, const std::vector<double>& Q,
                          const std::vector<double>& mu);

struct PropagationParams {
    int n_steps = 4;
    Activation activation = Activation::sigmoid;
    double threshold = 0.1;
    double alpha = 1.0;
    std::function<double(std::size_t)> Q;  // empty = 1

    void validate() const;
};

// (H f)(p) = sum_q S(p, q) f(q) mu(q).
std::vector<double> apply_H(const SparseKernel& S, const std::vector<double>& f, const std::vector<double>& mu);
std::vector<double> propagate(const SparseKernel& S, std::size_t p0, int n_steps, const std::vector<double>& mu);
// Base kernel -> S^(alpha) -> propagate, all from params.
std::vector<double> propagate(const SparseKernel& base, std::size_t p0, const PropagationParams& params,
                              const std::vector<double>& mu);

enum class Connectivity { require, allow };

struct GraphSpec {
    std::size_t n = 0;
    std::vector<double> mu;
    std::vector<std::size_t> row_ptr;
    std::vector<std::uint32_t> col;
    std::vector<double> w;
    double rho = 0.0;
    double kappa = 0.0;
    int components = 0;

    std::size_t edge_count() const { return col.size() / 2; }
    // max_i sum_j w_ij / mu_i
    double max_rate() const;
};

// Edges join i != j with dist(i, j) < rho, weights kappa mu_i mu_j. dist is evaluated once per
// unordered pair.
GraphSpec build_graph(std::size_t n, const std::vector<double>& mu, const CandidateFn& candidates,
                      const std::function<double(std::size_t, std::size_t)>& dist, double rho, double kappa,
                      Connectivity policy = Connectivity::require);
GraphSpec build_graph(const FeatureGrid& grid, const MetricConfig& cfg, const std::vector<double>& mu, double rho,
                      double kappa, Connectivity policy = Connectivity::require);
GraphSpec build_graph(const OrientationMap& map, const MetricConfig& cfg, const std::vector<double>& mu, double rho,
                      double kappa, Connectivity policy = Connectivity::allow);

// kappa such that L|x|^2 = 2 dim on a flat isotropic lattice with cells of measure cell_measure.
double calibrate_kappa(int dim, double rho, double cell_measure);

std::vector<double> laplacian_apply(const GraphSpec& g, const std::vector<double>& f);

struct HeatState {
    std::vector<double> f;
    double time = 0.0;
    int steps = 0;
};

std::vector<double> dirac(const GraphSpec& g, std::size_t node);
double weighted_mass(const std::vector<double>& mu, const std::vector<double>& f);
// Throws UnstableStep when dt * max_rate() >= 1.
HeatState heat_run(const GraphSpec& g, std::vector<double> f0, double dt, int n_iter);

struct Projection {
    int nx = 0, ny = 0;
    std::vector<double> max_value;  // index i * ny + j
    std::vector<double> theta_bar;  // raw theta coordinate of the maximizing sample
    std::vector<int> k_index;
};

Projection argmax_orientation(const FeatureGrid& grid, const std::vector<double>& field, double theta0);

// Cells with value >= the 90th percentile of the strictly positive values.
std::vector<std::uint8_t> top_decile_mask(const std::vector<double>& v);
double jaccard(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

struct PatchinessReport {
    double median_top = 0.0;
    double median_all = 0.0;
    double ratio = 0.0;
    std::size_t top_count = 0;
};

double orientation_difference(double a, double b);  // in [0, pi/2]
PatchinessReport patchiness_stats(const OrientationMap& map, const std::vector<double>& field, double theta0);

struct AxisMoments {
    double along = 0.0;
    double across = 0.0;
    double ratio = 0.0;
};

// Weighted second moments of a plane field about c, along direction angle and across it.
AxisMoments second_moments(const PlaneGrid& plane, const std::vector<double>& w, const Vec2& c, double angle);

PlaneGrid plane_of(const FeatureGrid& grid);

}  // namespace cortical

#endif
