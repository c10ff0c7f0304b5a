#ifndef CORTICAL_METRIC_SPACE_HPP
#define CORTICAL_METRIC_SPACE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "cortical/filter_bank.hpp"
#include "cortical/grid.hpp"

namespace cortical {

enum class KernelMode { closed_form, numeric };

struct MetricConfig {
    GaborParams params;
    KernelMode mode = KernelMode::closed_form;
};

struct PatchSpec {
    double lambda = 1.0;
};

// Coordinates of p in the frame of p0: (a, b) = R_{theta0}^{-1}((x, y) - (x0, y0)).
struct RelativeCoords {
    double a, b, dtheta;
};
RelativeCoords relative_coords(const FeaturePoint& p, const FeaturePoint& p0);

// Squared filter norm t entering d^2 = 2t - 2K.
double norm_t(const MetricConfig& cfg);

double kernel_closed(const MetricConfig& cfg, const FeaturePoint& p, const FeaturePoint& p0);
// Re <psi_p, psi_p0> by quadrature on a grid covering both supports.
double kernel_numeric(const MetricConfig& cfg, const FeaturePoint& p, const FeaturePoint& p0);
double kernel(const MetricConfig& cfg, const FeaturePoint& p, const FeaturePoint& p0);
double distance(const MetricConfig& cfg, const FeaturePoint& p, const FeaturePoint& p0);

bool patch_contains(const PatchSpec& spec, const FeaturePoint& p, const FeaturePoint& p0);

struct MetricTensor {
    Eigen::Matrix3d g;
    Eigen::Matrix3d g_inv;
    FeaturePoint base;
};

MetricTensor local_metric_tensor(const MetricConfig& cfg, const FeaturePoint& p0);
// 8 sigma^6 pi^3 (1/(4s^2) + 2pi^2/l^2)(1/(4s^2))(s^2 pi^2/l^2), unnormalized filters.
double metric_det_formula(const GaborParams& params);
Eigen::Matrix3d limit_cometric(double A, double theta0);

// Largest eps (up to a 1% safety margin) with B_eps(p0) inside P(p0), found by
// sampling rays from p0 and taking the smallest distance to a point outside the patch.
double patch_ball_radius(const MetricConfig& cfg, const PatchSpec& spec, const FeaturePoint& p0,
                         int n_directions = 2000);

// Index half-widths outside of which every pair of nodes has d > r. Derived from the
// Gaussian envelope bound K <= t E. Axes where the bound is vacuous get count - 1.
std::array<int, 3> distance_window(const MetricConfig& cfg, const FeatureGrid& grid, double r);

// Calls fn(j) once for every node j != i whose index offsets from i lie in the window.
template <class Fn>
void for_each_in_window(const FeatureGrid& grid, std::size_t i, const std::array<int, 3>& w, Fn&& fn) {
    const auto c = grid.coords(i);
    const int nx = grid.x().count, ny = grid.y().count, nt = grid.theta().count;
    const bool per = grid.theta().periodic;
    int k_lo = c[2] - w[2], k_hi = c[2] + w[2];
    if (per) {
        if (2 * w[2] + 1 >= nt) {
            k_lo = c[2] - nt / 2;
            k_hi = k_lo + nt - 1;
        }
    } else {
        k_lo = std::max(k_lo, 0);
        k_hi = std::min(k_hi, nt - 1);
    }
    for (int a = std::max(0, c[0] - w[0]); a <= std::min(nx - 1, c[0] + w[0]); ++a)
        for (int b = std::max(0, c[1] - w[1]); b <= std::min(ny - 1, c[1] + w[1]); ++b)
            for (int k = k_lo; k <= k_hi; ++k) {
                const int kk = per ? ((k % nt) + nt) % nt : k;
                const std::size_t j = grid.index(a, b, kk);
                if (j != i) fn(j);
            }
}

// Three times the largest single-axis step distance over the theta samples.
double default_hop_radius(const MetricConfig& cfg, const FeatureGrid& grid);

class GluedDistance {
public:
    static constexpr double kUnreachable = std::numeric_limits<double>::infinity();

    // r_hop <= 0 selects default_hop_radius.
    GluedDistance(const MetricConfig& cfg, const PatchSpec& spec, const FeatureGrid& grid, double r_hop = 0.0);

    // Throws NodeNotOnGrid.
    double operator()(const FeaturePoint& p, const FeaturePoint& p0) const;
    double between(std::size_t i, std::size_t j) const;

    double r_hop() const { return r_hop_; }
    std::size_t edge_count() const { return col_.size() / 2; }
    const FeatureGrid& grid() const { return grid_; }
    // Whether a single hop p0 -> p is admissible: p in P(p0) and d(p, p0) <= r_hop.
    bool hop_admissible(const FeaturePoint& p, const FeaturePoint& p0) const;

private:
    const std::vector<double>& from(std::size_t s) const;

    MetricConfig cfg_;
    PatchSpec spec_;
    FeatureGrid grid_;
    double r_hop_;
    std::vector<std::size_t> row_ptr_;
    std::vector<std::size_t> col_;
    std::vector<double> w_;
    mutable std::mutex mu_;
    mutable std::unordered_map<std::size_t, std::vector<double>> cache_;
};

}  // namespace cortical

#endif
