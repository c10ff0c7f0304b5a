#ifndef CORTICAL_FILTER_BANK_HPP
#define CORTICAL_FILTER_BANK_HPP

#include <complex>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace cortical {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

// Reduce an angle to [0, period).
double wrap_angle(double a, double period = kTwoPi);

struct GaborParams {
    double lambda = 1.0;
    double sigma = 1.0;
    bool normalize_unit = true;

    void validate() const;
    // Squared norm of the continuous filter, sigma^2 pi.
    double analytic_sq_norm() const;
};

struct FeaturePoint {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;  // always in [0, 2pi)

    FeaturePoint() = default;
    FeaturePoint(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}
};

struct RetinalGrid {
    double u_min = -1.0, u_max = 1.0;
    double v_min = -1.0, v_max = 1.0;
    int n_u = 2, n_v = 2;

    void validate() const;
    double step_u() const { return (u_max - u_min) / (n_u - 1); }
    double step_v() const { return (v_max - v_min) / (n_v - 1); }
    double u(int i) const { return u_min + i * step_u(); }
    double v(int j) const { return v_min + j * step_v(); }
    bool operator==(const RetinalGrid&) const = default;
};

struct SampledFilter {
    RetinalGrid grid;
    std::vector<cplx> values;  // index i * n_v + j, i along u
    double sq_norm = 0.0;
};

cplx gabor_eval(const GaborParams& params, const FeaturePoint& p, double u, double v);

SampledFilter sample_filter(const GaborParams& params, const FeaturePoint& p, const RetinalGrid& grid);

cplx l2_inner(const SampledFilter& f, const SampledFilter& g);

// Trapezoidal quadrature of |values|^2.
double quadrature_sq_norm(const RetinalGrid& grid, std::span<const cplx> values);

// Smallest uniform grid covering [x-4s, x+4s] x [y-4s, y+4s] for every point, with step at
// most min(lambda/samples_per_lambda, sigma/4).
RetinalGrid covering_grid(const GaborParams& params, std::span<const FeaturePoint> centers,
                          double samples_per_lambda = 8.0);

void write_filter_pgm(const SampledFilter& f, std::ostream& os);
void write_filter_csv(const SampledFilter& f, std::ostream& os);
// Reads rows u,v,re,im as written by write_filter_csv. sq_norm is recomputed.
SampledFilter read_filter_csv(std::istream& is);

}  // namespace cortical

#endif
