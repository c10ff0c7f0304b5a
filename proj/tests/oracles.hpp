// Independent reference formulas used only by the tests.
#ifndef CORTICAL_TEST_ORACLES_HPP
#define CORTICAL_TEST_ORACLES_HPP

#include <cmath>
#include <complex>

namespace oracle {

inline constexpr double pi = 3.14159265358979323846;

// <psi_p, psi_0> for p = (x, y, theta), unnormalized filters, derived by completing the square
// in the Gaussian integral. Returns the complex value.
inline std::complex<double> gabor_inner_origin(double sigma, double lambda, double x, double y, double theta) {
    const double s2 = sigma * sigma;
    const double mag = s2 * pi *
                       std::exp(-(x * x + y * y) / (4 * s2) - 2 * s2 * pi * pi * (1 - std::cos(theta)) / (lambda * lambda));
    const double ph = -pi * (x * (1 + std::cos(theta)) + y * std::sin(theta)) / lambda;
    return std::polar(mag, ph);
}

// Mother filter written out directly.
inline std::complex<double> mother(double sigma, double lambda, double a, double b) {
    return std::exp(std::complex<double>(-(a * a + b * b) / (2 * sigma * sigma), 2 * pi * a / lambda));
}

}  // namespace oracle

#endif
