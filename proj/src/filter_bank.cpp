#include "cortical/filter_bank.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "cortical/errors.hpp"
#include "cortical/io.hpp"

namespace cortical {

double wrap_angle(double a, double period) {
    double r = std::fmod(a, period);
    if (r < 0.0) r += period;
    if (r >= period) r = 0.0;
    return r;
}

void GaborParams::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive");
}

double GaborParams::analytic_sq_norm() const { return sigma * sigma * kPi; }

void RetinalGrid::validate() const {
    if (!std::isfinite(u_min) || !std::isfinite(u_max) || !std::isfinite(v_min) ||
        !std::isfinite(v_max))
        throw ConfigError("retinal grid extents must be finite");
    if (n_u < 2 || n_v < 2) throw ConfigError("retinal grid needs at least 2 samples per axis");
    if (!(u_max > u_min) || !(v_max > v_min)) throw ConfigError("retinal grid extents are empty");
}

cplx gabor_eval(const GaborParams& params, const FeaturePoint& p, double u, double v) {
    const double du = u - p.x, dv = v - p.y;
    const double c = std::cos(p.theta), s = std::sin(p.theta);
    // R_{-theta} applied to the translated argument
    const double a = c * du + s * dv;
    const double b = -s * du + c * dv;
    const double env = std::exp(-(a * a + b * b) / (2.0 * params.sigma * params.sigma));
    const double ph = kTwoPi * a / params.lambda;
    return {env * std::cos(ph), env * std::sin(ph)};
}

static double trap_weight(int i, int n) { return (i == 0 || i == n - 1) ? 0.5 : 1.0; }

double quadrature_sq_norm(const RetinalGrid& grid, std::span<const cplx> values) {
    const double cell = grid.step_u() * grid.step_v();
    double acc = 0.0;
    for (int i = 0; i < grid.n_u; ++i) {
        double row = 0.0;
        for (int j = 0; j < grid.n_v; ++j)
            row += trap_weight(j, grid.n_v) * std::norm(values[static_cast<std::size_t>(i) * grid.n_v + j]);
        acc += trap_weight(i, grid.n_u) * row;
    }
    return acc * cell;
}

SampledFilter sample_filter(const GaborParams& params, const FeaturePoint& p, const RetinalGrid& grid) {
    params.validate();
    grid.validate();
    const double reach = 4.0 * params.sigma;
    const double tol = 1e-12 * std::max(1.0, reach);
    if (grid.u_min > p.x - reach + tol || grid.u_max < p.x + reach - tol ||
        grid.v_min > p.y - reach + tol || grid.v_max < p.y + reach - tol)
        throw GridTooSmall("grid does not cover the 4 sigma support of the filter");
    const double hmax = params.lambda / 8.0;
    if (grid.step_u() > hmax * (1.0 + 1e-12) || grid.step_v() > hmax * (1.0 + 1e-12))
        throw GridTooCoarse("grid step exceeds lambda/8");

    SampledFilter f;
    f.grid = grid;
    f.values.resize(static_cast<std::size_t>(grid.n_u) * grid.n_v);
    for (int i = 0; i < grid.n_u; ++i)
        for (int j = 0; j < grid.n_v; ++j)
            f.values[static_cast<std::size_t>(i) * grid.n_v + j] = gabor_eval(params, p, grid.u(i), grid.v(j));
    f.sq_norm = quadrature_sq_norm(grid, f.values);
    if (params.normalize_unit) {
        const double scale = 1.0 / std::sqrt(f.sq_norm);
        for (auto& z : f.values) z *= scale;
        f.sq_norm = 1.0;
    }
    return f;
}

cplx l2_inner(const SampledFilter& f, const SampledFilter& g) {
    if (!(f.grid == g.grid)) throw GridMismatch("inner product of filters on different grids");
    const auto& grid = f.grid;
    const double cell = grid.step_u() * grid.step_v();
    cplx acc = 0.0;
    for (int i = 0; i < grid.n_u; ++i) {
        cplx row = 0.0;
        for (int j = 0; j < grid.n_v; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * grid.n_v + j;
            row += trap_weight(j, grid.n_v) * f.values[k] * std::conj(g.values[k]);
        }
        acc += trap_weight(i, grid.n_u) * row;
    }
    return acc * cell;
}

RetinalGrid covering_grid(const GaborParams& params, std::span<const FeaturePoint> centers,
                          double samples_per_lambda) {
    params.validate();
    if (centers.empty()) throw ConfigError("covering_grid needs at least one center");
    const double reach = 4.0 * params.sigma;
    double u0 = centers[0].x, u1 = u0, v0 = centers[0].y, v1 = v0;
    for (const auto& c : centers) {
        u0 = std::min(u0, c.x);
        u1 = std::max(u1, c.x);
        v0 = std::min(v0, c.y);
        v1 = std::max(v1, c.y);
    }
    const double h = std::min(params.lambda / samples_per_lambda, params.sigma / 4.0);
    RetinalGrid g;
    g.u_min = u0 - reach - h;
    g.u_max = u1 + reach + h;
    g.v_min = v0 - reach - h;
    g.v_max = v1 + reach + h;
    g.n_u = static_cast<int>(std::ceil((g.u_max - g.u_min) / h)) + 1;
    g.n_v = static_cast<int>(std::ceil((g.v_max - g.v_min) / h)) + 1;
    return g;
}

void write_filter_pgm(const SampledFilter& f, std::ostream& os) {
    const auto& g = f.grid;
    std::vector<double> img(f.values.size());
    // rows run from v_max down to v_min
    for (int r = 0; r < g.n_v; ++r)
        for (int c = 0; c < g.n_u; ++c)
            img[static_cast<std::size_t>(r) * g.n_u + c] =
                f.values[static_cast<std::size_t>(c) * g.n_v + (g.n_v - 1 - r)].real();
    io::write_pgm(os, g.n_u, g.n_v, img);
}

void write_filter_csv(const SampledFilter& f, std::ostream& os) {
    const auto& g = f.grid;
    os << "u,v,re,im\n";
    for (int i = 0; i < g.n_u; ++i)
        for (int j = 0; j < g.n_v; ++j) {
            const cplx z = f.values[static_cast<std::size_t>(i) * g.n_v + j];
            os << io::num(g.u(i)) << ',' << io::num(g.v(j)) << ',' << io::num(z.real()) << ','
               << io::num(z.imag()) << '\n';
        }
}

SampledFilter read_filter_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("empty filter csv");
    std::vector<std::array<double, 4>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = io::split_csv_line(line);
        if (cells.size() != 4) throw ConfigError("filter csv rows need 4 columns: " + line);
        std::array<double, 4> r{};
        for (int k = 0; k < 4; ++k) r[k] = std::stod(cells[k]);
        rows.push_back(r);
    }
    std::map<double, int> us, vs;
    for (const auto& r : rows) {
        us.emplace(r[0], 0);
        vs.emplace(r[1], 0);
    }
    SampledFilter f;
    f.grid.u_min = us.begin()->first;
    f.grid.u_max = us.rbegin()->first;
    f.grid.v_min = vs.begin()->first;
    f.grid.v_max = vs.rbegin()->first;
    f.grid.n_u = static_cast<int>(us.size());
    f.grid.n_v = static_cast<int>(vs.size());
    f.grid.validate();
    if (rows.size() != us.size() * vs.size()) throw ConfigError("filter csv is not a full grid");
    int k = 0;
    for (auto& e : us) e.second = k++;
    k = 0;
    for (auto& e : vs) e.second = k++;
    f.values.assign(rows.size(), cplx{});
    for (const auto& r : rows)
        f.values[static_cast<std::size_t>(us[r[0]]) * f.grid.n_v + vs[r[1]]] = {r[2], r[3]};
    f.sq_norm = quadrature_sq_norm(f.grid, f.values);
    return f;
}

}  // namespace cortical
