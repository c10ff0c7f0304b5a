#include "cortical/surface_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "cortical/errors.hpp"
#include "cortical/io.hpp"

namespace cortical {

namespace {

double lift(double v, double ref) { return v + kPi * std::round((ref - v) / kPi); }

void check_inside(const PlaneGrid& g, const Vec2& xi) {
    const double tx = 1e-12 * std::max(1.0, std::abs(g.x().hi())), ty = 1e-12 * std::max(1.0, std::abs(g.y().hi()));
    if (!(xi.x() >= g.x().lo() - tx && xi.x() <= g.x().hi() + tx && xi.y() >= g.y().lo() - ty &&
          xi.y() <= g.y().hi() + ty))
        throw LeftDomain("point (" + io::num(xi.x()) + ", " + io::num(xi.y()) + ") outside the map");
}

}  // namespace

std::size_t OrientationMap::nearest_node(const Vec2& xi) const {
    const int i = std::clamp(static_cast<int>(std::lround((xi.x() - grid.x().start) / grid.x().step)), 0,
                             grid.x().count - 1);
    const int j = std::clamp(static_cast<int>(std::lround((xi.y() - grid.y().start) / grid.y().step)), 0,
                             grid.y().count - 1);
    return grid.index(i, j);
}

bool OrientationMap::exceptional(const Vec2& xi) const {
    return !pinwheel_mask.empty() && pinwheel_mask[nearest_node(xi)] != 0;
}

Vec2 OrientationMap::node_point(std::size_t idx) const {
    auto c = grid.coords(idx);
    return {grid.x().at(c[0]), grid.y().at(c[1])};
}

OrientationMap generate_map(const PlaneGrid& grid, int n_waves, double wavenumber, std::uint64_t seed,
                            double pinwheel_threshold) {
    if (n_waves < 1) throw ConfigError("n_waves must be at least 1");
    if (!(wavenumber > 0.0)) throw ConfigError("wavenumber must be positive");
    std::mt19937_64 gen(seed);
    std::vector<double> phase(n_waves);
    // explicit 53-bit mapping keeps the phases identical across standard libraries
    for (auto& p : phase) p = kTwoPi * static_cast<double>(gen() >> 11) * 0x1.0p-53;
    std::vector<double> kx(n_waves), ky(n_waves);
    for (int j = 0; j < n_waves; ++j) {
        const double a = (j + 1) * kPi / n_waves;
        kx[j] = wavenumber * std::cos(a);
        ky[j] = wavenumber * std::sin(a);
    }
    OrientationMap m;
    m.grid = grid;
    m.rng_seed = seed;
    m.n_waves = n_waves;
    m.wavenumber = wavenumber;
    m.pinwheel_threshold = pinwheel_threshold;
    m.theta.resize(grid.size());
    m.field.resize(grid.size());
    double zmax = 0.0;
    for (int i = 0; i < grid.x().count; ++i)
        for (int j = 0; j < grid.y().count; ++j) {
            const double x = grid.x().at(i), y = grid.y().at(j);
            std::complex<double> z = 0.0;
            for (int w = 0; w < n_waves; ++w) z += std::polar(1.0, kx[w] * x + ky[w] * y + phase[w]);
            const std::size_t idx = grid.index(i, j);
            m.field[idx] = z;
            m.theta[idx] = wrap_angle(0.5 * std::arg(z), kPi);
            zmax = std::max(zmax, std::abs(z));
        }
    m.pinwheel_mask.assign(grid.size(), 0);
    for (std::size_t idx = 0; idx < grid.size(); ++idx)
        if (std::abs(m.field[idx]) < pinwheel_threshold * zmax) {
            m.pinwheel_mask[idx] = 1;
            m.pinwheel_set.push_back(idx);
        }
    return m;
}

OrientationMap map_from_function(const PlaneGrid& grid, const std::function<double(double, double)>& f) {
    OrientationMap m;
    m.grid = grid;
    m.theta.resize(grid.size());
    for (int i = 0; i < grid.x().count; ++i)
        for (int j = 0; j < grid.y().count; ++j)
            m.theta[grid.index(i, j)] = wrap_angle(f(grid.x().at(i), grid.y().at(j)), kPi);
    m.pinwheel_mask.assign(grid.size(), 0);
    return m;
}

FrameVW frame(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {Vec2(-s, c), Vec2(c, s)};
}

double theta_at(const OrientationMap& map, const Vec2& xi, double ref) {
    const auto& g = map.grid;
    check_inside(g, xi);
    const double fx = (xi.x() - g.x().start) / g.x().step;
    const double fy = (xi.y() - g.y().start) / g.y().step;
    const int i = std::clamp(static_cast<int>(std::floor(fx)), 0, std::max(0, g.x().count - 2));
    const int j = std::clamp(static_cast<int>(std::floor(fy)), 0, std::max(0, g.y().count - 2));
    const int i1 = std::min(i + 1, g.x().count - 1), j1 = std::min(j + 1, g.y().count - 1);
    const double u = std::clamp(fx - i, 0.0, 1.0), v = std::clamp(fy - j, 0.0, 1.0);
    const double t00 = lift(map.theta[g.index(i, j)], ref);
    const double t10 = lift(map.theta[g.index(i1, j)], ref);
    const double t01 = lift(map.theta[g.index(i, j1)], ref);
    const double t11 = lift(map.theta[g.index(i1, j1)], ref);
    return (1 - u) * (1 - v) * t00 + u * (1 - v) * t10 + (1 - u) * v * t01 + u * v * t11;
}

double theta_at(const OrientationMap& map, const Vec2& xi) {
    check_inside(map.grid, xi);
    return theta_at(map, xi, map.theta[map.nearest_node(xi)]);
}

Vec2 theta_gradient(const OrientationMap& map, const Vec2& xi) {
    const auto& g = map.grid;
    const double ref = theta_at(map, xi);
    Vec2 grad;
    for (int ax = 0; ax < 2; ++ax) {
        const double h = ax == 0 ? g.x().step : g.y().step;
        const double lo = ax == 0 ? g.x().lo() : g.y().lo();
        const double hi = ax == 0 ? g.x().hi() : g.y().hi();
        Vec2 a = xi, b = xi;
        a[ax] = std::max(lo, xi[ax] - h);
        b[ax] = std::min(hi, xi[ax] + h);
        grad[ax] = (theta_at(map, b, ref) - theta_at(map, a, ref)) / (b[ax] - a[ax]);
    }
    return grad;
}

Vec2 flow(const OrientationMap& map, const Vec2& xi0, const ExpCoords& c, double time, int steps) {
    if (steps < 1) throw ConfigError("flow needs at least one step");
    check_inside(map.grid, xi0);
    if (c.e1 == 0.0 && c.e2 == 0.0) return xi0;
    double ref = theta_at(map, xi0);
    auto field = [&](const Vec2& p) {
        const auto f = frame(theta_at(map, p, ref));
        return Vec2(c.e1 * f.V + c.e2 * f.W);
    };
    const double h = time / steps;
    Vec2 p = xi0;
    for (int s = 0; s < steps; ++s) {
        const Vec2 k1 = field(p);
        const Vec2 k2 = field(p + 0.5 * h * k1);
        const Vec2 k3 = field(p + 0.5 * h * k2);
        const Vec2 k4 = field(p + h * k3);
        p += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        // follow the branch of Theta along the trajectory
        ref = theta_at(map, p, ref);
    }
    check_inside(map.grid, p);
    return p;
}

Vec2 exp_map(const OrientationMap& map, const Vec2& xi0, const ExpCoords& c, int steps) {
    return flow(map, xi0, c, 1.0, steps);
}

ExpCoords log_map(const OrientationMap& map, const Vec2& xi0, const Vec2& xi1, const LogOptions& opt) {
    check_inside(map.grid, xi0);
    check_inside(map.grid, xi1);
    const auto f0 = frame(theta_at(map, xi0));
    const Vec2 dx = xi1 - xi0;
    Eigen::Vector2d v(f0.V.dot(dx), f0.W.dot(dx));
    if (dx.norm() == 0.0) return {};

    const double inf = std::numeric_limits<double>::infinity();
    auto residual = [&](const Eigen::Vector2d& c, Vec2* out) {
        try {
            Vec2 r = exp_map(map, xi0, {c[0], c[1]}, opt.steps) - xi1;
            if (out) *out = r;
            return r.norm();
        } catch (const LeftDomain&) {
            return inf;
        }
    };
    Vec2 F;
    double fn = residual(v, &F);
    const double h = 1e-6;
    for (int it = 0; it <= opt.max_iter; ++it) {
        if (fn <= opt.tol) return {v[0], v[1]};
        if (it == opt.max_iter || !std::isfinite(fn)) break;
        Eigen::Matrix2d J;
        for (int k = 0; k < 2; ++k) {
            Eigen::Vector2d a = v, b = v;
            a[k] -= h;
            b[k] += h;
            Vec2 fa, fb;
            if (!std::isfinite(residual(a, &fa)) || !std::isfinite(residual(b, &fb)))
                throw NoConvergence("shooting left the map domain");
            J.col(k) = (fb - fa) / (2.0 * h);
        }
        const double det = J.determinant();
        if (!std::isfinite(det) || std::abs(det) < 1e-14) throw NoConvergence("singular shooting Jacobian");
        const Eigen::Vector2d step = -J.inverse() * F;
        double alpha = 1.0;
        bool improved = false;
        while (alpha > 1e-4) {
            Vec2 Fn;
            const double nn = residual(v + alpha * step, &Fn);
            if (nn < fn) {
                v += alpha * step;
                F = Fn;
                fn = nn;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!improved) break;
    }
    throw NoConvergence("log map residual " + io::num(fn) + " after " + std::to_string(opt.max_iter) +
                        " iterations");
}

double surface_distance(const OrientationMap& map, const Vec2& xi0, const Vec2& xi1, const LogOptions& opt) {
    const auto c = log_map(map, xi0, xi1, opt);
    return std::sqrt(c.e1 * c.e1 + std::abs(c.e2));
}

ExpCoords dilate(const ExpCoords& c, double t) { return {t * c.e1, t * t * c.e2}; }

Vec2 contract(const OrientationMap& map, const Vec2& x, const Vec2& y, double t, const LogOptions& opt) {
    return exp_map(map, x, dilate(log_map(map, x, y, opt), t), opt.steps);
}

double area_density(const OrientationMap& map, const Vec2& xi) {
    if (map.exceptional(xi)) throw OnExceptionalSet("area density requested at a pinwheel cell");
    return horizontal_normal_norm(map, xi);
}

double horizontal_normal_norm(const OrientationMap& map, const Vec2& xi) {
    const double th = theta_at(map, xi);
    const auto f = frame(th);
    const Vec2 grad = theta_gradient(map, xi);
    const double vt = f.V.dot(grad), wt = f.W.dot(grad);
    return std::sqrt((1.0 + vt * vt) / (1.0 + vt * vt + wt * wt));
}

void write_map_pgm(const OrientationMap& map, std::ostream& os) {
    const auto& g = map.grid;
    os << "P2\n" << g.x().count << ' ' << g.y().count << "\n255\n";
    for (int r = 0; r < g.y().count; ++r)
        for (int c = 0; c < g.x().count; ++c) {
            const double th = map.theta[g.index(c, g.y().count - 1 - r)];
            os << std::min(255L, std::lround(255.0 * th / kPi)) << (c + 1 < g.x().count ? ' ' : '\n');
        }
}

void write_map_csv(const OrientationMap& map, std::ostream& os) {
    const auto& g = map.grid;
    os << "x,y,theta,pinwheel\n";
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
        const Vec2 p = map.node_point(idx);
        os << io::num(p.x()) << ',' << io::num(p.y()) << ',' << io::num(map.theta[idx]) << ','
           << (map.pinwheel_mask.empty() ? 0 : int(map.pinwheel_mask[idx])) << '\n';
    }
}

nlohmann::json pinwheels_json(const OrientationMap& map) {
    nlohmann::json cells = nlohmann::json::array();
    for (auto idx : map.pinwheel_set) {
        const auto c = map.grid.coords(idx);
        const Vec2 p = map.node_point(idx);
        cells.push_back({{"i", c[0]}, {"j", c[1]}, {"x", p.x()}, {"y", p.y()}});
    }
    return {{"seed", map.rng_seed},
            {"n_waves", map.n_waves},
            {"wavenumber", map.wavenumber},
            {"threshold", map.pinwheel_threshold},
            {"count", map.pinwheel_set.size()},
            {"cells", cells}};
}

}  // namespace cortical
