#include "cortical/measure_mcp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <type_traits>
#include <limits>
#include <ostream>

#include "cortical/errors.hpp"
#include "cortical/io.hpp"

namespace cortical {

template <int D>
Lattice<D> Lattice<D>::centered(const VecD<D>& c, const std::array<double, D>& step, int n_half) {
    Lattice<D> L;
    L.origin = c;
    L.step = step;
    for (int k = 0; k < D; ++k) {
        L.lo[k] = -n_half;
        L.hi[k] = n_half;
    }
    return L;
}

namespace {

template <int D>
std::array<int, D> nearest_index(const Lattice<D>& L, const VecD<D>& x) {
    std::array<int, D> idx{};
    const VecD<D> d = x - L.origin;
    for (int k = 0; k < D; ++k)
        idx[k] = std::clamp(static_cast<int>(std::lround(L.axes.col(k).dot(d) / L.step[k])), L.lo[k], L.hi[k]);
    return idx;
}

template <int D>
bool on_bound(const Lattice<D>& L, const std::type_identity_t<std::array<int, D>>& idx) {
    for (int k = 0; k < D; ++k)
        if (idx[k] == L.lo[k] || idx[k] == L.hi[k]) return true;
    return false;
}

template <int D>
struct BallAccumulator {
    BallCount res;
    std::array<int, D> mn, mx;
    BallAccumulator() {
        mn.fill(std::numeric_limits<int>::max());
        mx.fill(std::numeric_limits<int>::min());
    }
    void add(const Lattice<D>& L, const std::array<int, D>& idx, double dens) {
        res.volume += dens * L.cell_volume();
        ++res.nodes;
        if (on_bound(L, idx)) res.truncated = true;
        for (int k = 0; k < D; ++k) {
            mn[k] = std::min(mn[k], idx[k]);
            mx[k] = std::max(mx[k], idx[k]);
        }
    }
    BallCount finish() {
        for (int k = 0; k < D; ++k) res.extent[k] = res.nodes ? mx[k] - mn[k] + 1 : 0;
        return res;
    }
};

// Distance query that maps numeric failures to "outside".
template <int D>
bool inside(const DistanceFn<D>& dist, const VecD<D>& q, const VecD<D>& x, double r, std::size_t& failures) {
    try {
        return dist(q, x) < r;
    } catch (const NumericError&) {
        ++failures;
        return false;
    }
}

}  // namespace

template <int D>
BallCount ball_count(const MeasureSpec<D>& spec, const DistanceFn<D>& dist, const Lattice<D>& L, const VecD<D>& x,
                     double r, BallSearch mode, std::vector<std::size_t>* members) {
    BallAccumulator<D> acc;
    auto density = [&](const VecD<D>& q) { return spec.density ? spec.density(q) : 1.0; };
    if (members) members->clear();
    if (mode == BallSearch::scan) {
        for (std::size_t n = 0; n < L.size(); ++n) {
            const auto idx = L.unlinear(n);
            const VecD<D> q = L.node(idx);
            if (!inside(dist, q, x, r, acc.res.failures)) continue;
            acc.add(L, idx, density(q));
            if (members) members->push_back(n);
        }
        return acc.finish();
    }
    std::vector<std::uint8_t> seen(L.size(), 0);
    std::deque<std::array<int, D>> queue;
    const auto start = nearest_index(L, x);
    seen[L.linear(start)] = 1;
    if (!inside(dist, L.node(start), x, r, acc.res.failures)) return acc.finish();
    queue.push_back(start);
    std::vector<std::size_t> found;
    while (!queue.empty()) {
        const auto idx = queue.front();
        queue.pop_front();
        const VecD<D> q = L.node(idx);
        acc.add(L, idx, density(q));
        found.push_back(L.linear(idx));
        // all 3^D - 1 neighbours, so thin slanted balls stay connected
        int total = 1;
        for (int k = 0; k < D; ++k) total *= 3;
        for (int code = 0; code < total; ++code) {
            std::array<int, D> nb = idx;
            int c = code;
            bool zero = true, ok = true;
            for (int k = 0; k < D; ++k) {
                const int off = c % 3 - 1;
                c /= 3;
                if (off) zero = false;
                nb[k] += off;
                if (nb[k] < L.lo[k] || nb[k] > L.hi[k]) ok = false;
            }
            if (zero || !ok) continue;
            const std::size_t ln = L.linear(nb);
            if (seen[ln]) continue;
            seen[ln] = 1;
            if (inside(dist, L.node(nb), x, r, acc.res.failures)) queue.push_back(nb);
        }
    }
    if (members) {
        std::sort(found.begin(), found.end());
        *members = std::move(found);
    }
    return acc.finish();
}

template <int D>
double ball_volume(const MeasureSpec<D>& spec, const DistanceFn<D>& dist, const Lattice<D>& L, const VecD<D>& x,
                   double r, BallSearch mode) {
    if (!(r > 0.0)) throw ConfigError("ball radius must be positive");
    const BallCount c = ball_count(spec, dist, L, x, r, mode);
    for (int k = 0; k < D; ++k)
        if (c.extent[k] < 4)
            throw RadiusUnresolved("ball of radius " + io::num(r) + " spans " + std::to_string(c.extent[k]) +
                                   " cells on axis " + std::to_string(k));
    if (c.truncated) throw GridTooSmall("ball of radius " + io::num(r) + " reaches the lattice bound");
    return c.volume;
}

template <int D>
BallVolumeTable ball_volume_table(const MeasureSpec<D>& spec, const DistanceFn<D>& dist, const Lattice<D>& L,
                                  const VecD<D>& x, std::vector<double> radii) {
    std::sort(radii.begin(), radii.end());
    BallVolumeTable t;
    t.center.assign(x.data(), x.data() + D);
    t.radii = radii;
    for (double r : radii) t.volumes.push_back(ball_volume(spec, dist, L, x, r));
    return t;
}

nlohmann::json BallVolumeTable::to_json() const {
    return {{"center", center}, {"radii", radii}, {"volumes", volumes}, {"loglog_slope", loglog_slope()}};
}

void BallVolumeTable::write_csv(std::ostream& os) const {
    os << "r,volume\n";
    for (std::size_t i = 0; i < radii.size(); ++i) os << io::num(radii[i]) << ',' << io::num(volumes[i]) << '\n';
}

double BallVolumeTable::loglog_slope() const {
    const std::size_t n = radii.size();
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::log(radii[i]), b = std::log(volumes[i]);
        sx += a;
        sy += b;
        sxx += a * a;
        sxy += a * b;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

template <int D>
double mu_r_mass(const MeasureSpec<D>& spec, const DistanceFn<D>& dist,
                 const std::function<Lattice<D>(const VecD<D>&)>& ball_lattice, const std::vector<VecD<D>>& A,
                 double cell_volume, double r) {
    double m = 0.0;
    for (const auto& q : A) {
        const double dens = spec.density ? spec.density(q) : 1.0;
        m += dens * cell_volume / std::sqrt(ball_volume(spec, dist, ball_lattice(q), q, r));
    }
    return m;
}

template <int D>
double dirichlet_form_Er(const MeasureSpec<D>& spec, const DistanceFn<D>& dist, const Lattice<D>& L,
                         const std::vector<double>& u, double r, const DirichletOptions& opt) {
    const std::size_t n = L.size();
    if (u.size() != n) throw ConfigError("u must have one value per lattice node");
    for (double v : u)
        if (!std::isfinite(v)) throw ConfigError("u must be finite");
    const bool all = opt.outer.empty();
    if (!all && opt.outer.size() != n) throw ConfigError("outer mask must have one entry per node");
    const double N = opt.normalization > 0.0 ? opt.normalization : static_cast<double>(D);
    const double cell = L.cell_volume();

    std::vector<VecD<D>> pts(n);
    std::vector<double> dens(n);
    for (std::size_t i = 0; i < n; ++i) {
        pts[i] = L.node(L.unlinear(i));
        dens[i] = spec.density ? spec.density(pts[i]) : 1.0;
    }
    // ball membership lists by a full scan; bounded lattices are small at desk scale
    std::vector<std::vector<std::pair<std::size_t, double>>> ball(n);
    std::vector<double> vol(n, 0.0);
#pragma omp parallel for schedule(dynamic, 16)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        std::size_t fails = 0;
        for (std::size_t j = 0; j < n; ++j) {
            double d;
            try {
                d = dist(pts[j], pts[i]);
            } catch (const NumericError&) {
                ++fails;
                continue;
            }
            if (d < r) {
                ball[i].emplace_back(j, d);
                vol[i] += dens[j] * cell;
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!all && !opt.outer[i]) continue;
        BallAccumulator<D> acc;
        for (auto& [j, d] : ball[i]) acc.add(L, L.unlinear(j), 1.0);
        const auto c = acc.finish();
        for (int k = 0; k < D; ++k)
            if (c.extent[k] < 4) throw RadiusUnresolved("Dirichlet form radius below 4 cells");
    }
    double E = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!all && !opt.outer[i]) continue;
        double inner = 0.0;
        for (auto& [j, d] : ball[i]) {
            if (j == i || d == 0.0) continue;
            const double q = (u[j] - u[i]) / d;
            inner += q * q * dens[j] * cell / std::sqrt(vol[j]);
        }
        E += N * dens[i] * cell / std::sqrt(vol[i]) * inner;
    }
    return 0.5 * E;
}

McpGeometry euclidean_mcp_geometry(int cpr) {
    McpGeometry g;
    g.name = "euclidean";
    g.measure.kind = MeasureKind::lebesgue;
    g.measure.density = [](const VecD<2>&) { return 1.0; };
    g.dist = [](const VecD<2>& q, const VecD<2>& x) { return (q - x).norm(); };
    g.log = [](const Vec2& x, const Vec2& z) { return Vec2(z - x); };
    g.exp = [](const Vec2& x, const Vec2& v) { return Vec2(x + v); };
    g.dilate_jacobian = [](double t) { return Eigen::Matrix2d(t * Eigen::Matrix2d::Identity()); };
    g.exp_jacobian = [](const Vec2&, const Vec2&) { return Eigen::Matrix2d(Eigen::Matrix2d::Identity()); };
    g.exceptional = [](const Vec2&) { return false; };
    g.ball_lattice = [cpr](const Vec2& x, double r) {
        // half-cell offset: no node lies exactly on the circle |q - x| = r
        const double h = r / cpr;
        return Lattice<2>::centered(Vec2(x + Vec2(0.5 * h, 0.5 * h)), {h, h}, cpr + 3);
    };
    return g;
}

McpGeometry surface_mcp_geometry(const OrientationMap& map, int cpr, const LogOptions& opt) {
    McpGeometry g;
    g.name = "surface";
    g.measure = surface_area_measure(map);
    g.dist = surface_distance_fn(map, opt);
    g.log = [&map, opt](const Vec2& x, const Vec2& z) {
        const auto c = log_map(map, x, z, opt);
        return Vec2(c.e1, c.e2);
    };
    g.exp = [&map, opt](const Vec2& x, const Vec2& v) { return exp_map(map, x, {v[0], v[1]}, opt.steps); };
    g.dilate_jacobian = [](double t) {
        Eigen::Matrix2d J = Eigen::Matrix2d::Zero();
        J(0, 0) = t;
        J(1, 1) = t * t;
        return J;
    };
    g.exceptional = [&map](const Vec2& z) { return map.exceptional(z); };
    g.ball_lattice = [&map, cpr](const Vec2& x, double r) {
        // V along the first axis, W along the second; the W extent is r^2 but the ball bends
        // with the frame rotation, so the W range is left wide
        const auto f = frame(theta_at(map, x));
        Lattice<2> L;
        L.origin = x;
        L.axes.col(0) = f.V;
        L.axes.col(1) = f.W;
        L.step = {r / cpr, r * r / cpr};
        L.lo = {-(cpr + 3), -16 * cpr};
        L.hi = {cpr + 3, 16 * cpr};
        return L;
    };
    return g;
}

namespace {

// Central-difference Jacobian of v -> exp(x, v).
Eigen::Matrix2d exp_jacobian(const McpGeometry& g, const Vec2& x, const Vec2& v, double h) {
    if (g.exp_jacobian) return g.exp_jacobian(x, v);
    Eigen::Matrix2d J;
    for (int k = 0; k < 2; ++k) {
        Vec2 a = v, b = v;
        a[k] -= h;
        b[k] += h;
        J.col(k) = (g.exp(x, b) - g.exp(x, a)) / (2.0 * h);
    }
    return J;
}

struct CellImage {
    bool ok = false;
    Vec2 z, v;
    double dens = 0.0;
    double log_det = 0.0;  // det D exp at v, inverted later
};

}  // namespace

McpReport mcp_check(const McpGeometry& g, const std::vector<Vec2>& centers, const std::vector<double>& radii_in,
                    const std::vector<double>& t_values, const McpOptions& opt) {
    McpReport rep;
    rep.geometry = g.name;
    rep.centers = centers;
    rep.radii = radii_in;
    std::sort(rep.radii.begin(), rep.radii.end());
    rep.t_values = t_values;
    rep.theta_max = opt.theta_max;
    rep.theta_worst_by_radius.assign(rep.radii.size(), 0.0);
    for (double t : t_values)
        if (!(t > 0.0 && t <= 1.0)) throw ConfigError("t values must lie in (0, 1]");
    const auto& dens = g.measure.density;

    for (std::size_t ci = 0; ci < centers.size(); ++ci) {
        const Vec2 x = centers[ci];
        if (g.exceptional(x)) {
            rep.excluded.push_back("center " + std::to_string(ci) + ": on the exceptional set");
            continue;
        }
        for (std::size_t ri = 0; ri < rep.radii.size(); ++ri) {
            const double r = rep.radii[ri];
            const Lattice<2> L = g.ball_lattice(x, r);
            std::vector<std::size_t> members;
            double vol_r;
            try {
                vol_r = ball_volume<2>(g.measure, g.dist, L, x, r);
                ball_count<2>(g.measure, g.dist, L, x, r, BallSearch::flood, &members);
            } catch (const Error& e) {
                rep.excluded.push_back("center " + std::to_string(ci) + " r " + io::num(r) + ": " + e.what());
                continue;
            }
            const std::size_t stride = static_cast<std::size_t>(std::max(1, opt.cell_stride));
            std::vector<std::size_t> picked;
            for (std::size_t m = 0; m < members.size(); m += stride) picked.push_back(members[m]);

            // per-cell log coordinates and exp Jacobian, shared over t
            std::vector<CellImage> cells(picked.size());
            const double h = 1e-6 * std::max(1.0, r);
#pragma omp parallel for schedule(dynamic, 8)
            for (long long a = 0; a < static_cast<long long>(picked.size()); ++a) {
                CellImage& c = cells[a];
                c.z = L.node(L.unlinear(picked[a]));
                if (g.exceptional(c.z)) continue;
                try {
                    c.v = g.log(x, c.z);
                    c.log_det = exp_jacobian(g, x, c.v, h).determinant();
                    c.dens = dens(c.z);
                    c.ok = std::isfinite(c.log_det) && c.log_det != 0.0;
                } catch (const NumericError&) {
                    c.ok = false;
                }
            }
            for (double t : t_values) {
                McpSample s;
                s.center = ci;
                s.r = r;
                s.t = t;
                double vol_rt;
                try {
                    vol_rt = ball_volume<2>(g.measure, g.dist, g.ball_lattice(x, r * t), x, r * t);
                } catch (const Error& e) {
                    rep.excluded.push_back("center " + std::to_string(ci) + " r " + io::num(r) + " t " +
                                           io::num(t) + ": " + e.what());
                    continue;
                }
                const Eigen::Matrix2d Dd = g.dilate_jacobian(t);
                std::vector<double> img_mass(cells.size(), -1.0), img_theta_mu(cells.size(), -1.0);
#pragma omp parallel for schedule(dynamic, 8)
                for (long long a = 0; a < static_cast<long long>(cells.size()); ++a) {
                    const CellImage& c = cells[a];
                    if (!c.ok) continue;
                    try {
                        const Vec2 vt = Dd * c.v;
                        const Vec2 w = g.exp(x, vt);
                        const double J =
                            std::abs(exp_jacobian(g, x, vt, h).determinant() * Dd.determinant() / c.log_det);
                        img_mass[a] = dens(w) * J * L.cell_volume();
                        if (opt.mu_r_form && a % std::max(1, opt.mu_r_stride) == 0) {
                            const double bz = ball_volume<2>(g.measure, g.dist, g.ball_lattice(c.z, r), c.z, r);
                            const double bw =
                                ball_volume<2>(g.measure, g.dist, g.ball_lattice(w, r * t), w, r * t);
                            const double lhs = c.dens * L.cell_volume() / std::sqrt(bz) / std::sqrt(vol_r);
                            const double rhs = img_mass[a] / std::sqrt(bw) / std::sqrt(vol_rt);
                            img_theta_mu[a] = lhs / rhs;
                        }
                    } catch (const Error&) {
                        img_mass[a] = -1.0;
                    }
                }
                double mass_a = 0.0, mass_img = 0.0, worst = 0.0, worst_mu = -1.0;
                for (std::size_t a = 0; a < cells.size(); ++a) {
                    if (img_mass[a] < 0.0) {
                        ++s.excluded;
                        continue;
                    }
                    const double ma = cells[a].dens * L.cell_volume();
                    mass_a += ma;
                    mass_img += img_mass[a];
                    worst = std::max(worst, (ma / vol_r) / (img_mass[a] / vol_rt));
                    worst_mu = std::max(worst_mu, img_theta_mu[a]);
                    ++s.cells;
                }
                if (s.cells == 0) {
                    rep.excluded.push_back("center " + std::to_string(ci) + " r " + io::num(r) + " t " +
                                           io::num(t) + ": no admissible cells");
                    continue;
                }
                s.ball_ratio = vol_rt / vol_r;
                s.volume_ratio = mass_img / mass_a;
                s.theta_cells = worst;
                s.theta_ball = (mass_a / vol_r) / (mass_img / vol_rt);
                s.theta_mu_r = worst_mu;
                rep.theta_worst_by_radius[ri] = std::max(rep.theta_worst_by_radius[ri], worst);
                rep.theta_worst = std::max(rep.theta_worst, worst);
                rep.samples.push_back(s);
            }
        }
    }
    rep.decreasing = rep.radii.size() >= 2;
    for (std::size_t i = 1; i < rep.radii.size(); ++i)
        if (!(rep.theta_worst_by_radius[i - 1] < rep.theta_worst_by_radius[i])) rep.decreasing = false;
    const bool finite = std::isfinite(rep.theta_worst) && !rep.samples.empty();
    rep.pass = finite && rep.theta_worst <= rep.theta_max && (rep.radii.size() < 2 || rep.decreasing);
    return rep;
}

nlohmann::json McpReport::to_json() const {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& v : centers) c.push_back({v.x(), v.y()});
    nlohmann::json s = nlohmann::json::array();
    for (const auto& m : samples) {
        nlohmann::json e = {{"center", m.center},          {"r", m.r},
                            {"t", m.t},                    {"cells", m.cells},
                            {"excluded", m.excluded},      {"ball_ratio", m.ball_ratio},
                            {"volume_ratio", m.volume_ratio}, {"theta_cells", m.theta_cells},
                            {"theta_ball", m.theta_ball}};
        if (m.theta_mu_r >= 0.0) e["theta_mu_r"] = m.theta_mu_r;
        s.push_back(e);
    }
    return {{"geometry", geometry},
            {"centers", c},
            {"radii", radii},
            {"t_values", t_values},
            {"theta_worst", theta_worst},
            {"theta_worst_by_radius", theta_worst_by_radius},
            {"theta_max", theta_max},
            {"decreasing_with_r", decreasing},
            {"pass", pass},
            {"excluded", excluded},
            {"samples", s}};
}

MeasureSpec<3> gabor_volume_measure(const MetricConfig& cfg) {
    const double d = std::sqrt(local_metric_tensor(cfg, FeaturePoint()).g.determinant());
    MeasureSpec<3> m;
    m.kind = MeasureKind::gabor_volume;
    m.density = [d](const VecD<3>&) { return d; };
    return m;
}

DistanceFn<3> gabor_distance_fn(const MetricConfig& cfg) {
    return [cfg](const VecD<3>& q, const VecD<3>& x) {
        return distance(cfg, FeaturePoint(q[0], q[1], q[2]), FeaturePoint(x[0], x[1], x[2]));
    };
}

MeasureSpec<2> surface_area_measure(const OrientationMap& map) {
    // Z has measure zero; the numerical |N_h| is used there as well
    MeasureSpec<2> m;
    m.kind = MeasureKind::surface_area;
    m.density = [&map](const VecD<2>& q) { return horizontal_normal_norm(map, q); };
    return m;
}

DistanceFn<2> surface_distance_fn(const OrientationMap& map, const LogOptions& opt) {
    return [&map, opt](const VecD<2>& q, const VecD<2>& x) { return surface_distance(map, x, q, opt); };
}

template struct Lattice<2>;
template struct Lattice<3>;
template BallCount ball_count<2>(const MeasureSpec<2>&, const DistanceFn<2>&, const Lattice<2>&, const VecD<2>&,
                                 double, BallSearch, std::vector<std::size_t>*);
template BallCount ball_count<3>(const MeasureSpec<3>&, const DistanceFn<3>&, const Lattice<3>&, const VecD<3>&,
                                 double, BallSearch, std::vector<std::size_t>*);
template double ball_volume<2>(const MeasureSpec<2>&, const DistanceFn<2>&, const Lattice<2>&, const VecD<2>&,
                               double, BallSearch);
template double ball_volume<3>(const MeasureSpec<3>&, const DistanceFn<3>&, const Lattice<3>&, const VecD<3>&,
                               double, BallSearch);
template BallVolumeTable ball_volume_table<2>(const MeasureSpec<2>&, const DistanceFn<2>&, const Lattice<2>&,
                                              const VecD<2>&, std::vector<double>);
template BallVolumeTable ball_volume_table<3>(const MeasureSpec<3>&, const DistanceFn<3>&, const Lattice<3>&,
                                              const VecD<3>&, std::vector<double>);
template double mu_r_mass<2>(const MeasureSpec<2>&, const DistanceFn<2>&,
                             const std::function<Lattice<2>(const VecD<2>&)>&, const std::vector<VecD<2>>&, double,
                             double);
template double mu_r_mass<3>(const MeasureSpec<3>&, const DistanceFn<3>&,
                             const std::function<Lattice<3>(const VecD<3>&)>&, const std::vector<VecD<3>>&, double,
                             double);
template double dirichlet_form_Er<2>(const MeasureSpec<2>&, const DistanceFn<2>&, const Lattice<2>&,
                                     const std::vector<double>&, double, const DirichletOptions&);
template double dirichlet_form_Er<3>(const MeasureSpec<3>&, const DistanceFn<3>&, const Lattice<3>&,
                                     const std::vector<double>&, double, const DirichletOptions&);

}  // namespace cortical
