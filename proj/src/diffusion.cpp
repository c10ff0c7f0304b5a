#include "cortical/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cortical/errors.hpp"
#include "cortical/io.hpp"

namespace cortical {

double SparseKernel::at(std::size_t i, std::size_t j) const {
    auto b = col.begin() + row_ptr[i], e = col.begin() + row_ptr[i + 1];
    auto it = std::lower_bound(b, e, static_cast<std::uint32_t>(j));
    return (it != e && *it == j) ? val[it - col.begin()] : 0.0;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

namespace {

// Rows built independently, each sorted; then packed.
template <class Row>
void pack_rows(std::vector<Row>& rows, std::vector<std::size_t>& row_ptr, std::vector<std::uint32_t>& col,
               std::vector<double>& val) {
    const std::size_t n = rows.size();
    row_ptr.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) row_ptr[i + 1] = row_ptr[i] + rows[i].size();
    col.resize(row_ptr[n]);
    val.resize(row_ptr[n]);
    for (std::size_t i = 0; i < n; ++i) {
        std::sort(rows[i].begin(), rows[i].end());
        std::size_t o = row_ptr[i];
        for (auto& [j, v] : rows[i]) {
            col[o] = j;
            val[o] = v;
            ++o;
        }
        Row().swap(rows[i]);
    }
}

int spatial_reach(const MetricConfig& cfg, double r, double step, int count) {
    const double t = norm_t(cfg);
    if (r * r >= 2.0 * t) return count - 1;
    const double L = -std::log(1.0 - r * r / (2.0 * t));
    const double reach = 2.0 * cfg.params.sigma * std::sqrt(L);
    return std::min(count - 1, static_cast<int>(std::floor(reach / step + 1e-9)));
}

}  // namespace

std::vector<FeaturePoint> surface_nodes(const OrientationMap& map) {
    std::vector<FeaturePoint> nodes(map.grid.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Vec2 p = map.node_point(i);
        nodes[i] = FeaturePoint(p.x(), p.y(), map.theta[i]);
    }
    return nodes;
}

CandidateFn surface_candidates(const MetricConfig& cfg, const OrientationMap& map, double r) {
    const PlaneGrid g = map.grid;
    const int wx = spatial_reach(cfg, r, g.x().step, g.x().count);
    const int wy = spatial_reach(cfg, r, g.y().step, g.y().count);
    return [g, wx, wy](std::size_t i, const std::function<void(std::size_t)>& emit) {
        const auto c = g.coords(i);
        for (int a = std::max(0, c[0] - wx); a <= std::min(g.x().count - 1, c[0] + wx); ++a)
            for (int b = std::max(0, c[1] - wy); b <= std::min(g.y().count - 1, c[1] + wy); ++b) {
                const std::size_t j = g.index(a, b);
                if (j != i) emit(j);
            }
    };
}

CandidateFn grid_candidates(const MetricConfig& cfg, const FeatureGrid& grid, double r) {
    const auto win = distance_window(cfg, grid, r);
    return [grid, win](std::size_t i, const std::function<void(std::size_t)>& emit) {
        for_each_in_window(grid, i, win, emit);
    };
}

SparseKernel build_base_kernel(const MetricConfig& cfg, const std::vector<FeaturePoint>& nodes,
                               const CandidateFn& candidates, const KernelBuildParams& params) {
    if (!(params.r_cut > 0.0)) throw ConfigError("r_cut must be positive");
    const std::size_t n = nodes.size();
    const double t = norm_t(cfg);
    const double r2 = params.r_cut * params.r_cut;
    auto value = [&](double k) {
        return params.activation == Activation::sigmoid ? sigmoid(k) : std::max(k - params.threshold, 0.0);
    };
    std::vector<std::vector<std::pair<std::uint32_t, double>>> rows(n);
#pragma omp parallel for schedule(dynamic, 64)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        auto& row = rows[i];
        const double kd = value(kernel(cfg, nodes[i], nodes[i]) / t);
        if (kd > 0.0) row.emplace_back(static_cast<std::uint32_t>(i), kd);
        candidates(i, [&](std::size_t j) {
            // same argument order from both rows so the pattern and values are symmetric
            const std::size_t a = std::max(i, j), b = std::min(i, j);
            const double k = kernel(cfg, nodes[a], nodes[b]);
            if (2.0 * t - 2.0 * k > r2) return;
            const double v = value(k / t);
            if (v > 0.0) row.emplace_back(static_cast<std::uint32_t>(j), v);
        });
    }
    SparseKernel K;
    K.n = n;
    for (std::size_t i = 0; i < n; ++i) {
        const bool alone = std::none_of(rows[i].begin(), rows[i].end(), [i](const auto& e) { return e.first != i; });
        if (!alone) continue;
        if (!params.allow_isolated) throw EmptyRow("node " + std::to_string(i) + " has no neighbour within r_cut");
        ++K.isolated;
    }
    K.cutoff = "d <= " + io::num(params.r_cut) +
               (params.activation == Activation::sigmoid ? ", sigmoid" : ", threshold " + io::num(params.threshold));
    pack_rows(rows, K.row_ptr, K.col, K.val);
    return K;
}

SparseKernel build_base_kernel(const MetricConfig& cfg, const FeatureGrid& grid, const KernelBuildParams& params) {
    std::vector<FeaturePoint> nodes(grid.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i] = grid.point(i);
    return build_base_kernel(cfg, nodes, grid_candidates(cfg, grid, params.r_cut), params);
}

SparseKernel build_base_kernel(const MetricConfig& cfg, const OrientationMap& map, const KernelBuildParams& params) {
    return build_base_kernel(cfg, surface_nodes(map), surface_candidates(cfg, map, params.r_cut), params);
}

SparseKernel cl_normalize(const SparseKernel& k, double alpha, const std::vector<double>& Q,
                          const std::vector<double>& mu) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
    if (Q.size() != k.n || mu.size() != k.n) throw ConfigError("Q and mu need one value per node");
    std::vector<double> qt(k.n, 0.0);
    for (std::size_t i = 0; i < k.n; ++i) {
        double s = 0.0;
        for (std::size_t e = k.row_ptr[i]; e < k.row_ptr[i + 1]; ++e) s += k.val[e] * Q[k.col[e]] * mu[k.col[e]];
        if (!(s > 0.0)) throw ZeroRowMass("row " + std::to_string(i) + " has no mass under Q mu");
        qt[i] = alpha == 0.0 ? 1.0 : std::pow(s, alpha);
    }
    SparseKernel S = k;
    for (std::size_t i = 0; i < k.n; ++i) {
        double s = 0.0;
        for (std::size_t e = k.row_ptr[i]; e < k.row_ptr[i + 1]; ++e) {
            S.val[e] = k.val[e] / (qt[i] * qt[k.col[e]]);
            s += S.val[e] * Q[k.col[e]] * mu[k.col[e]];
        }
        if (!(s > 0.0)) throw ZeroRowMass("normalized row " + std::to_string(i) + " has no mass");
        for (std::size_t e = k.row_ptr[i]; e < k.row_ptr[i + 1]; ++e) S.val[e] /= s;
    }
    S.cutoff = k.cutoff + ", alpha " + io::num(alpha);
    return S;
}

void PropagationParams::validate() const {
    if (n_steps < 1) throw ConfigError("n_steps must be at least 1");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
}

std::vector<double> apply_H(const SparseKernel& S, const std::vector<double>& f, const std::vector<double>& mu) {
    std::vector<double> out(S.n, 0.0);
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(S.n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        double s = 0.0;
        for (std::size_t e = S.row_ptr[i]; e < S.row_ptr[i + 1]; ++e) s += S.val[e] * f[S.col[e]] * mu[S.col[e]];
        out[i] = s;
    }
    return out;
}

std::vector<double> propagate(const SparseKernel& S, std::size_t p0, int n_steps, const std::vector<double>& mu) {
    if (n_steps < 1) throw ConfigError("n_steps must be at least 1");
    if (p0 >= S.n) throw NodeNotOnGrid("start node out of range");
    std::vector<double> f(S.n);
    for (std::size_t i = 0; i < S.n; ++i) f[i] = S.at(i, p0);
    for (int m = 1; m < n_steps; ++m) f = apply_H(S, f, mu);
    return f;
}

std::vector<double> propagate(const SparseKernel& base, std::size_t p0, const PropagationParams& params,
                              const std::vector<double>& mu) {
    params.validate();
    std::vector<double> Q(base.n, 1.0);
    if (params.Q)
        for (std::size_t i = 0; i < base.n; ++i) Q[i] = params.Q(i);
    const SparseKernel S = cl_normalize(base, params.alpha, Q, mu);
    return propagate(S, p0, params.n_steps, mu);
}

double GraphSpec::max_rate() const {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) s += w[e];
        m = std::max(m, s / mu[i]);
    }
    return m;
}

GraphSpec build_graph(std::size_t n, const std::vector<double>& mu, const CandidateFn& candidates,
                      const std::function<double(std::size_t, std::size_t)>& dist, double rho, double kappa,
                      Connectivity policy) {
    if (!(rho > 0.0)) throw ConfigError("rho must be positive");
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
    if (mu.size() != n) throw ConfigError("mu needs one value per node");
    for (double m : mu)
        if (!(m > 0.0)) throw ConfigError("node measures must be positive");
    std::vector<std::vector<std::pair<std::uint32_t, double>>> rows(n);
#pragma omp parallel for schedule(dynamic, 64)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        candidates(i, [&](std::size_t j) {
            const double d = dist(std::max(i, j), std::min(i, j));
            if (d < rho) rows[i].emplace_back(static_cast<std::uint32_t>(j), kappa * mu[i] * mu[j]);
        });
    }
    GraphSpec g;
    g.n = n;
    g.mu = mu;
    g.rho = rho;
    g.kappa = kappa;
    pack_rows(rows, g.row_ptr, g.col, g.w);

    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
            const std::size_t a = find(i), b = find(g.col[e]);
            if (a != b) parent[std::max(a, b)] = std::min(a, b);
        }
    int comps = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (find(i) == i) ++comps;
    g.components = comps;
    if (comps > 1 && policy == Connectivity::require)
        throw DisconnectedGraph(comps, "graph with rho " + io::num(rho) + " is not connected");
    return g;
}

GraphSpec build_graph(const FeatureGrid& grid, const MetricConfig& cfg, const std::vector<double>& mu, double rho,
                      double kappa, Connectivity policy) {
    return build_graph(
        grid.size(), mu, grid_candidates(cfg, grid, rho),
        [&](std::size_t i, std::size_t j) { return distance(cfg, grid.point(i), grid.point(j)); }, rho, kappa,
        policy);
}

GraphSpec build_graph(const OrientationMap& map, const MetricConfig& cfg, const std::vector<double>& mu, double rho,
                      double kappa, Connectivity policy) {
    const auto nodes = surface_nodes(map);
    return build_graph(
        nodes.size(), mu, surface_candidates(cfg, map, rho),
        [&](std::size_t i, std::size_t j) { return distance(cfg, nodes[i], nodes[j]); }, rho, kappa, policy);
}

double calibrate_kappa(int dim, double rho, double cell_measure) {
    if (dim < 1 || !(rho > 0.0) || !(cell_measure > 0.0)) throw ConfigError("invalid calibration input");
    const double h = std::pow(cell_measure, 1.0 / dim);
    const int m = static_cast<int>(std::ceil(rho / h));
    // sum of |y|^2 over lattice offsets 0 < |y| < rho
    double sum = 0.0;
    std::vector<int> idx(dim, -m);
    while (true) {
        double r2 = 0.0;
        for (int v : idx) r2 += (v * h) * (v * h);
        if (r2 > 0.0 && std::sqrt(r2) < rho) sum += r2;
        int k = 0;
        while (k < dim && ++idx[k] > m) idx[k++] = -m;
        if (k == dim) break;
    }
    if (!(sum > 0.0)) throw ConfigError("rho is below the calibration lattice step");
    // L u(0) = (1/mu) sum kappa mu^2 |y|^2 must equal 2 dim
    return 2.0 * dim / (cell_measure * sum);
}

std::vector<double> laplacian_apply(const GraphSpec& g, const std::vector<double>& f) {
    std::vector<double> out(g.n, 0.0);
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(g.n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        double s = 0.0;
        for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) s += g.w[e] * (f[g.col[e]] - f[i]);
        out[i] = s / g.mu[i];
    }
    return out;
}

std::vector<double> dirac(const GraphSpec& g, std::size_t node) {
    if (node >= g.n) throw NodeNotOnGrid("start node out of range");
    std::vector<double> f(g.n, 0.0);
    f[node] = 1.0 / g.mu[node];
    return f;
}

double weighted_mass(const std::vector<double>& mu, const std::vector<double>& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += mu[i] * f[i];
    return s;
}

HeatState heat_run(const GraphSpec& g, std::vector<double> f0, double dt, int n_iter) {
    if (f0.size() != g.n) throw ConfigError("initial datum needs one value per node");
    if (!(dt > 0.0) || n_iter < 0) throw ConfigError("dt must be positive and n_iter nonnegative");
    const double rate = g.max_rate();
    if (dt * rate >= 1.0)
        throw UnstableStep("dt " + io::num(dt) + " times max rate " + io::num(rate) + " is not below 1");
    HeatState s;
    s.f = std::move(f0);
    for (int it = 0; it < n_iter; ++it) {
        const auto L = laplacian_apply(g, s.f);
        for (std::size_t i = 0; i < g.n; ++i) s.f[i] += dt * L[i];
        s.time += dt;
        ++s.steps;
    }
    return s;
}

Projection argmax_orientation(const FeatureGrid& grid, const std::vector<double>& field, double theta0) {
    if (field.size() != grid.size()) throw ConfigError("field needs one value per grid node");
    Projection p;
    p.nx = grid.x().count;
    p.ny = grid.y().count;
    const int nt = grid.theta().count;
    p.max_value.assign(static_cast<std::size_t>(p.nx) * p.ny, 0.0);
    p.theta_bar.assign(p.max_value.size(), 0.0);
    p.k_index.assign(p.max_value.size(), 0);
    auto closeness = [&](int k) {
        double d = std::abs(grid.theta().at(k) - theta0);
        if (grid.theta().periodic) {
            d = wrap_angle(d);
            d = std::min(d, kTwoPi - d);
        }
        return d;
    };
    for (int i = 0; i < p.nx; ++i)
        for (int j = 0; j < p.ny; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < nt; ++k) best = std::max(best, field[grid.index(i, j, k)]);
            const double tol = 1e-12 * std::abs(best);
            int arg = -1;
            for (int k = 0; k < nt; ++k)
                if (field[grid.index(i, j, k)] >= best - tol && (arg < 0 || closeness(k) < closeness(arg))) arg = k;
            const std::size_t o = static_cast<std::size_t>(i) * p.ny + j;
            p.max_value[o] = best;
            p.k_index[o] = arg;
            p.theta_bar[o] = grid.theta().at(arg);
        }
    return p;
}

std::vector<std::uint8_t> top_decile_mask(const std::vector<double>& v) {
    std::vector<double> pos;
    for (double x : v)
        if (x > 0.0) pos.push_back(x);
    std::vector<std::uint8_t> mask(v.size(), 0);
    if (pos.empty()) return mask;
    const std::size_t k = static_cast<std::size_t>(std::floor(0.9 * (pos.size() - 1)));
    std::nth_element(pos.begin(), pos.begin() + k, pos.end());
    const double thr = pos[k];
    for (std::size_t i = 0; i < v.size(); ++i) mask[i] = (v[i] > 0.0 && v[i] >= thr) ? 1 : 0;
    return mask;
}

double jaccard(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw ConfigError("jaccard of masks of different size");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]);
        uni += (a[i] || b[i]);
    }
    return uni ? static_cast<double>(inter) / uni : 1.0;
}

double orientation_difference(double a, double b) {
    const double d = wrap_angle(a - b, kPi);
    return std::min(d, kPi - d);
}

namespace {
double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t h = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + h, v.end());
    double m = v[h];
    if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + h));
    return m;
}
}  // namespace

PatchinessReport patchiness_stats(const OrientationMap& map, const std::vector<double>& field, double theta0) {
    if (field.size() != map.theta.size()) throw ConfigError("field needs one value per map node");
    const auto mask = top_decile_mask(field);
    std::vector<double> top, all;
    for (std::size_t i = 0; i < field.size(); ++i) {
        const double d = orientation_difference(map.theta[i], theta0);
        all.push_back(d);
        if (mask[i]) top.push_back(d);
    }
    PatchinessReport r;
    r.top_count = top.size();
    r.median_top = median(top);
    r.median_all = median(all);
    r.ratio = r.median_top / r.median_all;
    return r;
}

AxisMoments second_moments(const PlaneGrid& plane, const std::vector<double>& w, const Vec2& c, double angle) {
    const Vec2 u(std::cos(angle), std::sin(angle)), n(-std::sin(angle), std::cos(angle));
    AxisMoments m;
    double tot = 0.0;
    for (int i = 0; i < plane.x().count; ++i)
        for (int j = 0; j < plane.y().count; ++j) {
            const double v = w[plane.index(i, j)];
            const Vec2 d = Vec2(plane.x().at(i), plane.y().at(j)) - c;
            m.along += v * u.dot(d) * u.dot(d);
            m.across += v * n.dot(d) * n.dot(d);
            tot += v;
        }
    if (tot > 0.0) {
        m.along /= tot;
        m.across /= tot;
    }
    m.ratio = m.across > 0.0 ? m.along / m.across : std::numeric_limits<double>::infinity();
    return m;
}

PlaneGrid plane_of(const FeatureGrid& grid) { return PlaneGrid(grid.x(), grid.y()); }

}  // namespace cortical
