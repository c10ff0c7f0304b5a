#include "cortical/metric_space.hpp"

#include <cmath>
#include <functional>
#include <queue>

#include "cortical/errors.hpp"

namespace cortical {

RelativeCoords relative_coords(const FeaturePoint& p, const FeaturePoint& p0) {
    const double c0 = std::cos(p0.theta), s0 = std::sin(p0.theta);
    const double dx = p.x - p0.x, dy = p.y - p0.y;
    return {c0 * dx + s0 * dy, -s0 * dx + c0 * dy, p.theta - p0.theta};
}

double norm_t(const MetricConfig& cfg) {
    return cfg.params.normalize_unit ? 1.0 : cfg.params.analytic_sq_norm();
}

double kernel_closed(const MetricConfig& cfg, const FeaturePoint& p, const FeaturePoint& p0) {
    const double s = cfg.params.sigma, l = cfg.params.lambda;
    const auto r = relative_coords(p, p0);
    const double cd = std::cos(r.dtheta), sd = std::sin(r.dtheta);
    const double env = std::exp(-(r.a * r.a + r.b * r.b) / (4.0 * s * s) -
                                2.0 * s * s * kPi * kPi * (1.0 - cd) / (l * l));
    const double osc = std::cos(kPi * (r.a * (1.0 + cd) + r.b * sd) / l);
    const double k = env * osc;
    return cfg.params.normalize_unit ? k : s * s * kPi * k;
}

double kernel_numeric(const MetricConfig& cfg, const FeaturePoint& p, const FeaturePoint& p0) {
    const FeaturePoint both[2] = {p, p0};
    const RetinalGrid grid = covering_grid(cfg.params, both);
    const auto f = sample_filter(cfg.params, p, grid);
    const auto g = sample_filter(cfg.params, p0, grid);
    return l2_inner(f, g).real();
}

double kernel(const MetricConfig& cfg, const FeaturePoint& p, const FeaturePoint& p0) {
    return cfg.mode == KernelMode::closed_form ? kernel_closed(cfg, p, p0) : kernel_numeric(cfg, p, p0);
}

double distance(const MetricConfig& cfg, const FeaturePoint& p, const FeaturePoint& p0) {
    const double d2 = 2.0 * norm_t(cfg) - 2.0 * kernel(cfg, p, p0);
    return std::sqrt(std::max(0.0, d2));
}

bool patch_contains(const PatchSpec& spec, const FeaturePoint& p, const FeaturePoint& p0) {
    // a(1+cos dt) + b sin dt = 2 cos(dt/2) [(dx, dy) . (cos m, sin m)], m the mean angle.
    // This form is exactly antisymmetric under swapping p and p0.
    const double dt = p.theta - p0.theta;
    const double m = 0.5 * (p.theta + p0.theta);
    const double arg = 2.0 * std::cos(0.5 * dt) * ((p.x - p0.x) * std::cos(m) + (p.y - p0.y) * std::sin(m));
    return std::abs(arg) < spec.lambda;
}

MetricTensor local_metric_tensor(const MetricConfig& cfg, const FeaturePoint& p0) {
    const double s = cfg.params.sigma, l = cfg.params.lambda;
    const double c = 1.0 / (4.0 * s * s) + 2.0 * kPi * kPi / (l * l);
    const double b = 1.0 / (4.0 * s * s);
    const double C = std::cos(p0.theta), S = std::sin(p0.theta);
    Eigen::Matrix3d M;
    M << c * C * C + b * S * S, (c - b) * C * S, 0.0,
         (c - b) * C * S, c * S * S + b * C * C, 0.0,
         0.0, 0.0, s * s * kPi * kPi / (l * l);
    const double scale = cfg.params.normalize_unit ? 2.0 : 2.0 * s * s * kPi;
    MetricTensor t;
    t.g = scale * M;
    t.g_inv = t.g.inverse();
    t.base = p0;
    return t;
}

double metric_det_formula(const GaborParams& params) {
    const double s = params.sigma, l = params.lambda;
    return 8.0 * std::pow(s, 6) * kPi * kPi * kPi * (1.0 / (4.0 * s * s) + 2.0 * kPi * kPi / (l * l)) *
           (1.0 / (4.0 * s * s)) * (s * s * kPi * kPi / (l * l));
}

Eigen::Matrix3d limit_cometric(double A, double theta0) {
    if (!(A > 0.0)) throw ConfigError("cometric limit needs A > 0");
    const double C = std::cos(theta0), S = std::sin(theta0);
    Eigen::Matrix3d m;
    m << S * S, -C * S, 0.0,
         -C * S, C * C, 0.0,
         0.0, 0.0, 1.0 / (4.0 * kPi * kPi * A * A);
    return (4.0 * A / kPi) * m;
}

double patch_ball_radius(const MetricConfig& cfg, const PatchSpec& spec, const FeaturePoint& p0,
                         int n_directions) {
    const double sig = cfg.params.sigma;
    // Ray lengths in scaled coordinates: spatial up to 6 sigma, angle up to pi.
    const double reach_xy = 6.0 * sig;
    const int n_steps = 400;
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    const double c0 = std::cos(p0.theta), s0 = std::sin(p0.theta);
    double best = std::sqrt(2.0 * norm_t(cfg));
    for (int n = 0; n < n_directions; ++n) {
        // Fibonacci sphere in (a, b, theta) with axes scaled to their reach
        const double z = 1.0 - 2.0 * (n + 0.5) / n_directions;
        const double rr = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double ph = golden * n;
        const double ua = rr * std::cos(ph) * reach_xy, ub = rr * std::sin(ph) * reach_xy, ut = z * kPi;
        for (int k = 1; k <= n_steps; ++k) {
            const double f = static_cast<double>(k) / n_steps;
            const double a = f * ua, b = f * ub;
            const FeaturePoint q(p0.x + c0 * a - s0 * b, p0.y + s0 * a + c0 * b, p0.theta + f * ut);
            if (patch_contains(spec, q, p0)) continue;
            best = std::min(best, distance(cfg, q, p0));
        }
    }
    return 0.99 * best;
}

std::array<int, 3> distance_window(const MetricConfig& cfg, const FeatureGrid& grid, double r) {
    const double t = norm_t(cfg);
    std::array<int, 3> w{grid.x().count - 1, grid.y().count - 1, grid.theta().count - 1};
    if (r * r >= 2.0 * t) return w;
    const double L = -std::log(1.0 - r * r / (2.0 * t));
    const double s = cfg.params.sigma, l = cfg.params.lambda;
    const double reach = 2.0 * s * std::sqrt(L);
    w[0] = std::min(w[0], static_cast<int>(std::floor(reach / grid.x().step + 1e-9)));
    w[1] = std::min(w[1], static_cast<int>(std::floor(reach / grid.y().step + 1e-9)));
    const double cos_bound = l * l * L / (2.0 * s * s * kPi * kPi);
    if (cos_bound < 2.0) {
        const double max_dt = std::acos(1.0 - cos_bound);
        w[2] = std::min(w[2], static_cast<int>(std::floor(max_dt / grid.theta().step + 1e-9)));
    }
    return w;
}

double default_hop_radius(const MetricConfig& cfg, const FeatureGrid& grid) {
    double m = 0.0;
    for (int k = 0; k < grid.theta().count; ++k) {
        const double th = grid.theta().at(k);
        const FeaturePoint o(0.0, 0.0, th);
        m = std::max(m, distance(cfg, FeaturePoint(grid.x().step, 0.0, th), o));
        m = std::max(m, distance(cfg, FeaturePoint(0.0, grid.y().step, th), o));
        m = std::max(m, distance(cfg, FeaturePoint(0.0, 0.0, th + grid.theta().step), o));
    }
    return 3.0 * m;
}

GluedDistance::GluedDistance(const MetricConfig& cfg, const PatchSpec& spec, const FeatureGrid& grid, double r_hop)
    : cfg_(cfg), spec_(spec), grid_(grid), r_hop_(r_hop > 0.0 ? r_hop : default_hop_radius(cfg, grid)) {
    const std::size_t n = grid_.size();
    const auto win = distance_window(cfg_, grid_, r_hop_);
    std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
    for (std::size_t i = 0; i < n; ++i) {
        const FeaturePoint pi = grid_.point(i);
        for_each_in_window(grid_, i, win, [&](std::size_t j) {
            if (j <= i) return;
            const FeaturePoint pj = grid_.point(j);
            if (!patch_contains(spec_, pj, pi)) return;
            const double d = distance(cfg_, pj, pi);
            if (d > r_hop_) return;
            adj[i].emplace_back(j, d);
            adj[j].emplace_back(i, d);
        });
    }
    row_ptr_.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) row_ptr_[i + 1] = row_ptr_[i] + adj[i].size();
    col_.reserve(row_ptr_[n]);
    w_.reserve(row_ptr_[n]);
    for (auto& row : adj) {
        std::sort(row.begin(), row.end());
        for (auto& [j, d] : row) {
            col_.push_back(j);
            w_.push_back(d);
        }
    }
}

bool GluedDistance::hop_admissible(const FeaturePoint& p, const FeaturePoint& p0) const {
    return patch_contains(spec_, p, p0) && distance(cfg_, p, p0) <= r_hop_;
}

const std::vector<double>& GluedDistance::from(std::size_t s) const {
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(s);
        if (it != cache_.end()) return it->second;
    }
    const std::size_t n = grid_.size();
    std::vector<double> dist(n, kUnreachable);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    dist[s] = 0.0;
    pq.emplace(0.0, s);
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        for (std::size_t e = row_ptr_[u]; e < row_ptr_[u + 1]; ++e) {
            const double nd = d + w_[e];
            if (nd < dist[col_[e]]) {
                dist[col_[e]] = nd;
                pq.emplace(nd, col_[e]);
            }
        }
    }
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.emplace(s, std::move(dist)).first->second;
}

double GluedDistance::between(std::size_t i, std::size_t j) const {
    if (i >= grid_.size() || j >= grid_.size()) throw NodeNotOnGrid("node index out of range");
    if (i == j) return 0.0;
    // run from the smaller index so that d(i, j) and d(j, i) are the same number
    const std::size_t s = std::min(i, j), t = std::max(i, j);
    return from(s)[t];
}

double GluedDistance::operator()(const FeaturePoint& p, const FeaturePoint& p0) const {
    return between(grid_.find(p), grid_.find(p0));
}

}  // namespace cortical
