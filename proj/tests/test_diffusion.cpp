#include <random>

#include "cortical/diffusion.hpp"
#include "cortical/errors.hpp"
#include "doctest.h"

using namespace cortical;

namespace {

const MetricConfig kUnit{{1.0, 0.5, true}, KernelMode::closed_form};

FeatureGrid small_grid() { return FeatureGrid(Axis::closed(-0.5, 0.5, 7), Axis::closed(-0.5, 0.5, 7), Axis::circle(8)); }

// Largest distance between a node and its single-axis neighbours.
double max_step_distance(const FeatureGrid& g) {
    const std::size_t c = g.index(3, 3, 0);
    return std::max({distance(kUnit, g.point(g.index(4, 3, 0)), g.point(c)),
                     distance(kUnit, g.point(g.index(3, 4, 0)), g.point(c)),
                     distance(kUnit, g.point(g.index(3, 3, 1)), g.point(c))});
}

// Random symmetric sparse kernel on a ring with variable bandwidth.
SparseKernel random_kernel(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.1, 1.0);
    std::vector<std::vector<double>> dense(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        dense[i][i] = U(rng);
        for (std::size_t k = 1; k <= 3; ++k) {
            const std::size_t j = (i + k) % n;
            if (U(rng) < 0.7) dense[i][j] = dense[j][i] = U(rng);
        }
    }
    SparseKernel K;
    K.n = n;
    K.row_ptr.push_back(0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j)
            if (dense[i][j] > 0) {
                K.col.push_back(static_cast<std::uint32_t>(j));
                K.val.push_back(dense[i][j]);
            }
        K.row_ptr.push_back(K.col.size());
    }
    return K;
}

// Circulant kernel on a ring: every row has the same sum.
SparseKernel ring_kernel(std::size_t n) {
    SparseKernel K;
    K.n = n;
    K.row_ptr.push_back(0);
    const double w[3] = {1.0, 0.5, 0.2};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<std::uint32_t, double>> row;
        for (int k = -2; k <= 2; ++k) row.emplace_back(static_cast<std::uint32_t>((i + n + k) % n), w[std::abs(k)]);
        std::sort(row.begin(), row.end());
        for (auto& [j, v] : row) {
            K.col.push_back(j);
            K.val.push_back(v);
        }
        K.row_ptr.push_back(K.col.size());
    }
    return K;
}

double row_integral(const SparseKernel& S, std::size_t i, const std::vector<double>& Q, const std::vector<double>& mu) {
    double s = 0;
    for (std::size_t e = S.row_ptr[i]; e < S.row_ptr[i + 1]; ++e) s += S.val[e] * Q[S.col[e]] * mu[S.col[e]];
    return s;
}

}  // namespace

TEST_CASE("sigmoid") {
    CHECK(sigmoid(0) == 0.5);
    for (double z : {-5.0, -0.3, 0.7, 3.0}) CHECK(sigmoid(-z) == doctest::Approx(1 - sigmoid(z)).epsilon(1e-14));
    for (double d : {0.0, 0.5, 1.3, 2.0}) {
        const double K = 1 - d * d / 2;
        CHECK(sigmoid(K) == doctest::Approx(std::exp(-d * d / 2) / (std::exp(-1.0) + std::exp(-d * d / 2))).epsilon(1e-14));
    }
    // relative gap to e exp(-d^2/2) is e^K / (1 + e^K), K = 1 - d^2/2
    auto gap = [](double d) {
        const double K = 1 - d * d / 2;
        return 1 - sigmoid(K) / std::exp(K);
    };
    CHECK(gap(5.0) == doctest::Approx(std::exp(-11.5) / (1 + std::exp(-11.5))).epsilon(1e-6));
    CHECK(gap(5.0) < 1.1e-5);
    CHECK(gap(5.5) < 2e-6);
    CHECK(gap(7.0) < gap(5.5));
}

TEST_CASE("base kernel structure") {
    const auto g = small_grid();
    const auto K = build_base_kernel(kUnit, g, KernelBuildParams{0.9});
    for (std::size_t i = 0; i < K.n; ++i) {
        CHECK(K.at(i, i) == doctest::Approx(sigmoid(1.0)).epsilon(1e-15));
        for (std::size_t e = K.row_ptr[i]; e < K.row_ptr[i + 1]; ++e) {
            CHECK(K.val[e] > 0.0);
            CHECK(K.at(K.col[e], i) == K.val[e]);
            if (e > K.row_ptr[i]) CHECK(K.col[e - 1] < K.col[e]);
            CHECK(distance(kUnit, g.point(K.col[e]), g.point(i)) <= 0.9 + 1e-12);
        }
    }
    CHECK(sigmoid(1.0) == doctest::Approx(0.7311).epsilon(1e-4));
    // every pair within the cutoff is stored
    std::size_t within = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j) within += distance(kUnit, g.point(i), g.point(j)) <= 0.9;
    CHECK(within == K.nnz());

    KernelBuildParams th{0.9, Activation::threshold, 0.1};
    const auto T = build_base_kernel(kUnit, g, th);
    for (std::size_t i = 0; i < T.n; i += 17)
        for (std::size_t e = T.row_ptr[i]; e < T.row_ptr[i + 1]; ++e)
            CHECK(T.val[e] == doctest::Approx(kernel(kUnit, g.point(T.col[e]), g.point(i)) - 0.1).epsilon(1e-12));
    CHECK(T.at(0, 0) == doctest::Approx(0.9));

    CHECK_THROWS_AS(build_base_kernel(kUnit, g, KernelBuildParams{1e-3}), EmptyRow);
    KernelBuildParams lone{1e-3};
    lone.allow_isolated = true;
    const auto D = build_base_kernel(kUnit, g, lone);
    CHECK(D.isolated == g.size());
    CHECK(D.nnz() == g.size());
    CHECK(K.isolated == 0);
    std::vector<double> mu(g.size(), 0.5), one(g.size(), 1.0);
    const auto SD = cl_normalize(D, 1.0, one, mu);
    CHECK(SD.at(5, 5) == doctest::Approx(2.0));
}

TEST_CASE("cl_normalize") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto K = random_kernel(40, seed);
        std::mt19937_64 rng(seed + 100);
        std::uniform_real_distribution<double> U(0.2, 2.0);
        std::vector<double> Q(40), mu(40);
        for (auto& q : Q) q = U(rng);
        for (auto& m : mu) m = U(rng);
        for (double alpha : {0.0, 0.5, 1.0}) {
            const auto S = cl_normalize(K, alpha, Q, mu);
            for (std::size_t i = 0; i < S.n; ++i) CHECK(std::abs(row_integral(S, i, Q, mu) - 1.0) < 1e-12);
        }
        // alpha = 0: plain normalization of k
        const auto S0 = cl_normalize(K, 0.0, Q, mu);
        for (std::size_t i = 0; i < K.n; ++i) {
            const double s = row_integral(K, i, Q, mu);
            for (std::size_t e = K.row_ptr[i]; e < K.row_ptr[i + 1]; ++e)
                CHECK(S0.val[e] == doctest::Approx(K.val[e] / s).epsilon(1e-13));
        }
        const auto S1 = cl_normalize(K, 1.0, Q, mu), Sh = cl_normalize(K, 0.5, Q, mu);
        double diff = 0;
        for (std::size_t e = 0; e < S1.nnz(); ++e) diff = std::max(diff, std::abs(S1.val[e] - Sh.val[e]));
        CHECK(diff > 1e-3);
    }
    // constant Q_t: every alpha gives plain row normalization
    const auto R = ring_kernel(30);
    std::vector<double> one(30, 1.0), mu(30, 0.25);
    const auto a = cl_normalize(R, 1.0, one, mu), b = cl_normalize(R, 0.5, one, mu), c = cl_normalize(R, 0.0, one, mu);
    for (std::size_t e = 0; e < R.nnz(); ++e) {
        CHECK(a.val[e] == doctest::Approx(c.val[e]).epsilon(1e-13));
        CHECK(b.val[e] == doctest::Approx(c.val[e]).epsilon(1e-13));
    }
    std::vector<double> zero(30, 0.0);
    CHECK_THROWS_AS(cl_normalize(R, 1.0, zero, mu), ZeroRowMass);
}

TEST_CASE("propagate") {
    const auto K = random_kernel(50, 9);
    std::vector<double> mu(50, 0.3), Q(50, 1.0);
    const auto S = cl_normalize(K, 1.0, Q, mu);
    const auto f1 = propagate(S, 7, 1, mu);
    for (std::size_t i = 0; i < 50; ++i) CHECK(f1[i] == S.at(i, 7));
    const auto h = apply_H(S, std::vector<double>(50, 2.5), mu);
    for (double v : h) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));
    const auto f4 = propagate(S, 7, 4, mu);
    CHECK(f4 == apply_H(S, apply_H(S, apply_H(S, f1, mu), mu), mu));
    CHECK_THROWS_AS(propagate(S, 7, 0, mu), ConfigError);

    // on a circulant kernel S is doubly stochastic and H preserves the mu-weighted mass
    const auto R = ring_kernel(40);
    std::vector<double> m2(40, 0.5), q2(40, 1.0);
    const auto SR = cl_normalize(R, 1.0, q2, m2);
    auto f = propagate(SR, 3, 1, m2);
    const double mass = weighted_mass(m2, f);
    for (int step = 0; step < 10; ++step) {
        f = apply_H(SR, f, m2);
        CHECK(std::abs(weighted_mass(m2, f) - mass) < 1e-10 * mass);
    }

    PropagationParams pp;
    pp.n_steps = 2;
    pp.alpha = 0.5;
    const auto viaparams = propagate(K, 7, pp, mu);
    const auto direct = propagate(cl_normalize(K, 0.5, Q, mu), 7, 2, mu);
    CHECK(viaparams == direct);
}

TEST_CASE("graph construction and Laplacian") {
    // two nodes, one edge
    const CandidateFn pair = [](std::size_t i, const std::function<void(std::size_t)>& emit) { emit(1 - i); };
    const auto g2 = build_graph(
        2, {1.0, 1.0}, pair, [](std::size_t, std::size_t) { return 0.5; }, 1.0, 1.0);
    CHECK(g2.edge_count() == 1);
    const auto L2 = laplacian_apply(g2, {1.0, 0.0});
    CHECK(L2[0] == -1.0);
    CHECK(L2[1] == 1.0);
    CHECK_THROWS_AS(build_graph(
                        2, {1.0, 1.0}, pair, [](std::size_t, std::size_t) { return 0.5; }, 0.4, 1.0),
                    DisconnectedGraph);
    try {
        build_graph(2, {1.0, 1.0}, pair, [](std::size_t, std::size_t) { return 0.5; }, 0.4, 1.0);
    } catch (const DisconnectedGraph& e) {
        CHECK(e.components() == 2);
    }
    const auto loose = build_graph(
        2, {1.0, 1.0}, pair, [](std::size_t, std::size_t) { return 0.5; }, 0.4, 1.0, Connectivity::allow);
    CHECK(loose.components == 2);

    const auto g = small_grid();
    std::vector<double> mu(g.size(), g.cell_volume());
    const double rho = 1.5 * max_step_distance(g);
    const auto G = build_graph(g, kUnit, mu, rho, 1.0);
    for (std::size_t i = 0; i < G.n; ++i)
        for (std::size_t e = G.row_ptr[i]; e < G.row_ptr[i + 1]; ++e) {
            const std::size_t j = G.col[e];
            CHECK(j != i);
            bool found = false;
            for (std::size_t f = G.row_ptr[j]; f < G.row_ptr[j + 1]; ++f)
                if (G.col[f] == i) found = G.w[f] == G.w[e];
            CHECK(found);
            CHECK(distance(kUnit, g.point(i), g.point(j)) < rho);
        }
    CHECK(G.components == 1);
    std::vector<double> c(G.n, 4.2), rnd(G.n);
    for (double v : laplacian_apply(G, c)) CHECK(v == 0.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> U(-1, 1);
    for (auto& v : rnd) v = U(rng);
    CHECK(std::abs(weighted_mass(G.mu, laplacian_apply(G, rnd))) < 1e-10);
}

TEST_CASE("kappa calibration on flat grids") {
    for (int dim : {2, 3}) {
        const double h = 0.1, rho = 0.45;
        const int m = dim == 2 ? 41 : 15;
        const double cell = std::pow(h, dim);
        const double kappa = calibrate_kappa(dim, rho, cell);
        std::vector<std::array<double, 3>> pts;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                for (int k = 0; k < (dim == 3 ? m : 1); ++k)
                    pts.push_back({(i - m / 2) * h, (j - m / 2) * h, dim == 3 ? (k - m / 2) * h : 0.0});
        const std::size_t n = pts.size();
        auto dist = [&](std::size_t a, std::size_t b) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += (pts[a][k] - pts[b][k]) * (pts[a][k] - pts[b][k]);
            return std::sqrt(s);
        };
        const CandidateFn all = [n](std::size_t i, const std::function<void(std::size_t)>& emit) {
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) emit(j);
        };
        const auto G = build_graph(n, std::vector<double>(n, cell), all, dist, rho, kappa);
        std::vector<double> u(n);
        for (std::size_t i = 0; i < n; ++i) u[i] = pts[i][0] * pts[i][0] + pts[i][1] * pts[i][1] + pts[i][2] * pts[i][2];
        const auto Lu = laplacian_apply(G, u);
        const double half = (m / 2) * h;
        int interior = 0;
        for (std::size_t i = 0; i < n; ++i) {
            bool in = true;
            for (int k = 0; k < dim; ++k) in = in && std::abs(pts[i][k]) <= half - rho;
            if (!in) continue;
            ++interior;
            CHECK(Lu[i] == doctest::Approx(2.0 * dim).epsilon(0.05));
        }
        CHECK(interior > 0);
    }
}

TEST_CASE("heat_run") {
    const auto g = small_grid();
    std::vector<double> mu(g.size(), g.cell_volume());
    const double rho = 1.5 * max_step_distance(g);
    const double kappa = calibrate_kappa(3, rho, g.cell_volume());
    const auto G = build_graph(g, kUnit, mu, rho, kappa);
    const auto f0 = dirac(G, g.index(3, 3, 0));
    CHECK(weighted_mass(G.mu, f0) == doctest::Approx(1.0).epsilon(1e-15));
    const double dt = 0.5 / G.max_rate();
    const auto s0 = heat_run(G, f0, dt, 0);
    CHECK(s0.f == f0);
    CHECK(s0.steps == 0);
    auto f = f0;
    for (int k = 0; k < 30; ++k) {
        const auto s = heat_run(G, f, dt, 1);
        CHECK(std::abs(weighted_mass(G.mu, s.f) - weighted_mass(G.mu, f)) < 1e-12);
        for (double v : s.f) CHECK(v >= 0.0);
        f = s.f;
    }
    const auto s = heat_run(G, f0, dt, 5);
    CHECK(s.steps == 5);
    CHECK(s.time == doctest::Approx(5 * dt));
    CHECK_THROWS_AS(heat_run(G, f0, 1.01 / G.max_rate(), 1), UnstableStep);
}

TEST_CASE("argmax orientation") {
    const FeatureGrid g(Axis::closed(-1, 1, 3), Axis::closed(-1, 1, 3), Axis::open_interval(-1.5, 1.5, 0.5));
    std::vector<double> field(g.size(), 0.0);
    field[g.index(1, 2, 4)] = 3.0;
    auto p = argmax_orientation(g, field, 0.0);
    CHECK(p.theta_bar[1 * 3 + 2] == doctest::Approx(g.theta().at(4)));
    CHECK(p.max_value[1 * 3 + 2] == 3.0);
    // constant in theta: closest sample to theta0
    std::vector<double> flat(g.size(), 1.0);
    p = argmax_orientation(g, flat, 0.55);
    for (double t : p.theta_bar) CHECK(t == doctest::Approx(0.5));
    p = argmax_orientation(g, flat, -1.2);
    for (double t : p.theta_bar) CHECK(t == doctest::Approx(-1.0));
    // periodic axis wraps the tie distance
    const FeatureGrid gp(Axis::closed(-1, 1, 2), Axis::closed(-1, 1, 2), Axis::circle(8));
    p = argmax_orientation(gp, std::vector<double>(gp.size(), 1.0), kTwoPi - 0.1);
    for (double t : p.theta_bar) CHECK(t == 0.0);
}

TEST_CASE("patchiness and support statistics") {
    const PlaneGrid pg(Axis::open_interval(-2, 2, 0.05), Axis::open_interval(-2, 2, 0.05));
    const auto m = generate_map(pg, 30, kTwoPi / 0.8, 4);
    const double th0 = m.theta[m.grid.index(39, 39)];
    const auto uni = patchiness_stats(m, std::vector<double>(m.theta.size(), 1.0), th0);
    CHECK(uni.ratio == doctest::Approx(1.0));
    std::vector<double> ind(m.theta.size());
    for (std::size_t i = 0; i < ind.size(); ++i) ind[i] = orientation_difference(m.theta[i], th0) < 0.1 ? 1.0 : 0.0;
    const auto conc = patchiness_stats(m, ind, th0);
    CHECK(conc.ratio < 0.2);

    CHECK(orientation_difference(0.05, kPi - 0.05) == doctest::Approx(0.1));
    const std::vector<double> v{0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 0};
    const auto mask = top_decile_mask(v);
    // lower 90th percentile of the positives {1..10} is 9
    CHECK(mask[10] == 1);
    CHECK(mask[11] == 1);
    CHECK(std::count(mask.begin(), mask.end(), 1) == 2);
    CHECK(jaccard({1, 1, 0, 0}, {0, 1, 1, 0}) == doctest::Approx(1.0 / 3));

    std::vector<double> line(pg.size(), 0.0);
    for (int j = 0; j < pg.y().count; ++j) line[pg.index(39, j)] = 1.0;
    const auto mo = second_moments(pg, line, Vec2(0, 0), kPi / 2);
    CHECK(mo.across == doctest::Approx(0.0));
    CHECK(mo.along > 1.0);
}
