#include "cortical/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "cortical/errors.hpp"
#include "cortical/io.hpp"

namespace cortical {

using nlohmann::json;

namespace {

json axis_json(double lo, double hi, double step) { return {{"lo", lo}, {"hi", hi}, {"step", step}}; }

bool compatible(const json& def, const json& v) {
    if (def.is_null() || def.is_string()) return v.is_string();
    if (def.is_boolean()) return v.is_boolean();
    if (def.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    if (def.is_number_integer()) return v.is_number_integer();
    if (def.is_number_float()) return v.is_number();
    if (def.is_array()) {
        if (!v.is_array() || v.empty()) return false;
        return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
    }
    return false;
}

const char* type_name(const json& def) {
    if (def.is_null() || def.is_string()) return "string";
    if (def.is_boolean()) return "boolean";
    if (def.is_number_unsigned()) return "non-negative integer";
    if (def.is_number_integer()) return "integer";
    if (def.is_number_float()) return "number";
    if (def.is_array()) return "non-empty array of numbers";
    return "object";
}

void merge(const json& def, const json& in, json& out, const std::string& path, std::vector<std::string>& errors) {
    for (auto it = in.begin(); it != in.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (path.empty() && it.key() == "manifest") continue;
        if (!def.contains(it.key())) {
            errors.push_back("unknown field " + key);
            continue;
        }
        const json& d = def[it.key()];
        if (d.is_object()) {
            if (!it.value().is_object())
                errors.push_back(key + " must be an object");
            else
                merge(d, it.value(), out[it.key()], key, errors);
            continue;
        }
        if (!compatible(d, it.value())) {
            errors.push_back(key + " must be a " + std::string(type_name(d)));
            continue;
        }
        out[it.key()] = it.value();
    }
}

void check_choice(const json& v, const std::string& key, std::initializer_list<const char*> choices,
                  std::vector<std::string>& errors) {
    const auto s = v.get<std::string>();
    for (const char* c : choices)
        if (s == c) return;
    std::string msg = key + " must be one of";
    for (const char* c : choices) msg += std::string(" ") + c;
    errors.push_back(msg + " (got \"" + s + "\")");
}

Axis open_axis(const json& a) {
    return Axis::open_interval(a.at("lo").get<double>(), a.at("hi").get<double>(), a.at("step").get<double>());
}

double uniform01(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1p-53; }

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + p.string());
    os << content;
}

class Outputs {
public:
    explicit Outputs(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw ConfigError("cannot create output directory " + dir_.string() + ": " + ec.message());
    }

    void add(const std::string& name, const std::string& content) {
        write_file(dir_ / name, content);
        names_.push_back(name);
    }
    void add_json(const std::string& name, const json& j) { add(name, j.dump(2) + "\n"); }

    void manifest(const RunConfig& rc, const json& derived) {
        json m = rc.resolved;
        auto names = names_;
        names.push_back("manifest.json");
        std::sort(names.begin(), names.end());
        m["manifest"] = {{"outputs", names}, {"derived", derived}};
        write_file(dir_ / "manifest.json", m.dump(2) + "\n");
    }

private:
    std::filesystem::path dir_;
    std::vector<std::string> names_;
};

std::string feature_field_csv(const FeatureGrid& g, const std::vector<double>& f) {
    std::ostringstream os;
    os << "x,y,theta,value\n";
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto c = g.coords(i);
        os << io::num(g.x().at(c[0])) << ',' << io::num(g.y().at(c[1])) << ',' << io::num(g.theta().at(c[2])) << ','
           << io::num(f[i]) << '\n';
    }
    return os.str();
}

std::string plane_pgm(const PlaneGrid& g, const std::vector<double>& v) {
    // y increases upwards in the image
    const int w = g.x().count, h = g.y().count;
    std::vector<double> img(static_cast<std::size_t>(w) * h);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) img[static_cast<std::size_t>(r) * w + c] = v[g.index(c, h - 1 - r)];
    std::ostringstream os;
    io::write_pgm(os, w, h, img);
    return os.str();
}

std::string plane_field_csv(const PlaneGrid& g, const std::vector<double>& v) {
    std::ostringstream os;
    os << "x,y,value\n";
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto c = g.coords(i);
        os << io::num(g.x().at(c[0])) << ',' << io::num(g.y().at(c[1])) << ',' << io::num(v[i]) << '\n';
    }
    return os.str();
}

std::string theta_bar_csv(const FeatureGrid& g, const Projection& p) {
    const auto plane = plane_of(g);
    std::ostringstream os;
    os << "x,y,theta_bar,max_value\n";
    for (std::size_t i = 0; i < plane.size(); ++i) {
        const auto c = plane.coords(i);
        os << io::num(plane.x().at(c[0])) << ',' << io::num(plane.y().at(c[1])) << ',' << io::num(p.theta_bar[i])
           << ',' << io::num(p.max_value[i]) << '\n';
    }
    return os.str();
}

json moments_json(const AxisMoments& m) { return {{"along", m.along}, {"across", m.across}, {"ratio", m.ratio}}; }

json patchiness_json(const PatchinessReport& r) {
    return {{"median_top", r.median_top}, {"median_all", r.median_all}, {"ratio", r.ratio}, {"top_count", r.top_count}};
}

struct HeatTrace {
    HeatState state;
    double max_step_drift = 0.0;
    double min_value = 0.0;
    double initial_mass = 0.0;
};

HeatTrace run_heat_traced(const GraphSpec& g, std::size_t p0, double dt, int n_iter) {
    HeatTrace tr;
    tr.state = heat_run(g, dirac(g, p0), dt, 0);
    tr.initial_mass = weighted_mass(g.mu, tr.state.f);
    tr.min_value = *std::min_element(tr.state.f.begin(), tr.state.f.end());
    double mass = tr.initial_mass;
    for (int k = 0; k < n_iter; ++k) {
        auto next = heat_run(g, tr.state.f, dt, 1);
        next.time += tr.state.time;
        next.steps += tr.state.steps;
        tr.state = std::move(next);
        const double m = weighted_mass(g.mu, tr.state.f);
        tr.max_step_drift = std::max(tr.max_step_drift, std::abs(m - mass));
        mass = m;
        tr.min_value = std::min(tr.min_value, *std::min_element(tr.state.f.begin(), tr.state.f.end()));
    }
    return tr;
}

json heat_json(const GraphSpec& g, const HeatTrace& tr, double dt) {
    return {{"rho", g.rho},
            {"kappa", g.kappa},
            {"edges", g.edge_count()},
            {"components", g.components},
            {"max_rate", g.max_rate()},
            {"dt", dt},
            {"cfl", dt * g.max_rate()},
            {"steps", tr.state.steps},
            {"time", tr.state.time},
            {"initial_mass", tr.initial_mass},
            {"final_mass", weighted_mass(g.mu, tr.state.f)},
            {"max_step_mass_drift", tr.max_step_drift},
            {"min_value", tr.min_value}};
}

json kernel_json(const SparseKernel& k) {
    std::size_t max_row = 0;
    for (std::size_t i = 0; i < k.n; ++i) max_row = std::max(max_row, k.row_size(i));
    return {{"nodes", k.n},
            {"nnz", k.nnz()},
            {"mean_row_occupancy", static_cast<double>(k.nnz()) / (static_cast<double>(k.n) * k.n)},
            {"max_row_occupancy", static_cast<double>(max_row) / k.n},
            {"isolated_nodes", k.isolated}};
}

Eigen::Matrix3d fd_hessian_d2(const MetricConfig& cfg, const FeaturePoint& p0, double h) {
    auto f = [&](double a, double b, double c) {
        const double d = distance(cfg, FeaturePoint(p0.x + a, p0.y + b, p0.theta + c), p0);
        return d * d;
    };
    auto at = [&](const Eigen::Vector3d& v) { return f(v[0], v[1], v[2]); };
    Eigen::Matrix3d H;
    const double f0 = at(Eigen::Vector3d::Zero());
    for (int k = 0; k < 3; ++k) {
        const Eigen::Vector3d ek = h * Eigen::Vector3d::Unit(k);
        H(k, k) = (at(ek) - 2 * f0 + at(-ek)) / (h * h);
        for (int l = 0; l < k; ++l) {
            const Eigen::Vector3d el = h * Eigen::Vector3d::Unit(l);
            H(k, l) = H(l, k) = (at(ek + el) - at(ek - el) - at(el - ek) + at(-ek - el)) / (4 * h * h);
        }
    }
    return H;
}

json matrix_json(const Eigen::Matrix3d& m) {
    json rows = json::array();
    for (int i = 0; i < 3; ++i) rows.push_back({m(i, 0), m(i, 1), m(i, 2)});
    return rows;
}

std::vector<double> numbers(const json& a) { return a.get<std::vector<double>>(); }

void run_gabor_kernel(const RunConfig& rc, Outputs& out, json& derived, std::ostream& log) {
    const auto cfg = gabor_metric(rc.resolved);
    const auto grid = gabor_grid(rc.resolved);
    const auto start = gabor_start(rc.resolved);
    const std::size_t p0 = grid.find(start);
    const double t = norm_t(cfg);
    std::vector<double> k(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) k[i] = kernel(cfg, grid.point(i), start) / t;
    const auto base = build_base_kernel(cfg, grid, kernel_build_params(rc.resolved));
    const auto fig = gabor_figure_stats(grid, k, start);
    log << "kernel: " << grid.size() << " nodes, " << base.nnz() << " stored entries\n";

    const auto S = json::object({{"experiment", rc.experiment},
                                 {"t", t},
                                 {"start_node", p0},
                                 {"grid_nodes", {grid.x().count, grid.y().count, grid.theta().count}},
                                 {"base_kernel", kernel_json(base)},
                                 {"figure", fig.to_json()}});
    out.add("kernel.csv", feature_field_csv(grid, k));
    out.add("kernel_projection.pgm", plane_pgm(plane_of(grid), fig.projection.max_value));
    out.add("theta_bar.csv", theta_bar_csv(grid, fig.projection));
    const auto rg = covering_grid(cfg.params, std::span<const FeaturePoint>(&start, 1));
    const auto filt = sample_filter(cfg.params, start, rg);
    std::ostringstream fp, fc;
    write_filter_pgm(filt, fp);
    write_filter_csv(filt, fc);
    out.add("filter.pgm", fp.str());
    out.add("filter.csv", fc.str());
    out.add_json("report.json", S);
    derived = {{"t", t}, {"start_node", p0}, {"nnz", base.nnz()}};
}

void run_gabor_field(const RunConfig& rc, Outputs& out, json& derived, std::ostream& log, bool heat) {
    const auto run = heat ? gabor_heat(rc) : gabor_propagation(rc);
    const auto start = gabor_start(rc.resolved);
    const auto fig = gabor_figure_stats(run.grid, run.field, start);
    log << (heat ? "heat" : "propagation") << ": elongation " << fig.moments.ratio << ", collinear deviation "
        << fig.collinear_max_steps << " steps\n";
    json report = run.stats;
    report["experiment"] = rc.experiment;
    report["figure"] = fig.to_json();
    const std::string stem = heat ? "heat" : "k" + std::to_string(propagation_params(rc.resolved).n_steps);
    out.add("field.csv", feature_field_csv(run.grid, run.field));
    out.add(stem + "_projection.pgm", plane_pgm(plane_of(run.grid), fig.projection.max_value));
    out.add("theta_bar.csv", theta_bar_csv(run.grid, fig.projection));
    out.add_json("report.json", report);
    derived = run.stats;
}

void run_surface_field(const RunConfig& rc, Outputs& out, json& derived, std::ostream& log, bool heat) {
    const auto run = heat ? surface_heat(rc) : surface_propagation(rc);
    log << (heat ? "surface heat" : "surface propagation") << ": patchiness ratio "
        << run.stats["patchiness"]["ratio"].get<double>() << "\n";
    json report = run.stats;
    report["experiment"] = rc.experiment;
    std::ostringstream mp, mc;
    write_map_pgm(run.map, mp);
    write_map_csv(run.map, mc);
    out.add("map.pgm", mp.str());
    out.add("map.csv", mc.str());
    out.add_json("pinwheels.json", pinwheels_json(run.map));
    out.add("field.csv", plane_field_csv(run.map.grid, run.field));
    out.add(heat ? "heat.pgm" : "field.pgm", plane_pgm(run.map.grid, run.field));
    out.add_json("report.json", report);
    derived = run.stats;
}

void run_mcp_sweep(const RunConfig& rc, Outputs& out, json& derived, std::ostream& log) {
    const json& m = rc.resolved["mcp"];
    const std::string kind = m["geometry"].get<std::string>();
    const int cpr = m["cells_per_radius"].get<int>();
    McpOptions opt;
    opt.theta_max = m["theta_max"].get<double>();
    opt.cell_stride = m["cell_stride"].get<int>();
    opt.mu_r_form = m["mu_r_form"].get<bool>();
    if (cpr < 4) throw ConfigError("mcp.cells_per_radius must be at least 4");
    if (opt.cell_stride < 1) throw ConfigError("mcp.cell_stride must be at least 1");

    OrientationMap map;
    McpGeometry geom;
    if (kind == "euclidean") {
        geom = euclidean_mcp_geometry(cpr);
    } else {
        if (kind == "pinwheel") {
            map = surface_map(rc.resolved, rc.seed);
        } else {
            const json& s = rc.resolved["surface"];
            const Axis a = open_axis(s["grid"]);
            const double c = m["constant_theta"].get<double>();
            map = map_from_function(PlaneGrid(a, a), [c](double, double) { return c; });
        }
        geom = surface_mcp_geometry(map, cpr);
    }

    const int n_centers = m["n_centers"].get<int>();
    const double range = m["center_range"].get<double>();
    const double min_pw = m["min_pinwheel_distance"].get<double>();
    if (n_centers < 1) throw ConfigError("mcp.n_centers must be at least 1");
    std::mt19937_64 gen(rc.seed ^ 0x6a09e667f3bcc909ULL);
    std::vector<Vec2> centers;
    for (int attempt = 0; attempt < 100000 && static_cast<int>(centers.size()) < n_centers; ++attempt) {
        const Vec2 c(range * (2 * uniform01(gen) - 1), range * (2 * uniform01(gen) - 1));
        bool ok = true;
        for (auto p : map.pinwheel_set)
            if ((map.node_point(p) - c).norm() < min_pw) {
                ok = false;
                break;
            }
        if (ok) centers.push_back(c);
    }
    if (static_cast<int>(centers.size()) < n_centers)
        throw ConfigError("could not place mcp centers away from the pinwheels");

    const auto rep = mcp_check(geom, centers, numbers(m["radii"]), numbers(m["t_values"]), opt);
    log << "mcp: theta_worst " << rep.theta_worst << (rep.pass ? " (pass)\n" : " (fail)\n");
    std::ostringstream csv;
    csv << "center,r,t,cells,excluded,ball_ratio,volume_ratio,theta_cells,theta_ball,theta_mu_r\n";
    for (const auto& s : rep.samples)
        csv << s.center << ',' << io::num(s.r) << ',' << io::num(s.t) << ',' << s.cells << ',' << s.excluded << ','
            << io::num(s.ball_ratio) << ',' << io::num(s.volume_ratio) << ',' << io::num(s.theta_cells) << ','
            << io::num(s.theta_ball) << ',' << io::num(s.theta_mu_r) << '\n';
    json report = rep.to_json();
    report["experiment"] = rc.experiment;
    if (kind != "euclidean") report["pinwheels"] = map.pinwheel_set.size();
    out.add("mcp_samples.csv", csv.str());
    out.add_json("report.json", report);
    derived = {{"theta_worst", rep.theta_worst}, {"pass", rep.pass}, {"samples", rep.samples.size()}};
}

void run_metric_report(const RunConfig& rc, Outputs& out, json& derived, std::ostream& log) {
    const json& mj = rc.resolved["metric"];
    const auto cfg = gabor_metric(rc.resolved);
    const auto p0 = gabor_start(rc.resolved);
    const auto T = local_metric_tensor(cfg, p0);
    const Eigen::Matrix3d H = fd_hessian_d2(cfg, p0, mj["fd_step"].get<double>());
    const Eigen::Matrix3d two_g = 2 * T.g;
    const double hess_err = (H - two_g).cwiseAbs().maxCoeff() / two_g.cwiseAbs().maxCoeff();

    MetricConfig raw = cfg;
    raw.params.normalize_unit = false;
    const double det_num = local_metric_tensor(raw, p0).g.determinant();
    const double det_formula = metric_det_formula(raw.params);

    const double A = mj["cometric_A"].get<double>();
    const Eigen::Matrix3d limit = limit_cometric(A, p0.theta);
    json cometric = json::array();
    for (double lam : numbers(mj["cometric_lambdas"])) {
        MetricConfig c = raw;
        c.params.lambda = lam;
        c.params.sigma = std::sqrt(A * lam);
        const Eigen::Matrix3d gi = local_metric_tensor(c, p0).g_inv;
        cometric.push_back({{"lambda", lam}, {"max_entry_error", (gi - limit).cwiseAbs().maxCoeff()}});
    }

    double patch_lambda = mj["patch_lambda"].get<double>();
    if (!(patch_lambda > 0)) patch_lambda = cfg.params.lambda;
    const double eps = patch_ball_radius(cfg, PatchSpec{patch_lambda}, p0);

    auto radii = numbers(mj["ball_radii"]);
    std::sort(radii.begin(), radii.end());
    if (!(radii.front() > 0)) throw ConfigError("metric.ball_radii must be positive");
    const int cpr = mj["ball_cells_per_radius"].get<int>();
    if (cpr < 4) throw ConfigError("metric.ball_cells_per_radius must be at least 4");
    std::array<double, 3> step{};
    for (int k = 0; k < 3; ++k) step[k] = radii.front() / (std::sqrt(T.g(k, k)) * cpr);
    const int n_half = static_cast<int>(std::ceil(cpr * radii.back() / radii.front())) + 2;
    const VecD<3> c(p0.x, p0.y, p0.theta);
    const auto table = ball_volume_table<3>(gabor_volume_measure(cfg), gabor_distance_fn(cfg),
                                            Lattice<3>::centered(c, step, n_half), c, radii);
    json normalized = json::array();
    for (std::size_t i = 0; i < table.radii.size(); ++i)
        normalized.push_back(table.volumes[i] / std::pow(table.radii[i], 3));

    log << "metric: hessian error " << hess_err << ", det relative error " << std::abs(det_num / det_formula - 1)
        << "\n";
    json report = {{"experiment", rc.experiment},
                   {"t", norm_t(cfg)},
                   {"g", matrix_json(T.g)},
                   {"g_inv", matrix_json(T.g_inv)},
                   {"det_g", T.g.determinant()},
                   {"fd_hessian_d2", matrix_json(H)},
                   {"hessian_relative_error", hess_err},
                   {"unnormalized_det_numeric", det_num},
                   {"unnormalized_det_formula", det_formula},
                   {"det_relative_error", std::abs(det_num / det_formula - 1)},
                   {"cometric_limit", matrix_json(limit)},
                   {"cometric", cometric},
                   {"patch_ball_radius", eps},
                   {"ball_volumes", table.to_json()},
                   {"ball_volume_over_r3", normalized},
                   {"ball_reference", 4 * kPi / 3},
                   {"ball_loglog_slope", table.loglog_slope()}};
    std::ostringstream csv;
    table.write_csv(csv);
    out.add("ball_volumes.csv", csv.str());
    out.add_json("report.json", report);
    derived = {{"t", norm_t(cfg)}, {"patch_ball_radius", eps}};
}

}  // namespace

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"gabor_kernel",  "gabor_propagate", "gabor_heat",   "surface_propagate",
                                                "surface_heat",  "mcp_sweep",       "metric_report"};
    return names;
}

json default_config() {
    return {
        {"experiment", nullptr},
        {"output_dir", nullptr},
        {"seed", std::uint64_t{1}},
        {"gabor", {{"sigma", 0.5}, {"lambda", 1.0}, {"normalize_unit", true}, {"kernel_mode", "closed_form"}}},
        {"grid",
         {{"x", axis_json(-1.5, 1.5, 0.075)}, {"y", axis_json(-2.0, 2.0, 0.075)}, {"theta", axis_json(-1.5, 1.5, 0.15)}}},
        {"start", {{"x", 0.0}, {"y", 0.0}, {"theta", 0.0}}},
        {"kernel", {{"r_cut", 0.75}, {"activation", "sigmoid"}, {"threshold", 0.1}, {"n_steps", 4}, {"alpha", 1.0}}},
        {"heat", {{"rho", 0.7}, {"dt", 0.01}, {"n_iter", 100}, {"kappa", 0.0}}},
        {"surface",
         {{"sigma", 1.0},
          {"lambda", 1.0},
          {"normalize_unit", true},
          {"grid", axis_json(-2.0, 2.0, 0.05)},
          {"n_waves", 30},
          {"wavelength", 0.8},
          {"pinwheel_threshold", 0.05},
          {"allow_isolated_nodes", true},
          {"start", {{"x", 0.0}, {"y", 0.0}}},
          {"heat", {{"rho", 1.0}, {"dt", 0.01}, {"n_iter", 150}, {"kappa", 0.0}}}}},
        {"mcp",
         {{"geometry", "pinwheel"},
          {"radii", {0.4, 0.2, 0.1, 0.05}},
          {"t_values", {0.25, 0.5, 0.75}},
          {"n_centers", 4},
          {"center_range", 1.2},
          {"min_pinwheel_distance", 0.3},
          {"cells_per_radius", 12},
          {"cell_stride", 2},
          {"theta_max", 4.0},
          {"mu_r_form", false},
          {"constant_theta", 0.0}}},
        {"metric",
         {{"patch_lambda", 0.0},
          {"fd_step", 1e-3},
          {"cometric_A", 1.0},
          {"cometric_lambdas", {0.1, 0.01, 0.001}},
          {"ball_radii", {0.05, 0.1, 0.15, 0.2}},
          {"ball_cells_per_radius", 8}}},
    };
}

RunConfig resolve_config(const json& in) {
    std::vector<std::string> errors;
    const json def = default_config();
    json out = def;
    if (!in.is_object())
        errors.push_back("config must be a JSON object");
    else
        merge(def, in, out, "", errors);
    for (const char* req : {"experiment", "output_dir"})
        if (out[req].is_null()) errors.push_back(std::string("missing field ") + req);
    if (out["experiment"].is_string()) {
        const auto e = out["experiment"].get<std::string>();
        const auto& n = experiment_names();
        if (std::find(n.begin(), n.end(), e) == n.end()) {
            std::string msg = "experiment must be one of";
            for (const auto& s : n) msg += " " + s;
            errors.push_back(msg + " (got \"" + e + "\")");
        }
    }
    check_choice(out["gabor"]["kernel_mode"], "gabor.kernel_mode", {"closed_form", "numeric"}, errors);
    check_choice(out["kernel"]["activation"], "kernel.activation", {"sigmoid", "threshold"}, errors);
    check_choice(out["mcp"]["geometry"], "mcp.geometry", {"pinwheel", "constant", "euclidean"}, errors);
    if (!errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    RunConfig rc;
    rc.experiment = out["experiment"].get<std::string>();
    rc.output_dir = out["output_dir"].get<std::string>();
    rc.seed = out["seed"].get<std::uint64_t>();
    rc.resolved = std::move(out);
    return rc;
}

MetricConfig gabor_metric(const json& r) {
    const json& g = r.at("gabor");
    MetricConfig cfg;
    cfg.params.sigma = g["sigma"].get<double>();
    cfg.params.lambda = g["lambda"].get<double>();
    cfg.params.normalize_unit = g["normalize_unit"].get<bool>();
    cfg.mode = g["kernel_mode"].get<std::string>() == "numeric" ? KernelMode::numeric : KernelMode::closed_form;
    cfg.params.validate();
    return cfg;
}

FeatureGrid gabor_grid(const json& r) {
    const json& g = r.at("grid");
    return FeatureGrid(open_axis(g["x"]), open_axis(g["y"]), open_axis(g["theta"]));
}

FeaturePoint gabor_start(const json& r) {
    const json& s = r.at("start");
    return FeaturePoint(s["x"].get<double>(), s["y"].get<double>(), s["theta"].get<double>());
}

MetricConfig surface_metric(const json& r) {
    const json& s = r.at("surface");
    MetricConfig cfg;
    cfg.params.sigma = s["sigma"].get<double>();
    cfg.params.lambda = s["lambda"].get<double>();
    cfg.params.normalize_unit = s["normalize_unit"].get<bool>();
    cfg.params.validate();
    return cfg;
}

OrientationMap surface_map(const json& r, std::uint64_t seed) {
    const json& s = r.at("surface");
    const Axis a = open_axis(s["grid"]);
    const double wl = s["wavelength"].get<double>();
    if (!(wl > 0)) throw ConfigError("surface.wavelength must be positive");
    const int n = s["n_waves"].get<int>();
    if (n < 1) throw ConfigError("surface.n_waves must be at least 1");
    return generate_map(PlaneGrid(a, a), n, kTwoPi / wl, seed, s["pinwheel_threshold"].get<double>());
}

KernelBuildParams kernel_build_params(const json& r) {
    const json& k = r.at("kernel");
    KernelBuildParams p;
    p.r_cut = k["r_cut"].get<double>();
    p.activation = k["activation"].get<std::string>() == "threshold" ? Activation::threshold : Activation::sigmoid;
    p.threshold = k["threshold"].get<double>();
    return p;
}

PropagationParams propagation_params(const json& r) {
    const json& k = r.at("kernel");
    PropagationParams p;
    p.n_steps = k["n_steps"].get<int>();
    p.activation = k["activation"].get<std::string>() == "threshold" ? Activation::threshold : Activation::sigmoid;
    p.threshold = k["threshold"].get<double>();
    p.alpha = k["alpha"].get<double>();
    p.validate();
    return p;
}

GaborRun gabor_propagation(const RunConfig& rc) {
    GaborRun run;
    run.cfg = gabor_metric(rc.resolved);
    run.grid = gabor_grid(rc.resolved);
    run.p0 = run.grid.find(gabor_start(rc.resolved));
    const auto pp = propagation_params(rc.resolved);
    const double cell = run.grid.cell_volume() * gabor_volume_measure(run.cfg).density(VecD<3>::Zero());
    run.mu.assign(run.grid.size(), cell);
    const auto base = build_base_kernel(run.cfg, run.grid, kernel_build_params(rc.resolved));
    run.field = propagate(base, run.p0, pp, run.mu);
    run.stats = {{"t", norm_t(run.cfg)},
                 {"start_node", run.p0},
                 {"node_measure", cell},
                 {"n_steps", pp.n_steps},
                 {"alpha", pp.alpha},
                 {"base_kernel", kernel_json(base)},
                 {"field_mass", weighted_mass(run.mu, run.field)}};
    return run;
}

GaborRun gabor_heat(const RunConfig& rc) {
    const json& h = rc.resolved["heat"];
    GaborRun run;
    run.cfg = gabor_metric(rc.resolved);
    run.grid = gabor_grid(rc.resolved);
    run.p0 = run.grid.find(gabor_start(rc.resolved));
    const double cell = run.grid.cell_volume() * gabor_volume_measure(run.cfg).density(VecD<3>::Zero());
    run.mu.assign(run.grid.size(), cell);
    const double rho = h["rho"].get<double>();
    double kappa = h["kappa"].get<double>();
    if (!(kappa > 0)) kappa = calibrate_kappa(3, rho, cell);
    const auto g = build_graph(run.grid, run.cfg, run.mu, rho, kappa);
    const double dt = h["dt"].get<double>();
    const int n_iter = h["n_iter"].get<int>();
    if (n_iter < 0) throw ConfigError("heat.n_iter must be non-negative");
    const auto tr = run_heat_traced(g, run.p0, dt, n_iter);
    run.field = tr.state.f;
    run.stats = {{"t", norm_t(run.cfg)}, {"start_node", run.p0}, {"node_measure", cell}, {"heat", heat_json(g, tr, dt)}};
    return run;
}

namespace {

SurfaceRun surface_base(const RunConfig& rc) {
    SurfaceRun run;
    run.cfg = surface_metric(rc.resolved);
    run.map = surface_map(rc.resolved, rc.seed);
    const json& s = rc.resolved["surface"]["start"];
    const Vec2 start(s["x"].get<double>(), s["y"].get<double>());
    if (!run.map.grid.contains(start.x(), start.y())) throw ConfigError("surface.start lies outside the map");
    run.p0 = run.map.nearest_node(start);
    run.mu.assign(run.map.grid.size(), run.map.grid.cell_area());
    return run;
}

json surface_stats(const SurfaceRun& run) {
    const Vec2 p = run.map.node_point(run.p0);
    return {{"t", norm_t(run.cfg)},
            {"start_node", run.p0},
            {"start_point", {p.x(), p.y()}},
            {"theta0", run.map.theta[run.p0]},
            {"pinwheels", run.map.pinwheel_set.size()},
            {"node_measure", run.map.grid.cell_area()}};
}

}  // namespace

SurfaceRun surface_propagation(const RunConfig& rc) {
    auto run = surface_base(rc);
    const auto pp = propagation_params(rc.resolved);
    auto kbp = kernel_build_params(rc.resolved);
    kbp.allow_isolated = rc.resolved["surface"]["allow_isolated_nodes"].get<bool>();
    const auto base = build_base_kernel(run.cfg, run.map, kbp);
    run.field = propagate(base, run.p0, pp, run.mu);
    run.stats = surface_stats(run);
    run.stats["n_steps"] = pp.n_steps;
    run.stats["base_kernel"] = kernel_json(base);
    run.stats["patchiness"] = patchiness_json(patchiness_stats(run.map, run.field, run.map.theta[run.p0]));
    return run;
}

SurfaceRun surface_heat(const RunConfig& rc) {
    auto run = surface_base(rc);
    const json& h = rc.resolved["surface"]["heat"];
    const double rho = h["rho"].get<double>();
    double kappa = h["kappa"].get<double>();
    if (!(kappa > 0)) kappa = calibrate_kappa(2, rho, run.map.grid.cell_area());
    const auto g = build_graph(run.map, run.cfg, run.mu, rho, kappa);
    const double dt = h["dt"].get<double>();
    const int n_iter = h["n_iter"].get<int>();
    if (n_iter < 0) throw ConfigError("surface.heat.n_iter must be non-negative");
    const auto tr = run_heat_traced(g, run.p0, dt, n_iter);
    run.field = tr.state.f;
    run.stats = surface_stats(run);
    run.stats["heat"] = heat_json(g, tr, dt);
    run.stats["patchiness"] = patchiness_json(patchiness_stats(run.map, run.field, run.map.theta[run.p0]));
    return run;
}

double preferred_axis_angle(double theta) { return theta + kPi / 2; }

json FigureStats::to_json() const {
    return {{"moments", moments_json(moments)},
            {"collinear_max_steps", collinear_max_steps},
            {"collinear_nodes", collinear_nodes}};
}

FigureStats gabor_figure_stats(const FeatureGrid& grid, const std::vector<double>& field, const FeaturePoint& p0,
                               double min_fraction) {
    FigureStats fs;
    fs.projection = argmax_orientation(grid, field, p0.theta);
    const auto plane = plane_of(grid);
    const Vec2 c(p0.x, p0.y);
    const double a = preferred_axis_angle(p0.theta);
    fs.moments = second_moments(plane, fs.projection.max_value, c, a);
    const Vec2 u(std::cos(a), std::sin(a));
    const double tol = 0.5 * std::min(plane.x().step, plane.y().step) + 1e-12;
    const double global = *std::max_element(fs.projection.max_value.begin(), fs.projection.max_value.end());
    for (std::size_t i = 0; i < plane.size(); ++i) {
        const auto ij = plane.coords(i);
        const Vec2 q(plane.x().at(ij[0]) - c.x(), plane.y().at(ij[1]) - c.y());
        if (std::abs(q.x() * u.y() - q.y() * u.x()) > tol) continue;
        if (!(fs.projection.max_value[i] >= min_fraction * global) || !(global > 0)) continue;
        ++fs.collinear_nodes;
        const double dev = std::abs(std::remainder(fs.projection.theta_bar[i] - p0.theta, kTwoPi)) / grid.theta().step;
        fs.collinear_max_steps = std::max(fs.collinear_max_steps, dev);
    }
    return fs;
}

void run_experiment(const RunConfig& rc, std::ostream& log) {
    Outputs out(rc.output_dir);
    json derived;
    const auto& e = rc.experiment;
    if (e == "gabor_kernel")
        run_gabor_kernel(rc, out, derived, log);
    else if (e == "gabor_propagate")
        run_gabor_field(rc, out, derived, log, false);
    else if (e == "gabor_heat")
        run_gabor_field(rc, out, derived, log, true);
    else if (e == "surface_propagate")
        run_surface_field(rc, out, derived, log, false);
    else if (e == "surface_heat")
        run_surface_field(rc, out, derived, log, true);
    else if (e == "mcp_sweep")
        run_mcp_sweep(rc, out, derived, log);
    else if (e == "metric_report")
        run_metric_report(rc, out, derived, log);
    else
        throw ConfigError("unknown experiment " + e);
    out.manifest(rc, derived);
}

}  // namespace cortical
