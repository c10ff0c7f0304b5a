#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "cortical/errors.hpp"
#include "cortical/experiments.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("cortical_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct Result {
    int code;
    std::string err;
};

Result run_cli(const fs::path& dir, const json& cfg, const std::string& extra = "") {
    const fs::path c = dir / "config.json";
    std::ofstream(c) << cfg.dump(2);
    const fs::path e = dir / "stderr.txt";
    const std::string cmd = std::string(CORTICAL_CLI_PATH) + " --config " + c.string() + " " + extra + " 2> " + e.string();
    const int st = std::system(cmd.c_str());
    return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, slurp(e)};
}

json small_gabor(const std::string& experiment, const fs::path& out) {
    return {{"experiment", experiment},
            {"output_dir", out.string()},
            {"grid",
             {{"x", {{"lo", -0.5}, {"hi", 0.5}, {"step", 0.1}}},
              {"y", {{"lo", -0.5}, {"hi", 0.5}, {"step", 0.1}}},
              {"theta", {{"lo", -0.6}, {"hi", 0.6}, {"step", 0.15}}}}},
            {"heat", {{"n_iter", 10}}}};
}

json small_surface(const std::string& experiment, const fs::path& out) {
    return {{"experiment", experiment},
            {"output_dir", out.string()},
            {"seed", 11},
            {"surface", {{"grid", {{"lo", -0.6}, {"hi", 0.6}, {"step", 0.05}}}, {"heat", {{"n_iter", 10}}}}}};
}

std::vector<std::string> listing(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

TEST_CASE("config resolution") {
    try {
        cortical::resolve_config(json::object());
        FAIL("empty config accepted");
    } catch (const cortical::ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("missing field experiment") != std::string::npos);
        CHECK(msg.find("missing field output_dir") != std::string::npos);
    }
    CHECK_THROWS_AS(cortical::resolve_config({{"experiment", "gabor_kernel"}, {"output_dir", "x"}, {"sigma", 1}}),
                    cortical::ConfigError);
    CHECK_THROWS_AS(cortical::resolve_config({{"experiment", "nope"}, {"output_dir", "x"}}), cortical::ConfigError);
    CHECK_THROWS_AS(cortical::resolve_config({{"experiment", "gabor_kernel"}, {"output_dir", "x"}, {"seed", -1}}),
                    cortical::ConfigError);
    CHECK_THROWS_AS(
        cortical::resolve_config({{"experiment", "gabor_kernel"}, {"output_dir", "x"}, {"kernel", {{"n_steps", 1.5}}}}),
        cortical::ConfigError);
    const auto rc = cortical::resolve_config(
        {{"experiment", "gabor_heat"}, {"output_dir", "x"}, {"gabor", {{"sigma", 1}}}, {"manifest", {{"any", 1}}}});
    CHECK(rc.resolved["gabor"]["sigma"] == 1);
    CHECK(rc.resolved["gabor"]["lambda"] == 1.0);
    CHECK(rc.resolved["heat"]["n_iter"] == 100);
    CHECK(!rc.resolved.contains("manifest"));
    CHECK(rc.seed == 1);
    // reference grid
    const auto g = cortical::gabor_grid(rc.resolved);
    CHECK(g.x().count == 39);
    CHECK(g.y().count == 53);
    CHECK(g.theta().count == 19);
}

TEST_CASE("cli exit codes") {
    const auto d = scratch("codes");
    auto r = run_cli(d, json::object());
    CHECK(r.code == 2);
    CHECK(r.err.find("missing field experiment") != std::string::npos);
    CHECK(r.err.find("missing field output_dir") != std::string::npos);

    r = run_cli(d, {{"experiment", "gabor_kernel"}, {"bogus", 1}}, "--out " + (d / "o").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("unknown field bogus") != std::string::npos);

    auto off = small_gabor("gabor_kernel", d / "off");
    off["start"] = {{"x", 0.05}};
    CHECK(run_cli(d, off).code == 2);

    auto disc = small_gabor("gabor_heat", d / "disc");
    disc["heat"]["rho"] = 1e-3;
    disc["heat"]["kappa"] = 1.0;
    r = run_cli(d, disc);
    CHECK(r.code == 3);
    CHECK(r.err.find("components") != std::string::npos);

    CHECK(std::system((std::string(CORTICAL_CLI_PATH) + " --config /nonexistent.json 2>/dev/null").c_str()) != 0);
}

TEST_CASE("gabor_propagate outputs and determinism") {
    const auto d = scratch("prop");
    REQUIRE(run_cli(d, small_gabor("gabor_propagate", d / "a")).code == 0);
    REQUIRE(run_cli(d, small_gabor("gabor_propagate", d / "b"), "--threads 1").code == 0);
    const auto names = listing(d / "a");
    for (const char* f : {"manifest.json", "k4_projection.pgm", "theta_bar.csv", "field.csv", "report.json"})
        CHECK(std::find(names.begin(), names.end(), f) != names.end());
    for (const auto& n : names) {
        if (n == "manifest.json") continue;
        CHECK_MESSAGE(slurp(d / "a" / n) == slurp(d / "b" / n), n);
    }
    const auto m = json::parse(slurp(d / "a" / "manifest.json"));
    CHECK(m["kernel"]["n_steps"] == 4);
    CHECK(m["manifest"]["outputs"].size() == names.size());
    CHECK(slurp(d / "a" / "k4_projection.pgm").rfind("P2\n9 9\n255\n", 0) == 0);
}

TEST_CASE("manifest round trip") {
    const auto d = scratch("trip");
    for (const auto& cfg : {small_gabor("gabor_heat", d / "a"), small_surface("surface_propagate", d / "a")}) {
        fs::remove_all(d / "a");
        fs::remove_all(d / "b");
        REQUIRE(run_cli(d, cfg).code == 0);
        const auto manifest = json::parse(slurp(d / "a" / "manifest.json"));
        REQUIRE(run_cli(d, manifest, "--out " + (d / "b").string()).code == 0);
        const auto names = listing(d / "a");
        CHECK(names == listing(d / "b"));
        for (const auto& n : names) {
            if (n == "manifest.json") continue;
            CHECK_MESSAGE(slurp(d / "a" / n) == slurp(d / "b" / n), n);
        }
        auto mb = json::parse(slurp(d / "b" / "manifest.json"));
        mb["output_dir"] = manifest["output_dir"];
        CHECK(mb == manifest);
    }
}

TEST_CASE("seed override") {
    const auto d = scratch("seed");
    REQUIRE(run_cli(d, small_surface("surface_heat", d / "a"), "--seed 5").code == 0);
    REQUIRE(run_cli(d, small_surface("surface_heat", d / "b")).code == 0);
    CHECK(json::parse(slurp(d / "a" / "manifest.json"))["seed"] == 5);
    CHECK(slurp(d / "a" / "map.csv") != slurp(d / "b" / "map.csv"));
}

TEST_CASE("remaining experiments run") {
    const auto d = scratch("all");
    CHECK(run_cli(d, small_gabor("gabor_kernel", d / "k")).code == 0);
    CHECK(fs::exists(d / "k" / "filter.csv"));
    CHECK(run_cli(d, {{"experiment", "metric_report"}, {"output_dir", (d / "m").string()}}).code == 0);
    const auto rep = json::parse(slurp(d / "m" / "report.json"));
    CHECK(rep["det_relative_error"].get<double>() < 1e-10);
    CHECK(rep["hessian_relative_error"].get<double>() < 1e-2);
    json mcp = {{"experiment", "mcp_sweep"},
                {"output_dir", (d / "e").string()},
                {"mcp", {{"geometry", "euclidean"}, {"radii", {0.2, 0.1}}, {"n_centers", 2}}}};
    CHECK(run_cli(d, mcp).code == 0);
    const auto mrep = json::parse(slurp(d / "e" / "report.json"));
    CHECK(mrep["theta_worst"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(run_cli(d, small_surface("surface_heat", d / "h")).code == 0);
    CHECK(fs::exists(d / "h" / "pinwheels.json"));
}

namespace {

void same_keys(const json& schema, const json& def, const std::string& path) {
    REQUIRE_MESSAGE(schema.contains("properties"), path);
    for (auto it = def.begin(); it != def.end(); ++it) {
        const std::string key = path + "/" + it.key();
        REQUIRE_MESSAGE(schema["properties"].contains(it.key()), key);
        const json& s = schema["properties"][it.key()];
        if (it.value().is_object())
            same_keys(s, it.value(), key);
        else if (!it.value().is_null())
            CHECK_MESSAGE(s["default"] == it.value(), key);
    }
    for (auto it = schema["properties"].begin(); it != schema["properties"].end(); ++it)
        if (!(path.empty() && it.key() == "manifest")) {
            const std::string key = path + "/" + it.key();
            CHECK_MESSAGE(def.contains(it.key()), key);
        }
}

}  // namespace

TEST_CASE("schema document matches the defaults") {
    const json schema = json::parse(slurp(CORTICAL_SCHEMA_PATH));
    same_keys(schema, cortical::default_config(), "");
    const auto& exp = schema["properties"]["experiment"]["enum"];
    CHECK(exp.get<std::vector<std::string>>() == cortical::experiment_names());
}
