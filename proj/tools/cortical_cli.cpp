// Runs one experiment from a JSON config.
//
//   cortical_cli [run] --config run.json [--out dir] [--seed n] [--threads n]
//
// Exit codes: 0 success, 2 invalid input, 3 numeric failure.

#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "cortical/errors.hpp"
#include "cortical/experiments.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

constexpr int kValidation = 2;
constexpr int kNumeric = 3;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Filter-bank metric spaces and propagation experiments"};
    std::string command, config_path, out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    app.add_option("command", command, "optional 'run'")->check(CLI::IsMember({"run"}));
    app.add_option("--config", config_path, "JSON run config")->required();
    app.add_option("--out", out_dir, "output directory, overrides output_dir");
    app.add_option("--seed", seed, "RNG seed, overrides seed");
    app.add_option("--threads", threads, "worker threads, 0 keeps the default")->check(CLI::NonNegativeNumber);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kValidation;
    }
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    nlohmann::json in;
    {
        std::ifstream is(config_path);
        if (!is) {
            std::cerr << "error: cannot open config " << config_path << "\n";
            return kValidation;
        }
        try {
            in = nlohmann::json::parse(is);
        } catch (const nlohmann::json::parse_error& e) {
            std::cerr << "error: " << config_path << " is not valid JSON: " << e.what() << "\n";
            return kValidation;
        }
    }
    if (in.is_object()) {
        if (!out_dir.empty()) in["output_dir"] = out_dir;
        if (seed) in["seed"] = *seed;
    }

    try {
        const auto rc = cortical::resolve_config(in);
        cortical::run_experiment(rc, std::cerr);
        std::cerr << "wrote " << (rc.output_dir / "manifest.json").string() << "\n";
        return 0;
    } catch (const cortical::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const cortical::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
