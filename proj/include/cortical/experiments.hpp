#ifndef CORTICAL_EXPERIMENTS_HPP
#define CORTICAL_EXPERIMENTS_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cortical/diffusion.hpp"
#include "cortical/measure_mcp.hpp"
#include "cortical/metric_space.hpp"
#include "cortical/surface_geometry.hpp"
#include "json.hpp"

namespace cortical {

struct RunConfig {
    std::string experiment;
    std::filesystem::path output_dir;
    std::uint64_t seed = 1;
    nlohmann::json resolved;  // every field, defaults filled in
};

const std::vector<std::string>& experiment_names();
// Defaults for every field; experiment and output_dir are null (required).
nlohmann::json default_config();
// Fills defaults and checks names and types. All problems are collected into one ConfigError.
// A top-level "manifest" key, as written into manifest.json, is ignored.
RunConfig resolve_config(const nlohmann::json& in);

MetricConfig gabor_metric(const nlohmann::json& resolved);
FeatureGrid gabor_grid(const nlohmann::json& resolved);
FeaturePoint gabor_start(const nlohmann::json& resolved);
MetricConfig surface_metric(const nlohmann::json& resolved);
OrientationMap surface_map(const nlohmann::json& resolved, std::uint64_t seed);
KernelBuildParams kernel_build_params(const nlohmann::json& resolved);
PropagationParams propagation_params(const nlohmann::json& resolved);

struct GaborRun {
    FeatureGrid grid;
    MetricConfig cfg;
    std::size_t p0 = 0;
    std::vector<double> mu;
    std::vector<double> field;
    nlohmann::json stats;
};

// Iterated normalized kernel K_n from the start node.
GaborRun gabor_propagation(const RunConfig& rc);
// Explicit Euler heat flow from a Dirac at the start node; stats record the mass drift.
GaborRun gabor_heat(const RunConfig& rc);

struct SurfaceRun {
    OrientationMap map;
    MetricConfig cfg;
    std::size_t p0 = 0;
    std::vector<double> mu;
    std::vector<double> field;
    nlohmann::json stats;
};

SurfaceRun surface_propagation(const RunConfig& rc);
SurfaceRun surface_heat(const RunConfig& rc);

struct FigureStats {
    Projection projection;
    AxisMoments moments;            // along / across the preferred axis through p0
    double collinear_max_steps = 0; // worst |theta_bar - theta0| in theta steps on that axis
    std::size_t collinear_nodes = 0;

    nlohmann::json to_json() const;
};

// Preferred axis of the filter at angle theta: direction (-sin theta, cos theta).
double preferred_axis_angle(double theta);

// On-axis nodes count towards collinearity when their projected maximum is at least
// min_fraction of the global maximum.
FigureStats gabor_figure_stats(const FeatureGrid& grid, const std::vector<double>& field, const FeaturePoint& p0,
                               double min_fraction = 0.1);

// Runs the experiment and writes its outputs and manifest.json into rc.output_dir.
void run_experiment(const RunConfig& rc, std::ostream& log);

}  // namespace cortical

#endif
