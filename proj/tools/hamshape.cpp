// hamshape command-line driver: interpolate, extrapolate, metrics, refine, fps.

#include "hamshape/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace hamshape;

namespace {

void add_optim_flags(CLI::App& app, RunConfig& cfg, std::string& grad_mode, std::string& config_file)
{
    app.add_option("--config", config_file, "JSON config file (flags given explicitly override it)");
    app.add_option("--K", cfg.optim.K, "number of basis fields")->check(CLI::PositiveNumber);
    app.add_option("--T", cfg.optim.T, "time steps")->check(CLI::PositiveNumber);
    app.add_option("--iters", cfg.optim.iterations, "optimizer iterations")->check(CLI::NonNegativeNumber);
    app.add_option("--gamma", cfg.optim.gamma, "step size")->check(CLI::PositiveNumber);
    app.add_option("--sigma", cfg.optim.sigma, "data noise scale, fraction of diameter")
        ->check(CLI::PositiveNumber);
    app.add_option("--lambda-sigma", cfg.optim.lambda_sigma, "anisotropy prior weight (negative: automatic)");
    app.add_option("--inner-iters", cfg.optim.inner_iters, "local/global iterations per step")
        ->check(CLI::PositiveNumber);
    app.add_option("--resolution", cfg.resolution, "working resolution")->check(CLI::Range(100, 1 << 30));
    app.add_flag("--full-resolution", cfg.full_resolution, "optimize on every source vertex");
    app.add_option("--seed", cfg.optim.seed, "random seed");
    app.add_option("--grad-mode", grad_mode, "gradient engine")
        ->check(CLI::IsMember({"reverse", "fd"}));
}

/// Config file first, then any explicitly given flag on top of it.
void merge_config(CLI::App& app, RunConfig& cfg, const std::string& grad_mode, const std::string& config_file)
{
    if (config_file.empty()) {
        if (!grad_mode.empty()) {
            cfg.optim.grad_mode = grad_mode == "fd" ? GradMode::FiniteDifference : GradMode::Reverse;
        }
        return;
    }
    if (!fs::is_regular_file(config_file)) {
        throw UsageError("config file not found: " + config_file);
    }
    RunConfig from_file;
    try {
        apply_json(read_json(config_file), from_file);
    } catch (const InvalidArgument& e) {
        throw UsageError(config_file + ": " + e.what());
    }
    auto given = [&](const char* name) { return app.count(name) > 0; };
    RunConfig merged = from_file;
    merged.out = cfg.out;
    if (given("--K")) merged.optim.K = cfg.optim.K;
    if (given("--T")) merged.optim.T = cfg.optim.T;
    if (given("--iters")) merged.optim.iterations = cfg.optim.iterations;
    if (given("--gamma")) merged.optim.gamma = cfg.optim.gamma;
    if (given("--sigma")) merged.optim.sigma = cfg.optim.sigma;
    if (given("--lambda-sigma")) merged.optim.lambda_sigma = cfg.optim.lambda_sigma;
    if (given("--inner-iters")) merged.optim.inner_iters = cfg.optim.inner_iters;
    if (given("--resolution")) merged.resolution = cfg.resolution;
    if (given("--full-resolution")) merged.full_resolution = cfg.full_resolution;
    if (given("--seed")) merged.optim.seed = cfg.optim.seed;
    if (given("--format")) merged.format = cfg.format;
    if (!grad_mode.empty()) {
        merged.optim.grad_mode = grad_mode == "fd" ? GradMode::FiniteDifference : GradMode::Reverse;
    }
    cfg = merged;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Volume-preserving shape interpolation with divergence-free flows"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string grad_mode, config_file, format = "off";
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "no progress output");

    std::string source, target, corr;
    auto* interp = app.add_subcommand("interpolate", "optimize a flow from source to target");
    interp->add_option("source", source, "source mesh")->required();
    interp->add_option("target", target, "target mesh or point cloud")->required();
    interp->add_option("correspondences", corr, "correspondence file")->required();
    interp->add_option("--out", cfg.out, "output directory")->required();
    interp->add_option("--format", format, "frame format")->check(CLI::IsMember({"off", "obj", "ply"}));
    add_optim_flags(*interp, cfg, grad_mode, config_file);

    std::string run_dir;
    double t_end = 2.0;
    auto* extra = app.add_subcommand("extrapolate", "continue a finished run past t = 1");
    extra->add_option("run", run_dir, "run directory")->required();
    extra->add_option("--t-end", t_end, "final time")->check(CLI::Range(1.0, 1e6));

    std::string frames_dir, report;
    auto* metrics = app.add_subcommand("metrics", "evaluate a frame sequence against a target");
    metrics->add_option("frames", frames_dir, "directory with frame_XXXX files")->required();
    metrics->add_option("target", target, "target mesh or point cloud")->required();
    metrics->add_option("--out", report, "report path (default <frames>/metrics.txt)");

    std::string truth;
    auto* refine = app.add_subcommand("refine", "refine correspondences from the final frame");
    refine->add_option("run", run_dir, "run directory")->required();
    refine->add_option("--truth", truth, "ground-truth correspondences for an error comparison");

    std::string fps_in, fps_out;
    int fps_m = 2000;
    std::uint64_t fps_seed = 0;
    auto* fps = app.add_subcommand("fps", "farthest point subsample");
    fps->add_option("input", fps_in, "input mesh")->required();
    fps->add_option("--resolution", fps_m, "sample count")->check(CLI::PositiveNumber);
    fps->add_option("--seed", fps_seed, "first sample index seed");
    fps->add_option("--out", fps_out, "output point cloud (.off/.obj/.ply)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    std::ostream* log = quiet ? nullptr : &std::cerr;
    try {
        if (*interp) {
            cfg.format = parse_format(format);
            merge_config(*interp, cfg, grad_mode, config_file);
            const auto o = run_interpolate(source, target, corr, cfg, log);
            std::cout << "final chamfer_pct " << o.metrics.last().chamfer_pct << " max volume_change "
                      << o.metrics.max_volume_change() << " stop " << o.result.stop_reason << '\n';
            if (o.result.diverged) {
                std::cerr << "warning: optimizer diverged, kept the best iterate\n";
            }
            return 0;
        }
        if (*extra) {
            run_extrapolate(run_dir, t_end, log);
            return 0;
        }
        if (*metrics) {
            const fs::path out = report.empty() ? fs::path(frames_dir) / "metrics.txt" : fs::path(report);
            const auto rep = run_metrics(frames_dir, target, out);
            std::cout << "frames " << rep.frames.size() << " final chamfer_pct " << rep.last().chamfer_pct << '\n';
            return 0;
        }
        if (*refine) {
            run_refine(run_dir, truth, log);
            return 0;
        }
        if (*fps) {
            run_fps(fps_in, fps_m, fps_seed, fps_out);
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
