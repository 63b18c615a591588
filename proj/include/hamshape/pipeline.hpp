#pragma once

#include "hamshape/basis.hpp"
#include "hamshape/dynamics.hpp"
#include "hamshape/io.hpp"
#include "hamshape/metrics.hpp"
#include "hamshape/optim.hpp"

#include <chrono>
#include <iostream>

namespace hamshape {

struct RunConfig {
    OptimConfig optim;
    int resolution = 2000; // working subsample size
    bool full_resolution = false; // optimize on every source vertex (small inputs)
    double padding = 0.25;
    int knn = 6;
    fs::path out = "run";
    MeshFormat format = MeshFormat::Off;

    void validate() const
    {
        try {
            optim.validate();
        } catch (const InvalidArgument& e) {
            throw UsageError(e.what());
        }
        if (resolution < 100) {
            throw UsageError("--resolution must be >= 100");
        }
        if (!(padding > 0.0)) {
            throw UsageError("padding must be > 0");
        }
        if (knn < 1) {
            throw UsageError("k must be >= 1");
        }
        if (optim.T < 1 || optim.inner_iters < 1) {
            throw UsageError("--T and --inner-iters must be >= 1");
        }
    }
};

inline Json to_json(const RunConfig& c)
{
    return Json{{"optim", to_json(c.optim)},
                {"resolution", c.resolution},
                {"full_resolution", c.full_resolution},
                {"padding", c.padding},
                {"knn", c.knn},
                {"format", extension(c.format) + 1}};
}

inline void apply_json(const Json& j, RunConfig& c)
{
    if (!j.is_object()) {
        throw InvalidArgument("config must be a JSON object");
    }
    for (const auto& [key, v] : j.items()) {
        if (key == "optim") {
            apply_json(v, c.optim);
        } else if (key == "resolution") {
            c.resolution = v.get<int>();
        } else if (key == "full_resolution") {
            c.full_resolution = v.get<bool>();
        } else if (key == "padding") {
            c.padding = v.get<double>();
        } else if (key == "knn") {
            c.knn = v.get<int>();
        } else if (key == "format") {
            c.format = parse_format(v.get<std::string>());
        } else {
            throw InvalidArgument("unknown config key '" + key + "'");
        }
    }
}

/// Everything an interpolate run needs, in unit-box coordinates.
struct PreparedRun {
    Shape source; // full resolution, world coordinates
    Shape target;
    CorrespondenceMap correspondences;
    DomainBox box;
    std::vector<int> samples; // source indices of the working set
    AlignmentProblem problem; // working set in unit coordinates
    Points source_unit; // every source vertex in unit coordinates
};

inline void require_file(const fs::path& p, const char* what)
{
    if (!fs::is_regular_file(p)) {
        throw UsageError(std::string(what) + " not found: " + p.string());
    }
}

inline PreparedRun prepare_run(const fs::path& source, const fs::path& target, const fs::path& corr,
                               const RunConfig& cfg)
{
    require_file(source, "source");
    require_file(target, "target");
    require_file(corr, "correspondence file");
    PreparedRun r;
    r.source = load_shape(source);
    r.target = load_shape(target);
    r.correspondences = load_correspondences(corr, r.source.size(), r.target.size());
    r.box = fit_domain_box(r.source, r.target, cfg.padding);
    r.source_unit = r.box.to_unit(r.source.points());
    const Points target_unit = r.box.to_unit(r.target.points());

    const int n = r.source.size();
    if (cfg.full_resolution || n <= cfg.resolution) {
        r.samples.resize(static_cast<std::size_t>(n));
        std::iota(r.samples.begin(), r.samples.end(), 0);
        r.problem.source = r.source.with_points(r.source_unit);
    } else {
        r.samples = farthest_point_sample(r.source_unit, cfg.resolution, cfg.optim.seed).indices;
        Points sub(static_cast<Eigen::Index>(r.samples.size()), 3);
        for (std::size_t i = 0; i < r.samples.size(); ++i) {
            sub.row(static_cast<Eigen::Index>(i)) = r.source_unit.row(r.samples[i]);
        }
        r.problem.source = build_knn_graph(sub, cfg.knn);
    }
    r.problem.target = target_unit;
    r.problem.correspondence.resize(r.samples.size());
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
        r.problem.correspondence[i] = r.correspondences.map[r.samples[i]];
    }
    return r;
}

/// Writes into a sibling temp directory and renames it over `out` on success.
template <class Fn>
void write_atomically(const fs::path& out, Fn&& fill)
{
    const fs::path abs = fs::absolute(out);
    const fs::path tmp = abs.parent_path() / (abs.filename().string() + ".tmp");
    const fs::path old = abs.parent_path() / (abs.filename().string() + ".old");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    try {
        fill(tmp);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw;
    }
    fs::remove_all(old);
    if (fs::exists(abs)) {
        fs::rename(abs, old);
    }
    fs::rename(tmp, abs);
    fs::remove_all(old);
}

inline void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream os(p, std::ios::binary);
    os << text;
    if (!os) {
        throw Error("cannot write " + p.string());
    }
}

inline Json vec_json(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline VecX json_vec(const Json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct InterpolateOutcome {
    InterpolationResult result;
    DomainBox box; // world <-> unit map of the run
    std::vector<Points> frames; // full resolution, world coordinates
    MetricReport metrics;
    double optimize_seconds = 0.0;
    double upsample_seconds = 0.0;
};

inline InterpolateOutcome run_interpolate(const fs::path& source, const fs::path& target, const fs::path& corr,
                                          const RunConfig& cfg, std::ostream* log = nullptr)
{
    using clock = std::chrono::steady_clock;
    cfg.validate();
    const PreparedRun run = prepare_run(source, target, corr, cfg);
    if (log != nullptr) {
        *log << "source " << run.source.size() << " vertices, target " << run.target.size() << ", matched "
             << run.correspondences.matched << " (" << 100.0 * run.correspondences.matched_fraction()
             << "%), duplicate targets " << run.correspondences.duplicate_targets << ", working set "
             << run.samples.size() << '\n';
    }
    for (const auto& w : run.problem.validate()) {
        if (log != nullptr) {
            *log << "warning: " << w << '\n';
        }
    }
    const DivFreeBasis basis = DivFreeBasis::build(DomainBox::unit(), cfg.optim.K);

    InterpolateOutcome o;
    o.box = run.box;
    OptimConfig oc = cfg.optim;
    if (log != nullptr && !oc.log) {
        oc.log = [log](const std::string& s) { *log << s << '\n'; };
    }
    auto t0 = clock::now();
    o.result = interpolate(run.problem, basis, oc);
    o.optimize_seconds = std::chrono::duration<double>(clock::now() - t0).count();

    t0 = clock::now();
    int outside = 0;
    const auto unit_frames = apply_flow_full_resolution(o.result.trajectory, basis, run.source_unit, &outside);
    o.upsample_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    for (const auto& f : unit_frames) {
        o.frames.push_back(run.box.from_unit(f));
    }
    o.frames.front() = run.source.points(); // skip the unit-box round trip at t = 0
    o.metrics = evaluate_sequence(o.frames, run.source.faces(), run.target.points());

    Json meta;
    meta["command"] = "interpolate";
    meta["source"] = fs::absolute(source).string();
    meta["target"] = fs::absolute(target).string();
    meta["correspondences"] = fs::absolute(corr).string();
    meta["config"] = to_json(cfg);
    meta["seed"] = cfg.optim.seed;
    meta["box"] = Json{{"center", {run.box.center.x(), run.box.center.y(), run.box.center.z()}},
                       {"half_extent", run.box.half_extent}};
    meta["samples"] = run.samples;
    meta["lambda_sigma"] = o.result.lambda_sigma;
    meta["sigma_abs"] = o.result.sigma_abs;
    meta["energy"] = Json{{"total", o.result.energy.total},
                          {"data", o.result.energy.data},
                          {"potential", o.result.energy.potential},
                          {"prior", o.result.energy.prior}};
    std::vector<double> hist;
    for (const auto& h : o.result.history) {
        hist.push_back(h.energy.total);
    }
    meta["energy_history"] = hist;
    meta["stop_reason"] = o.result.stop_reason;
    meta["diverged"] = o.result.diverged;
    meta["warnings"] = o.result.warnings;
    meta["full_resolution_outside"] = outside;
    meta["chat"] = vec_json(o.result.variables.chat);
    std::vector<std::vector<double>> factors;
    for (const auto& l : o.result.variables.factors) {
        factors.emplace_back(l.data(), l.data() + 6);
    }
    meta["factors"] = factors;
    meta["full_volume_change"] = Json::array();
    for (const auto& f : o.metrics.frames) {
        meta["full_volume_change"].push_back(f.volume_change);
    }

    write_atomically(cfg.out, [&](const fs::path& dir) {
        Trajectory full = o.result.trajectory;
        full.frames = o.frames;
        export_trajectory(full, run.source.faces(), dir, cfg.format, meta);
        write_text(dir / "metrics.txt", format_report(o.metrics));
        save_correspondences(dir / "correspondences.txt", run.correspondences.map);
        // wall-clock numbers live apart from the reproducible records
        write_json(dir / "timing.json", Json{{"optimize_seconds", o.optimize_seconds},
                                             {"upsample_seconds", o.upsample_seconds}});
    });
    return o;
}

/// Rebuilt state of a finished interpolate run.
struct LoadedRun {
    Json meta;
    RunConfig cfg;
    PreparedRun run;
    Variables vars;
};

inline LoadedRun load_run(const fs::path& dir)
{
    const fs::path mp = dir / "metadata.json";
    if (!fs::is_regular_file(mp)) {
        throw UsageError("no metadata.json in " + dir.string());
    }
    LoadedRun l;
    l.meta = read_json(mp);
    try {
        apply_json(l.meta.at("config"), l.cfg);
        l.run = prepare_run(l.meta.at("source").get<std::string>(), l.meta.at("target").get<std::string>(),
                            l.meta.at("correspondences").get<std::string>(), l.cfg);
        if (l.meta.at("samples").get<std::vector<int>>() != l.run.samples) {
            throw Error("working set differs from the recorded run");
        }
        l.vars.chat = json_vec(l.meta.at("chat"));
        for (const auto& f : l.meta.at("factors")) {
            const auto v = f.get<std::vector<double>>();
            if (v.size() != 6) {
                throw Error("factor record must have 6 entries");
            }
            l.vars.factors.push_back(Eigen::Map<const LowerFactor>(v.data()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(mp.string(), 0, e.what());
    }
    return l;
}

/// Continues the recorded run to t_end and writes the new frames next to the old ones.
inline int run_extrapolate(const fs::path& dir, double t_end, std::ostream* log = nullptr)
{
    const LoadedRun l = load_run(dir);
    const OptimConfig& oc = l.cfg.optim;
    const DivFreeBasis basis = DivFreeBasis::build(DomainBox::unit(), oc.K);
    const Shape& p0 = l.run.problem.source;
    const ArapModel model(p0, oc.convention);
    const Simulator sim(basis, model, metric_weights(model, l.vars.sigmas()), oc.dynamics());
    const Trajectory traj = sim.run(l.vars.chat, p0.points(), nullptr, p0.has_faces() ? &p0.faces() : nullptr);
    const Trajectory ext = extrapolate(traj, sim, t_end, p0.has_faces() ? &p0.faces() : nullptr);
    const int extra = ext.steps() - traj.steps();
    if (extra <= 0) {
        if (log != nullptr) {
            *log << "t_end " << t_end << ": no new frames\n";
        }
        return 0;
    }
    const auto unit_frames = apply_flow_full_resolution(ext, basis, l.run.source_unit);
    std::vector<Points> fresh;
    for (std::size_t t = static_cast<std::size_t>(traj.steps()) + 1; t < unit_frames.size(); ++t) {
        fresh.push_back(l.run.box.from_unit(unit_frames[t]));
    }
    // stage then move, so a failure leaves the run directory as it was
    const fs::path stage = fs::absolute(dir) / ".extrapolate.tmp";
    fs::remove_all(stage);
    try {
        const auto files = export_frames(fresh, l.run.source.faces(), stage, l.cfg.format, traj.steps() + 1);
        Json info{{"t_end", t_end},
                  {"first_frame", traj.steps() + 1},
                  {"frames", extra},
                  {"hamiltonian", ext.report.hamiltonian}};
        write_json(stage / "extrapolation.json", info);
        for (const auto& f : files) {
            fs::rename(f, fs::absolute(dir) / f.filename());
        }
        fs::rename(stage / "extrapolation.json", fs::absolute(dir) / "extrapolation.json");
    } catch (...) {
        std::error_code ec;
        fs::remove_all(stage, ec);
        throw;
    }
    fs::remove_all(stage);
    if (log != nullptr) {
        *log << "wrote " << extra << " frames up to t = " << ext.steps() * ext.tau << '\n';
    }
    return extra;
}

/// Loads every frame file of a directory; reports all unreadable files at once.
inline std::vector<Points> load_frames(const fs::path& dir, std::vector<Triangle>* faces = nullptr)
{
    const auto files = list_frames(dir);
    if (files.empty()) {
        throw UsageError("no frame_XXXX files in " + dir.string());
    }
    std::vector<Points> frames;
    std::string bad;
    for (const auto& f : files) {
        try {
            MeshData m = read_mesh(f);
            if (frames.empty() && faces != nullptr) {
                *faces = m.faces;
            }
            if (!frames.empty() && m.points.rows() != frames.front().rows()) {
                throw Error("vertex count differs from the first frame");
            }
            frames.push_back(std::move(m.points));
        } catch (const Error& e) {
            bad += "\n  " + f.string() + ": " + e.what();
        }
    }
    if (!bad.empty()) {
        throw Error("unreadable frames:" + bad);
    }
    return frames;
}

inline MetricReport run_metrics(const fs::path& frames_dir, const fs::path& target, const fs::path& out)
{
    require_file(target, "target");
    std::vector<Triangle> faces;
    const auto frames = load_frames(frames_dir, &faces);
    const Shape tgt = load_shape(target);
    MetricReport rep = evaluate_sequence(frames, faces, tgt.points());
    write_text(out, format_report(rep));
    return rep;
}

/// Mean Euclidean distance between the target points picked by `map` and by `truth`, over
/// source vertices matched in both.
inline double match_error(const std::vector<int>& map, const std::vector<int>& truth, const Points& target)
{
    if (map.size() != truth.size()) {
        throw InvalidArgument("match_error: map sizes differ");
    }
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (map[i] >= 0 && truth[i] >= 0) {
            sum += (target.row(map[i]) - target.row(truth[i])).norm();
            ++count;
        }
    }
    return count > 0 ? sum / count : 0.0;
}

struct RefineOutcome {
    RefinementResult refined;
    std::vector<int> input;
    double input_error = -1.0; // vs ground truth, when given
    double refined_error = -1.0;
};

/// Nearest-target refinement from the last frame of a run; writes refined_correspondences.txt.
inline RefineOutcome run_refine(const fs::path& dir, const fs::path& truth = {}, std::ostream* log = nullptr)
{
    const LoadedRun l = load_run(dir);
    const auto files = list_frames(dir);
    const int T = l.cfg.optim.T;
    if (static_cast<int>(files.size()) < T + 1) {
        throw Error("run directory has fewer than T+1 frames");
    }
    const MeshData last = read_mesh(files[static_cast<std::size_t>(T)]);
    RefineOutcome o;
    o.input = l.run.correspondences.map;
    o.refined = refine_correspondences(last.points, l.run.target.points(), o.input);
    save_correspondences(dir / "refined_correspondences.txt", o.refined.correspondence);
    if (!truth.empty()) {
        const auto gt = load_correspondences(truth, l.run.source.size(), l.run.target.size());
        o.input_error = match_error(o.input, gt.map, l.run.target.points());
        o.refined_error = match_error(o.refined.correspondence, gt.map, l.run.target.points());
    }
    if (log != nullptr) {
        *log << "changed " << o.refined.changed << " of " << o.input.size() << " entries, mean residual "
             << o.refined.mean_distance << '\n';
        if (o.input_error >= 0.0) {
            *log << "match error vs ground truth: input " << o.input_error << ", refined " << o.refined_error
                 << '\n';
        }
    }
    return o;
}

/// Farthest point subsample of a shape written as a point cloud plus an index list.
inline std::vector<int> run_fps(const fs::path& input, int m, std::uint64_t seed, const fs::path& out)
{
    require_file(input, "input");
    const Shape s = load_shape(input);
    const auto idx = farthest_point_sample(s, std::min(m, s.size()), seed).indices;
    Points sub(static_cast<Eigen::Index>(idx.size()), 3);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        sub.row(static_cast<Eigen::Index>(i)) = s.points().row(idx[i]);
    }
    save_mesh(out, sub, {});
    fs::path ip = out;
    ip.replace_extension(".indices.txt");
    std::ofstream os(ip);
    for (int i : idx) {
        os << i << '\n';
    }
    if (!os) {
        throw Error("write failed: " + ip.string());
    }
    return idx;
}

} // namespace hamshape
