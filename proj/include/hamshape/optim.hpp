#pragma once

#include "hamshape/dynamics.hpp"

#include <chrono>
#include <functional>
#include <limits>

namespace hamshape {

enum class OptimizerKind { Descent, Adam };
enum class GradMode { Reverse, FiniteDifference };

struct OptimConfig {
    double gamma = 1e-2; // fixed step, or first trial step length with BB steps
    int iterations = 100; // N_it
    double sigma = 0.02; // alignment noise scale as a fraction of the source diameter
    int T = 15;
    int K = 1020;
    int inner_iters = 3;
    /// Anisotropy prior weight; negative selects the data-driven default.
    double lambda_sigma = -1.0;
    OptimizerKind optimizer = OptimizerKind::Descent;
    bool backtracking = true;
    /// Barzilai-Borwein initial trial step for the backtracking search (plain fixed gamma
    /// otherwise).
    bool bb_step = true;
    bool optimize_sigma = true;
    GradMode grad_mode = GradMode::Reverse;
    RotationGradient rotation_gradient = RotationGradient::Exact;
    NormConvention convention = NormConvention::Weight;
    double potential_weight = 1.0;
    SigmaBounds bounds;
    double grad_tolerance = 1e-9; // stop when |g| <= tol * (1 + E)
    double rel_decrease_tolerance = 1e-7; // stop after 3 consecutive tiny relative decreases
    std::uint64_t seed = 0;
    /// Optional progress sink, one line per outer iteration.
    std::function<void(const std::string&)> log;

    void validate() const
    {
        if (!(gamma > 0.0)) {
            throw InvalidArgument("gamma must be > 0");
        }
        if (!(sigma > 0.0)) {
            throw InvalidArgument("sigma must be > 0");
        }
        if (iterations < 0) {
            throw InvalidArgument("iterations must be >= 0");
        }
        if (K < 3) {
            throw InvalidArgument("K must be >= 3");
        }
    }

    DynamicsConfig dynamics() const
    {
        DynamicsConfig d;
        d.T = T;
        d.inner_iters = inner_iters;
        d.potential_weight = potential_weight;
        return d;
    }
};

/// Source / target pair with a possibly partial source -> target assignment (-1 = unmatched).
struct AlignmentProblem {
    Shape source;
    Points target;
    std::vector<int> correspondence;

    std::vector<std::string> validate() const
    {
        std::vector<std::string> warnings;
        if (static_cast<int>(correspondence.size()) != source.size()) {
            throw InvalidArgument("correspondence count " + std::to_string(correspondence.size())
                                  + " differs from source size " + std::to_string(source.size()));
        }
        int matched = 0;
        for (std::size_t i = 0; i < correspondence.size(); ++i) {
            const int j = correspondence[i];
            if (j < -1 || j >= target.rows()) {
                throw InvalidArgument("correspondence of vertex " + std::to_string(i) + " out of range");
            }
            matched += j >= 0 ? 1 : 0;
        }
        if (matched == 0) {
            throw InvalidArgument("no matched vertices: the data term is empty");
        }
        if (matched < 0.3 * source.size()) {
            warnings.push_back("only " + std::to_string(matched) + " of " + std::to_string(source.size())
                               + " source vertices are matched");
        }
        return warnings;
    }

    int matched_count() const
    {
        return static_cast<int>(std::count_if(correspondence.begin(), correspondence.end(),
                                              [](int j) { return j >= 0; }));
    }
};

/// Optimisation variables: c_hat and the lower factors of Sigma_i = L L^T + eps I.
struct Variables {
    VecX chat;
    std::vector<LowerFactor> factors;

    static Variables initial(int K, int n)
    {
        Variables v;
        v.chat = VecX::Zero(K);
        v.factors.assign(static_cast<std::size_t>(n), factor_from_sigma(Mat3::Identity()));
        return v;
    }

    std::vector<Mat3> sigmas() const
    {
        std::vector<Mat3> s;
        s.reserve(factors.size());
        for (const auto& l : factors) {
            s.push_back(sigma_from_factor(l));
        }
        return s;
    }

    int size() const { return static_cast<int>(chat.size() + 6 * factors.size()); }

    VecX pack() const
    {
        VecX x(size());
        x.head(chat.size()) = chat;
        for (std::size_t i = 0; i < factors.size(); ++i) {
            x.segment(chat.size() + 6 * static_cast<Eigen::Index>(i), 6) = factors[i];
        }
        return x;
    }

    static Variables unpack(const VecX& x, int K)
    {
        Variables v;
        v.chat = x.head(K);
        const int n = static_cast<int>((x.size() - K) / 6);
        v.factors.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            v.factors[i] = x.segment(K + 6 * i, 6);
        }
        return v;
    }

    /// Projects every Sigma_i onto the eigenvalue box and refactors.
    void clamp(const SigmaBounds& b)
    {
        for (auto& l : factors) {
            l = factor_from_sigma(clamp_sigma(sigma_from_factor(l), b));
        }
    }
};

struct EnergyBreakdown {
    double total = 0.0;
    double data = 0.0;
    double potential = 0.0;
    double prior = 0.0;
};

struct IterationRecord {
    int iteration = 0;
    EnergyBreakdown energy;
    double grad_norm = 0.0;
    double step = 0.0;
    int trials = 0;
    double seconds = 0.0;
};

struct InterpolationResult {
    Variables variables;
    Trajectory trajectory;
    EnergyBreakdown energy;
    std::vector<IterationRecord> history;
    double lambda_sigma = 0.0;
    double sigma_abs = 0.0;
    bool diverged = false;
    bool converged = false;
    std::string stop_reason;
    std::vector<std::string> warnings;
    double seconds = 0.0;
};

/// Default anisotropy prior weight: 0.1 x (mean per-vertex W of the target configuration)
/// with Sigma = I. The configuration places matched source vertices at their targets; only
/// edges between matched vertices count, and the top quarter of per-vertex energies is
/// discarded so a minority of wrong matches does not dominate the scale.
inline double default_lambda_sigma(const AlignmentProblem& pr)
{
    const Shape& s = pr.source;
    std::vector<double> local;
    for (int i = 0; i < s.size(); ++i) {
        const int ti = pr.correspondence[i];
        if (ti < 0) {
            continue;
        }
        Mat3 cov = Mat3::Zero();
        std::vector<std::pair<Vec3, Vec3>> edges;
        for (int j : s.neighbors()[i]) {
            const int tj = pr.correspondence[j];
            if (tj < 0) {
                continue;
            }
            const Vec3 r = s.points().row(j) - s.points().row(i);
            const Vec3 d = pr.target.row(tj) - pr.target.row(ti);
            edges.emplace_back(r, d);
            cov += d * r.transpose();
        }
        if (edges.size() < 2) {
            continue;
        }
        Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 u = svd.matrixU();
        if ((u * svd.matrixV().transpose()).determinant() < 0.0) {
            u.col(2) *= -1.0;
        }
        const Mat3 rot = u * svd.matrixV().transpose();
        double f = 0.0;
        for (const auto& [r, d] : edges) {
            f += 0.5 * (r - rot.transpose() * d).squaredNorm();
        }
        local.push_back(f);
    }
    if (local.empty()) {
        return 0.0;
    }
    std::sort(local.begin(), local.end());
    const std::size_t keep = std::max<std::size_t>(1, (local.size() * 3) / 4);
    double sum = 0.0;
    for (std::size_t k = 0; k < keep; ++k) {
        sum += local[k];
    }
    return 0.1 * sum / static_cast<double>(keep);
}

/// E(c_hat, Sigma_hat) = 1/(2 s^2) sum_matched |p^T_i - q_Pi(i)|^2 + sum_{t=0..T} W(p^t)
///                     + lambda sum_i |Sigma_i - I|_F^2
/// with the rotations of each W(p^t) refitted at that frame.
class AlignmentObjective {
public:
    AlignmentObjective(const AlignmentProblem& problem, const DivFreeBasis& basis, const OptimConfig& cfg)
        : problem_(problem), basis_(basis), cfg_(cfg), model_(problem.source, cfg.convention)
    {
        cfg_.validate();
        if (basis.size() != cfg.K) {
            throw InvalidArgument("basis size differs from configured K");
        }
        warnings_ = problem.validate();
        sigma_abs_ = cfg.sigma * diameter(problem.source);
        lambda_ = cfg.lambda_sigma >= 0.0 ? cfg.lambda_sigma : default_lambda_sigma(problem);
    }

    double lambda_sigma() const { return lambda_; }
    double sigma_abs() const { return sigma_abs_; }
    const ArapModel& model() const { return model_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const OptimConfig& config() const { return cfg_; }

    struct Evaluation {
        EnergyBreakdown energy;
        Trajectory trajectory;
        Tape tape;
        std::vector<std::vector<Mat3>> frame_rotations;
    };

    /// Forward run plus energy. Keeps the tape when `with_tape`.
    Evaluation evaluate(const Variables& v, bool with_tape) const
    {
        Evaluation ev;
        const auto sigmas = v.sigmas();
        const auto weights = metric_weights(model_, sigmas);
        const Simulator sim(basis_, model_, weights, cfg_.dynamics());
        const auto* faces = problem_.source.has_faces() ? &problem_.source.faces() : nullptr;
        ev.trajectory = sim.run(v.chat, problem_.source.points(), with_tape ? &ev.tape : nullptr, faces);
        ev.energy = energy(ev.trajectory, weights, sigmas, &ev.frame_rotations);
        return ev;
    }

    /// Energy terms of a finished trajectory.
    EnergyBreakdown energy(const Trajectory& traj, const std::vector<Mat3>& weights,
                           const std::vector<Mat3>& sigmas,
                           std::vector<std::vector<Mat3>>* rotations_out = nullptr) const
    {
        EnergyBreakdown e;
        const Points& pT = traj.frames.back();
        for (int i = 0; i < pT.rows(); ++i) {
            const int j = problem_.correspondence[i];
            if (j >= 0) {
                e.data += (pT.row(i) - problem_.target.row(j)).squaredNorm();
            }
        }
        e.data /= 2.0 * sigma_abs_ * sigma_abs_;
        std::vector<Mat3> warm = identity_rotations(model_.size());
        for (const Points& p : traj.frames) {
            warm = fit_rotations(model_, p, weights, &warm);
            e.potential += eval_W(model_, p, warm, weights);
            if (rotations_out != nullptr) {
                rotations_out->push_back(warm);
            }
        }
        for (const Mat3& s : sigmas) {
            e.prior += lambda_ * (s - Mat3::Identity()).squaredNorm();
        }
        e.total = e.data + e.potential + e.prior;
        return e;
    }

    /// Reverse-mode gradient with respect to the packed variables, reusing an evaluation.
    VecX gradient(const Variables& v, const Evaluation& ev) const
    {
        const auto sigmas = v.sigmas();
        const auto weights = metric_weights(model_, sigmas);
        const Simulator sim(basis_, model_, weights, cfg_.dynamics());
        const Trajectory& traj = ev.trajectory;
        const int T = traj.steps();
        std::vector<Points> frame_bar(static_cast<std::size_t>(T + 1));
        std::vector<Mat3> weight_bar(static_cast<std::size_t>(model_.size()), Mat3::Zero());
        for (int t = 0; t <= T; ++t) {
            const auto& rot = ev.frame_rotations[t];
            frame_bar[t] = grad_W_positions(model_, traj.frames[t], rot, weights);
            const auto gw = grad_W_weights(model_, traj.frames[t], rot);
            for (std::size_t i = 0; i < gw.size(); ++i) {
                weight_bar[i] += gw[i];
            }
        }
        const double inv = 1.0 / (sigma_abs_ * sigma_abs_);
        for (int i = 0; i < traj.frames[T].rows(); ++i) {
            const int j = problem_.correspondence[i];
            if (j >= 0) {
                frame_bar[T].row(i) += inv * (traj.frames[T].row(i) - problem_.target.row(j));
            }
        }
        const DynamicsAdjoint adj = sim.backward(traj, ev.tape, frame_bar, cfg_.rotation_gradient);
        for (std::size_t i = 0; i < weight_bar.size(); ++i) {
            weight_bar[i] += adj.weights[i];
        }
        const auto sigma_bar = weight_grad_to_sigma(model_, sigmas, weight_bar);
        Variables g;
        g.chat = adj.coeffs;
        g.factors.resize(v.factors.size());
        for (std::size_t i = 0; i < v.factors.size(); ++i) {
            const Mat3 gs = sigma_bar[i] + 2.0 * lambda_ * (sigmas[i] - Mat3::Identity());
            g.factors[i] = cfg_.optimize_sigma ? factor_gradient(v.factors[i], gs) : LowerFactor::Zero();
        }
        return g.pack();
    }

    double value(const Variables& v) const { return evaluate(v, false).energy.total; }

    /// Central differences of E on the listed packed components (all when empty).
    VecX finite_difference_gradient(const Variables& v, const std::vector<int>& components = {},
                                    double rel_step = 0.0) const
    {
        const VecX x = v.pack();
        const double h0 = rel_step > 0.0 ? rel_step : std::cbrt(std::numeric_limits<double>::epsilon());
        VecX g = VecX::Zero(x.size());
        std::vector<int> comps = components;
        if (comps.empty()) {
            comps.resize(static_cast<std::size_t>(x.size()));
            std::iota(comps.begin(), comps.end(), 0);
        }
        for (int k : comps) {
            if (!cfg_.optimize_sigma && k >= cfg_.K) {
                continue;
            }
            const double h = h0 * std::max(1.0, std::abs(x[k]));
            VecX xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            g[k] = (value(Variables::unpack(xp, cfg_.K)) - value(Variables::unpack(xm, cfg_.K))) / (2 * h);
        }
        return g;
    }

private:
    const AlignmentProblem& problem_;
    const DivFreeBasis& basis_;
    OptimConfig cfg_;
    ArapModel model_;
    double sigma_abs_ = 0.0;
    double lambda_ = 0.0;
    std::vector<std::string> warnings_;
};

/// Stand-alone energy of a finished trajectory.
inline EnergyBreakdown energy_E(const Trajectory& traj, const AlignmentProblem& problem,
                                const std::vector<Mat3>& sigmas, const DivFreeBasis& basis,
                                const OptimConfig& cfg)
{
    const AlignmentObjective obj(problem, basis, cfg);
    return obj.energy(traj, metric_weights(obj.model(), sigmas), sigmas);
}

/// Outer optimisation of (c_hat, Sigma_hat) starting from c_hat = 0, Sigma_i = I.
inline InterpolationResult interpolate(const AlignmentProblem& problem, const DivFreeBasis& basis,
                                       const OptimConfig& cfg)
{
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();
    const AlignmentObjective obj(problem, basis, cfg);
    InterpolationResult res;
    res.warnings = obj.warnings();
    res.lambda_sigma = obj.lambda_sigma();
    res.sigma_abs = obj.sigma_abs();

    Variables cur = Variables::initial(cfg.K, problem.source.size());
    auto ev = std::make_unique<AlignmentObjective::Evaluation>(obj.evaluate(cur, true));
    Variables best = cur;
    EnergyBreakdown best_e = ev->energy;
    Trajectory best_traj = ev->trajectory;

    auto grad_of = [&](const Variables& v, const AlignmentObjective::Evaluation& e) {
        return cfg.grad_mode == GradMode::Reverse ? obj.gradient(v, e) : obj.finite_difference_gradient(v);
    };
    VecX g = grad_of(cur, *ev);
    VecX x = cur.pack();
    VecX prev_x, prev_g;
    // With BB steps gamma is the length of the first trial step in variable space; the plain
    // variant uses x <- x - gamma g literally.
    double step = cfg.bb_step ? cfg.gamma / std::max(g.norm(), 1e-300) : cfg.gamma;
    int small_decrease = 0;
    VecX adam_m = VecX::Zero(x.size()), adam_v = VecX::Zero(x.size());
    res.history.push_back({0, ev->energy, g.norm(), 0.0, 0, 0.0});
    if (cfg.log) {
        cfg.log("iter 0 E " + std::to_string(ev->energy.total));
    }
    res.stop_reason = "iteration limit";
    for (int it = 1; it <= cfg.iterations; ++it) {
        const auto t_it = clock::now();
        const double e0 = ev->energy.total;
        if (g.norm() <= cfg.grad_tolerance * (1.0 + std::abs(e0))) {
            res.converged = true;
            res.stop_reason = "gradient tolerance";
            break;
        }
        VecX dir = -g;
        if (cfg.optimizer == OptimizerKind::Adam) {
            const double b1 = 0.9, b2 = 0.999;
            adam_m = b1 * adam_m + (1 - b1) * g;
            adam_v = b2 * adam_v + (1 - b2) * g.cwiseAbs2();
            const VecX mh = adam_m / (1 - std::pow(b1, it));
            const VecX vh = adam_v / (1 - std::pow(b2, it));
            dir = -(mh.array() / (vh.array().sqrt() + 1e-12)).matrix();
            step = cfg.gamma;
        } else if (cfg.bb_step && prev_x.size() == x.size()) {
            const VecX s = x - prev_x;
            const VecX y = g - prev_g;
            const double sy = s.dot(y);
            if (sy > 0.0) {
                step = s.squaredNorm() / sy;
            } else {
                step *= 2.0;
            }
        } else if (!cfg.bb_step) {
            step = cfg.gamma;
        }
        int trials = 0;
        std::unique_ptr<AlignmentObjective::Evaluation> next;
        Variables cand;
        double alpha = step;
        const int max_trials = cfg.backtracking ? 40 : 1;
        for (; trials < max_trials; ++trials) {
            cand = Variables::unpack(x + alpha * dir, cfg.K);
            if (cfg.optimize_sigma) {
                cand.clamp(cfg.bounds);
            } else {
                cand.factors = cur.factors;
            }
            std::unique_ptr<AlignmentObjective::Evaluation> trial;
            double e1 = std::numeric_limits<double>::infinity();
            try {
                trial = std::make_unique<AlignmentObjective::Evaluation>(obj.evaluate(cand, true));
                e1 = trial->energy.total;
            } catch (const IntegrationDiverged&) {
            } catch (const InvalidArgument&) {
            }
            if (!std::isfinite(e1)) {
                alpha *= 0.25;
                continue;
            }
            const double decrease = g.dot(x - cand.pack());
            if (!cfg.backtracking || e1 <= e0 - 1e-4 * decrease) {
                next = std::move(trial);
                break;
            }
            alpha *= 0.25;
        }
        if (!next) {
            res.converged = true;
            res.stop_reason = "line search found no decrease";
            break;
        }
        ++trials;
        prev_x = x;
        prev_g = g;
        cur = cand;
        x = cur.pack();
        ev = std::move(next);
        step = alpha;
        const double e1 = ev->energy.total;
        if (e1 < best_e.total) {
            best = cur;
            best_e = ev->energy;
            best_traj = ev->trajectory;
        }
        if (e1 > 10.0 * best_e.total && best_e.total > 0.0) {
            res.diverged = true;
            res.stop_reason = "energy grew 10x over best";
            break;
        }
        g = grad_of(cur, *ev);
        const double secs = std::chrono::duration<double>(clock::now() - t_it).count();
        res.history.push_back({it, ev->energy, g.norm(), alpha, trials, secs});
        if (cfg.log) {
            cfg.log("iter " + std::to_string(it) + " E " + std::to_string(e1) + " data "
                    + std::to_string(ev->energy.data) + " W " + std::to_string(ev->energy.potential)
                    + " prior " + std::to_string(ev->energy.prior) + " |g| " + std::to_string(g.norm())
                    + " step " + std::to_string(alpha) + " trials " + std::to_string(trials) + " "
                    + std::to_string(secs) + "s");
        }
        const double rel = (e0 - e1) / std::max(std::abs(e0), 1e-300);
        small_decrease = rel < cfg.rel_decrease_tolerance ? small_decrease + 1 : 0;
        if (small_decrease >= 3) {
            res.converged = true;
            res.stop_reason = "relative decrease tolerance";
            break;
        }
    }
    res.variables = best;
    res.energy = best_e;
    res.trajectory = std::move(best_traj);
    res.seconds = std::chrono::duration<double>(clock::now() - t_start).count();
    return res;
}

struct RefinementResult {
    std::vector<int> correspondence;
    double mean_distance = 0.0; // mean |p^T_i - q_match|
    double max_distance = 0.0;
    int changed = 0; // entries that differ from the input map
};

/// Nearest target vertex of every final-frame position.
inline RefinementResult refine_correspondences(const Points& final_positions, const Points& target,
                                               const std::vector<int>& input = {})
{
    if (target.rows() == 0) {
        throw InvalidArgument("refine_correspondences: empty target");
    }
    RefinementResult r;
    const KdTree tree(target);
    r.correspondence.resize(static_cast<std::size_t>(final_positions.rows()));
    for (int i = 0; i < final_positions.rows(); ++i) {
        const auto hit = tree.nearest(final_positions.row(i).transpose());
        r.correspondence[i] = hit.index;
        const double d = std::sqrt(hit.dist2);
        r.mean_distance += d;
        r.max_distance = std::max(r.max_distance, d);
        if (!input.empty() && input[i] != hit.index) {
            ++r.changed;
        }
    }
    r.mean_distance /= std::max<Eigen::Index>(1, final_positions.rows());
    return r;
}

inline RefinementResult refine_correspondences(const Trajectory& traj, const AlignmentProblem& problem)
{
    return refine_correspondences(traj.frames.back(), problem.target, problem.correspondence);
}

} // namespace hamshape
