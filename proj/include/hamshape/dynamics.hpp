#pragma once

#include "hamshape/basis.hpp"
#include "hamshape/energy.hpp"

#include <memory>
#include <optional>

namespace hamshape {

/// How rotation fits are differentiated in the reverse pass.
/// Exact: implicit differentiation of the fit's stationarity condition.
/// Envelope: rotations treated as constants (drops the dR/dx term).
enum class RotationGradient { Exact, Envelope };

struct DynamicsConfig {
    int T = 15;
    int inner_iters = 3;
    /// Relative weight of W against the velocity term inside each step (1 = as written).
    double potential_weight = 1.0;
    /// v_bar = 2 v^(t+1) - v^(t) when true, v_bar = v^(t+1) otherwise.
    bool extrapolation = true;
    double pcg_tolerance = 1e-12;
    int pcg_max_iters = 60;
    /// Up to this K every inner iteration refactors instead of running PCG, which keeps the
    /// forward map smooth to rounding (finite-difference oracles rely on it).
    int direct_solve_max_k = 200;

    double tau() const { return 1.0 / T; }
    void validate() const
    {
        if (T < 1) {
            throw InvalidArgument("T must be >= 1");
        }
        if (inner_iters < 1) {
            throw InvalidArgument("inner_iters must be >= 1");
        }
        if (!(potential_weight >= 0.0)) {
            throw InvalidArgument("potential weight must be >= 0");
        }
    }
};

struct SolveReport {
    /// Per step: objective at the initial guess (after the first rotation fit), then after
    /// every inner iteration.
    std::vector<std::vector<double>> objective;
    std::vector<int> inner_iterations;
    std::vector<double> residual_norms; // relative linear residual of the last inner solve
    std::vector<double> hamiltonian; // per frame: 1/2 |v|^2 + beta/2 W
    std::vector<double> volume; // per frame, empty without faces
    std::vector<int> outside_counts; // per step
    int degenerate_rotations = 0;
    int ridge_fallbacks = 0;
    int dense_fallbacks = 0;
    int pcg_iterations = 0;
    int newton_unconverged = 0;
};

struct Trajectory {
    double tau = 0.0;
    VecX initial_coeffs; // c_hat
    std::vector<Points> frames; // p^(0..T)
    std::vector<Points> velocities; // v^(0..T)
    std::vector<Points> extrapolated; // v_bar^(0..T)
    std::vector<VecX> coeffs; // c^(1..T)
    std::vector<Mat3> last_rotations;
    SolveReport report;

    int steps() const { return static_cast<int>(coeffs.size()); }
};

// ---------------------------------------------------------------------------

namespace detail {

inline Points as_points(const VecX& v)
{
    Points p(v.size() / 3, 3);
    flat(p) = v;
    return p;
}

/// p + tau v, written as an explicit loop so every caller rounds identically.
inline Points advance(const Points& p, const Points& v, double tau)
{
    Points out(p.rows(), 3);
    const double* a = p.data();
    const double* b = v.data();
    double* o = out.data();
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        o[k] = a[k] + tau * b[k];
    }
    return out;
}

/// 2 v1 - v0 (or v1), same rounding everywhere.
inline Points extrapolate_velocity(const Points& v1, const Points& v0, bool extrapolation)
{
    if (!extrapolation) {
        return v1;
    }
    Points out(v1.rows(), 3);
    for (Eigen::Index k = 0; k < v1.size(); ++k) {
        out.data()[k] = 2.0 * v1.data()[k] - v0.data()[k];
    }
    return out;
}

} // namespace detail

/// The K x K normal matrix of one time step,
///   A(R) = Phi^T (2 I + beta tau^2 H(R)) Phi (+ ridge I),
/// factored once per step and reused as a preconditioner for the inner iterations whose
/// rotations (hence H) differ.
class StepSystem {
public:
    struct Factor {
        Eigen::LLT<MatX> llt;
        double ridge = 0.0;
    };

    StepSystem(const MatX& phit, const ArapModel& model, const std::vector<Mat3>& weights,
               double beta, double tau)
        : phit_(phit), model_(model), weights_(weights), scale_(beta * tau * tau)
    {
    }

    StepSystem(const MatX& phit, const ArapModel& model, const std::vector<Mat3>& weights,
               double beta, double tau, std::shared_ptr<const Factor> factor)
        : StepSystem(phit, model, weights, beta, tau)
    {
        factor_ = std::move(factor);
    }

    const std::shared_ptr<const Factor>& factor() const { return factor_; }

    MatX assemble(const std::vector<Mat3>& rot) const
    {
        const int K = static_cast<int>(phit_.rows());
        MatX x = 2.0 * phit_;
        if (scale_ != 0.0) {
            // The graph is symmetric, so block (i, i) of H is sum_j (B_i + B_j) and block (i, j)
            // is -(B_i + B_j). Gathering per vertex keeps the written block in cache.
            const int n = model_.size();
            std::vector<Mat3> b(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                b[i] = scale_ * (rot[i] * weights_[i] * rot[i].transpose());
            }
            Eigen::Matrix<double, Eigen::Dynamic, 3> acc(K, 3);
            for (int i = 0; i < n; ++i) {
                Mat3 csum = Mat3::Zero();
                acc.setZero();
                for (int e = model_.begin(i); e < model_.end(i); ++e) {
                    const int j = model_.target(e);
                    const Mat3 c = b[i] + b[j];
                    csum += c;
                    acc.noalias() -= phit_.middleCols<3>(3 * j) * c;
                }
                acc.noalias() += phit_.middleCols<3>(3 * i) * csum;
                x.middleCols<3>(3 * i) += acc;
            }
        }
        MatX a(K, K);
        a.triangularView<Eigen::Lower>() = x * phit_.transpose();
        a = a.selfadjointView<Eigen::Lower>();
        return a;
    }

    /// Factors A(rot); adds the ridge 1e-9 trace / K when the plain factorisation fails or
    /// is numerically rank deficient. Returns true when the ridge was needed.
    bool factorize(const std::vector<Mat3>& rot)
    {
        auto f = std::make_shared<Factor>();
        MatX a = assemble(rot);
        f->llt.compute(a);
        bool ridged = false;
        if (f->llt.info() != Eigen::Success || !well_conditioned(f->llt)) {
            f->ridge = 1e-9 * a.trace() / static_cast<double>(a.rows());
            if (!(f->ridge > 0.0)) {
                f->ridge = 1e-12;
            }
            a.diagonal().array() += f->ridge;
            f->llt.compute(a);
            if (f->llt.info() != Eigen::Success) {
                throw Error("normal system is not positive definite even with ridge");
            }
            ridged = true;
        }
        factor_ = std::move(f);
        return ridged;
    }

    /// Refactors at new rotations keeping the ridge of the current factor, so the operator
    /// stays A(rot) + ridge I within one step.
    void refactorize(const std::vector<Mat3>& rot)
    {
        if (!factor_) {
            factorize(rot);
            return;
        }
        auto f = std::make_shared<Factor>();
        f->ridge = factor_->ridge;
        const MatX a = assemble(rot);
        const double base = std::max(1e-9 * a.trace() / static_cast<double>(a.rows()), 1e-12);
        // the ridge only grows when the new rotations make the plain system fail
        for (int attempt = 0; attempt < 6; ++attempt) {
            MatX ar = a;
            ar.diagonal().array() += f->ridge;
            f->llt.compute(ar);
            if (f->llt.info() == Eigen::Success) {
                factor_ = std::move(f);
                return;
            }
            f->ridge = f->ridge > 0.0 ? 10.0 * f->ridge : base;
        }
        throw Error("normal system is not positive definite at refactorization");
    }

    VecX apply(const std::vector<Mat3>& rot, const VecX& c) const
    {
        const VecX u = phit_.transpose() * c;
        VecX s = 2.0 * u;
        if (scale_ != 0.0) {
            const Points hu = hessian_apply(model_, rot, weights_, detail::as_points(u));
            s += scale_ * flat(hu);
        }
        VecX out = phit_ * s;
        if (factor_) {
            out += factor_->ridge * c;
        }
        return out;
    }

    struct SolveInfo {
        int iterations = 0;
        double relative_residual = 0.0;
        bool dense_fallback = false;
    };

    /// Solves A(rot) x = b by conjugate gradients preconditioned with the stored factor.
    /// `factored_here` states that rot is the rotation set the factor was built from, in
    /// which case the factor solve is already the answer.
    VecX solve(const std::vector<Mat3>& rot, const VecX& b, double tol, int max_iters,
               SolveInfo* info = nullptr, bool factored_here = false) const
    {
        if (!factor_) {
            throw Error("StepSystem::solve before factorize");
        }
        SolveInfo local;
        const double bnorm = b.norm();
        VecX x = factor_->llt.solve(b);
        if (bnorm == 0.0 || factored_here) {
            if (info != nullptr) {
                *info = local;
            }
            return x;
        }
        VecX r = b - apply(rot, x);
        double rel = r.norm() / bnorm;
        double best_rel = rel;
        VecX best = x;
        VecX z = factor_->llt.solve(r);
        VecX p = z;
        double rz = r.dot(z);
        int stall = 0;
        while (rel > tol && local.iterations < max_iters && rz > 0.0) {
            const VecX ap = apply(rot, p);
            const double alpha = rz / p.dot(ap);
            x += alpha * p;
            r -= alpha * ap;
            ++local.iterations;
            // Recompute the true residual now and then to avoid drift below rounding.
            if (local.iterations % 10 == 0) {
                r = b - apply(rot, x);
            }
            rel = r.norm() / bnorm;
            if (rel < 0.5 * best_rel) {
                stall = 0;
            } else if (++stall >= 4) {
                break;
            }
            if (rel < best_rel) {
                best_rel = rel;
                best = x;
            }
            z = factor_->llt.solve(r);
            const double rz_new = r.dot(z);
            p = z + (rz_new / rz) * p;
            rz = rz_new;
        }
        x = best;
        local.relative_residual = best_rel;
        if (best_rel > 1e3 * tol) {
            MatX a = assemble(rot);
            a.diagonal().array() += factor_->ridge;
            x = a.llt().solve(b);
            local.dense_fallback = true;
            local.relative_residual = (b - apply(rot, x)).norm() / bnorm;
        }
        if (info != nullptr) {
            *info = local;
        }
        return x;
    }

private:
    static bool well_conditioned(const Eigen::LLT<MatX>& llt)
    {
        const VecX d = MatX(llt.matrixLLT()).diagonal();
        const double mx = d.cwiseAbs().maxCoeff();
        return d.allFinite() && d.minCoeff() > 1e-5 * mx;
    }

    const MatX& phit_;
    const ArapModel& model_;
    const std::vector<Mat3>& weights_;
    double scale_;
    std::shared_ptr<const Factor> factor_;
};

/// Everything the reverse pass needs from one forward step.
struct StepRecord {
    struct Inner {
        Points y; // candidate positions at which the rotations were fitted
        std::vector<Mat3> rotations;
        std::vector<int> degenerate;
        VecX c;
        /// Factor built at these rotations, null when the solve ran PCG on an earlier one.
        std::shared_ptr<const StepSystem::Factor> factor;
    };
    Points x;
    Points vbar;
    VecX c_init;
    std::vector<Inner> inner;
};
using Tape = std::vector<StepRecord>;

/// Gradient of a scalar loss through a forward run.
struct DynamicsAdjoint {
    VecX coeffs; // dL / d c_hat
    std::vector<Mat3> weights; // dL / dM_i (residual weights)
};

/// Implicit-Euler integrator of the Hamiltonian flow restricted to the divergence-free basis.
///
/// Each step solves
///   c^(t+1) = argmin_c |Phi(p^t) c - v_bar^t|^2 + beta W(p^t + tau Phi(p^t) c; R, Sigma)
/// by alternating rotation fits and linear solves, then sets
///   v^(t+1) = v(p^t; c^(t+1)),  p^(t+1) = p^t + tau v^(t+1),  v_bar^(t+1) = 2 v^(t+1) - v^t.
class Simulator {
public:
    Simulator(const DivFreeBasis& basis, const ArapModel& model, std::vector<Mat3> weights,
              DynamicsConfig config = {})
        : basis_(basis), model_(model), weights_(std::move(weights)), cfg_(config)
    {
        cfg_.validate();
        if (static_cast<int>(weights_.size()) != model_.size()) {
            throw InvalidArgument("Simulator: weight count differs from vertex count");
        }
    }

    const DynamicsConfig& config() const { return cfg_; }
    const std::vector<Mat3>& weights() const { return weights_; }
    const DivFreeBasis& basis() const { return basis_; }
    const ArapModel& model() const { return model_; }

    struct StepResult {
        VecX c;
        Points v;
        std::vector<Mat3> rotations;
        int outside = 0;
    };

    /// One solve of the coefficient problem at positions x with target velocities vbar.
    StepResult step(const Points& x, const Points& vbar, const VecX& c_init,
                    const std::vector<Mat3>* prev_rot, SolveReport* report = nullptr,
                    StepRecord* record = nullptr) const
    {
        const double tau = cfg_.tau();
        const double beta = cfg_.potential_weight;
        const MatX phit = basis_.eval_basis_transposed(x);
        StepSystem sys(phit, model_, weights_, beta, tau);
        const bool direct = basis_.size() <= cfg_.direct_solve_max_k;
        const VecX b0 = 2.0 * (phit * flat(vbar));
        VecX c = c_init;
        std::vector<Mat3> rot = prev_rot != nullptr ? *prev_rot : identity_rotations(model_.size());
        std::vector<double> objective;
        double last_residual = 0.0;
        if (record != nullptr) {
            record->x = x;
            record->vbar = vbar;
            record->c_init = c_init;
            record->inner.clear();
        }
        VecX u = phit.transpose() * c;
        Points y = detail::advance(x, detail::as_points(u), tau);
        for (int m = 0; m < cfg_.inner_iters; ++m) {
            RotationFitReport fit;
            rot = fit_rotations(model_, y, weights_, &rot, &fit);
            if (m == 0) {
                objective.push_back(step_objective(u, y, vbar, rot));
            }
            VecX b = b0;
            if (beta != 0.0) {
                b -= beta * tau * (phit * flat(grad_W_positions(model_, x, rot, weights_)));
            }
            if (m == 0 && sys.factorize(rot) && report != nullptr) {
                ++report->ridge_fallbacks;
            }
            if (m > 0 && direct) {
                sys.refactorize(rot);
            }
            StepSystem::SolveInfo info;
            const Points y_fit = std::move(y);
            c = sys.solve(rot, b, cfg_.pcg_tolerance, cfg_.pcg_max_iters, &info, m == 0 || direct);
            u = phit.transpose() * c;
            y = detail::advance(x, detail::as_points(u), tau);
            last_residual = info.relative_residual;
            objective.push_back(step_objective(u, y, vbar, rot));
            if (report != nullptr) {
                report->degenerate_rotations += static_cast<int>(fit.degenerate_vertices.size());
                report->newton_unconverged += fit.unconverged;
                report->pcg_iterations += info.iterations;
                report->dense_fallbacks += info.dense_fallback ? 1 : 0;
            }
            if (record != nullptr) {
                record->inner.push_back(
                    {y_fit, rot, fit.degenerate_vertices, c, m == 0 || direct ? sys.factor() : nullptr});
            }
        }
        StepResult out;
        out.v = basis_.eval_field(c, x, &out.outside);
        out.c = std::move(c);
        out.rotations = std::move(rot);
        if (report != nullptr) {
            report->objective.push_back(std::move(objective));
            report->inner_iterations.push_back(cfg_.inner_iters);
            report->residual_norms.push_back(last_residual);
            report->outside_counts.push_back(out.outside);
        }
        return out;
    }

    /// The solution operator: T steps from p0 with v^0 = v(p0; c_hat), v_bar^0 = v^0.
    Trajectory run(const VecX& chat, const Points& p0, Tape* tape = nullptr,
                   const std::vector<Triangle>* faces = nullptr) const
    {
        if (p0.rows() != model_.size()) {
            throw InvalidArgument("Simulator::run: p0 has " + std::to_string(p0.rows())
                                  + " points, model has " + std::to_string(model_.size()));
        }
        Trajectory traj;
        traj.tau = cfg_.tau();
        traj.initial_coeffs = chat;
        traj.frames.push_back(p0);
        traj.velocities.push_back(basis_.eval_field(chat, p0));
        traj.extrapolated.push_back(traj.velocities.back());
        traj.last_rotations = identity_rotations(model_.size());
        record_frame(traj, faces);
        if (tape != nullptr) {
            tape->clear();
            tape->reserve(static_cast<std::size_t>(cfg_.T));
        }
        advance_steps(traj, cfg_.T, tape, faces);
        return traj;
    }

    /// Continues an existing trajectory for `steps` more steps with the same tau.
    void advance_steps(Trajectory& traj, int steps, Tape* tape = nullptr,
                       const std::vector<Triangle>* faces = nullptr) const
    {
        for (int s = 0; s < steps; ++s) {
            const int t = traj.steps();
            const VecX& c_init = t == 0 ? traj.initial_coeffs : traj.coeffs.back();
            StepRecord* rec = nullptr;
            if (tape != nullptr) {
                tape->emplace_back();
                rec = &tape->back();
            }
            StepResult r = step(traj.frames.back(), traj.extrapolated.back(), c_init,
                                &traj.last_rotations, &traj.report, rec);
            Points next = detail::advance(traj.frames.back(), r.v, traj.tau);
            if (!next.allFinite() || !r.c.allFinite()) {
                throw IntegrationDiverged(t, "non-finite positions after step " + std::to_string(t));
            }
            traj.extrapolated.push_back(
                detail::extrapolate_velocity(r.v, traj.velocities.back(), cfg_.extrapolation));
            traj.velocities.push_back(std::move(r.v));
            traj.frames.push_back(std::move(next));
            traj.coeffs.push_back(std::move(r.c));
            traj.last_rotations = std::move(r.rotations);
            record_frame(traj, faces);
        }
    }

    /// Reverse pass. `frame_bar[t]` is dL/dp^(t) for t = 0..T (entry 0 is ignored since p0 is
    /// data). Returns dL/dc_hat and dL/dM through every step, inner iteration and linear solve.
    DynamicsAdjoint backward(const Trajectory& traj, const Tape& tape,
                             const std::vector<Points>& frame_bar,
                             RotationGradient mode = RotationGradient::Exact) const
    {
        const int T = traj.steps();
        if (static_cast<int>(tape.size()) != T || static_cast<int>(frame_bar.size()) != T + 1) {
            throw InvalidArgument("backward: tape / frame adjoint length mismatch");
        }
        const int n = model_.size();
        const double tau = traj.tau;
        const double alpha = cfg_.extrapolation ? 2.0 : 1.0;
        DynamicsAdjoint adj;
        adj.weights.assign(static_cast<std::size_t>(n), Mat3::Zero());

        Points pbar = frame_bar[T];
        Points vbar_bar = Points::Zero(n, 3); // adjoint of v_bar^(t+1)
        Points v_carry = Points::Zero(n, 3); // adjoint of v^(t+1) from v_bar^(t+2)
        VecX cbar_next = VecX::Zero(basis_.size()); // adjoint of c^(t+1) as next warm start
        MatX phit;
        for (int t = T - 1; t >= 0; --t) {
            const StepRecord& rec = tape[t];
            Points v_total = v_carry + tau * pbar + alpha * vbar_bar;
            v_carry = -(alpha - 1.0) * vbar_bar;
            if (!v_total.allFinite() || !pbar.allFinite()) {
                throw Error("non-finite adjoint at step " + std::to_string(t));
            }
            phit = basis_.eval_basis_transposed(rec.x);
            Points xbar = pbar + frame_bar[t];
            VecX cbar = cbar_next + phit * flat(v_total);
            Points vb_in = Points::Zero(n, 3);
            VecX cinit_bar;
            step_backward(rec, phit, cbar, v_total, mode, xbar, vb_in, cinit_bar, adj.weights);
            pbar = std::move(xbar);
            vbar_bar = std::move(vb_in);
            cbar_next = std::move(cinit_bar);
        }
        // v^0 = Phi(p0) c_hat and v_bar^0 = v^0.
        if (T == 0) {
            phit = basis_.eval_basis_transposed(traj.frames[0]);
        }
        adj.coeffs = cbar_next + phit * flat(Points(v_carry + vbar_bar));
        return adj;
    }

    /// 1/2 sum |v_i|^2 + beta/2 W(p) with rotations refitted at p (unit masses). The step objective
/// weighs |v - v_bar|^2 and W 1:1, so its stationarity condition is v = v_bar - tau beta/2 grad W
/// and the energy of the continuous limit carries W at half weight.
    double hamiltonian(const Points& p, const Points& v, const std::vector<Mat3>* warm = nullptr) const
    {
        const auto rot = fit_rotations(model_, p, weights_, warm);
        return 0.5 * flat(v).squaredNorm() + 0.5 * cfg_.potential_weight * eval_W(model_, p, rot, weights_);
    }

private:
    /// |u - v_bar|^2 + beta W(y; rot) with u = Phi c and y = x + tau u.
    double step_objective(const VecX& u, const Points& y, const Points& vbar,
                          const std::vector<Mat3>& rot) const
    {
        const double data = (u - flat(vbar)).squaredNorm();
        if (cfg_.potential_weight == 0.0) {
            return data;
        }
        return data + cfg_.potential_weight * eval_W(model_, y, rot, weights_);
    }

    void record_frame(Trajectory& traj, const std::vector<Triangle>* faces) const
    {
        traj.report.hamiltonian.push_back(
            hamiltonian(traj.frames.back(), traj.velocities.back(), &traj.last_rotations));
        if (faces != nullptr && !faces->empty()) {
            traj.report.volume.push_back(signed_volume(traj.frames.back(), *faces));
        }
    }

    /// Adjoint of one step given dL/dc_M. Adds into xbar (positions), vbar_bar (target
    /// velocities) and weight_bar; returns dL/dc_init.
    void step_backward(const StepRecord& rec, const MatX& phit, VecX cbar, const Points& v_total,
                       RotationGradient mode, Points& xbar, Points& vbar_bar, VecX& cinit_bar,
                       std::vector<Mat3>& weight_bar) const
    {
        const double tau = cfg_.tau();
        const double beta = cfg_.potential_weight;
        const int M = static_cast<int>(rec.inner.size());
        std::vector<VecX> ws;
        std::vector<Points> us;
        ws.reserve(static_cast<std::size_t>(3 * M + 1));
        us.reserve(static_cast<std::size_t>(3 * M + 1));
        ws.push_back(rec.inner.back().c);
        us.push_back(v_total);
        for (int m = M - 1; m >= 0; --m) {
            const auto& in = rec.inner[m];
            const VecX& c_prev = m == 0 ? rec.c_init : rec.inner[m - 1].c;
            int fm = m;
            while (!rec.inner[fm].factor) {
                --fm;
            }
            const StepSystem sys(phit, model_, weights_, beta, tau, rec.inner[fm].factor);
            const VecX lambda =
                sys.solve(in.rotations, cbar, cfg_.pcg_tolerance, cfg_.pcg_max_iters, nullptr, fm == m);
            const Points a = detail::as_points(phit.transpose() * lambda);
            const Points u = detail::as_points(phit.transpose() * in.c);
            const Points z = u - rec.vbar;
            vbar_bar += 2.0 * a;
            Points lam_u = -2.0 * z;
            Points c_u = -2.0 * a;
            VecX cbar_prev = VecX::Zero(cbar.size());
            if (beta != 0.0) {
                const Points yc = detail::advance(rec.x, u, tau);
                const Points gw = grad_W_positions(model_, yc, in.rotations, weights_);
                const Points ha = hessian_apply(model_, in.rotations, weights_, a);
                lam_u -= beta * tau * gw;
                c_u -= beta * tau * tau * ha;
                xbar -= beta * tau * ha;
                std::vector<Mat3> rot_bar(static_cast<std::size_t>(model_.size()), Mat3::Zero());
                grad_dot_adjoint(model_, yc, a, in.rotations, weights_, -beta * tau, rot_bar, weight_bar);
                if (mode == RotationGradient::Exact) {
                    Points ybar = Points::Zero(rec.x.rows(), 3);
                    fit_rotations_vjp(model_, in.y, weights_, in.rotations, rot_bar, ybar, &weight_bar,
                                      in.degenerate);
                    cbar_prev = tau * (phit * flat(ybar));
                    xbar += ybar;
                    ws.push_back(c_prev);
                    us.push_back(tau * ybar);
                }
            }
            ws.push_back(lambda);
            us.push_back(std::move(lam_u));
            ws.push_back(in.c);
            us.push_back(std::move(c_u));
            cbar = std::move(cbar_prev);
        }
        cinit_bar = std::move(cbar);
        std::vector<const VecX*> wp;
        std::vector<const Points*> up;
        for (std::size_t k = 0; k < ws.size(); ++k) {
            wp.push_back(&ws[k]);
            up.push_back(&us[k]);
        }
        xbar += basis_.jacobian_transpose_apply(wp, up, rec.x);
    }

    const DivFreeBasis& basis_;
    const ArapModel& model_;
    std::vector<Mat3> weights_;
    DynamicsConfig cfg_;
};

/// Runs the solution operator for (c_hat, Sigma_hat) from the rest shape p0.
inline Trajectory solution_operator(const VecX& chat, const std::vector<Mat3>& sigmas, const Shape& p0,
                                    const DivFreeBasis& basis, const DynamicsConfig& cfg = {},
                                    NormConvention conv = NormConvention::Weight)
{
    const ArapModel model(p0, conv);
    const Simulator sim(basis, model, metric_weights(model, sigmas), cfg);
    return sim.run(chat, p0.points(), nullptr, p0.has_faces() ? &p0.faces() : nullptr);
}

/// Advects arbitrary points through a stored coefficient sequence with the trajectory's
/// update rule p^(t+1) = p^t + tau v(p^t; c^(t+1)).
inline std::vector<Points> apply_flow_full_resolution(const Trajectory& traj, const DivFreeBasis& basis,
                                                      const Points& full, int* outside = nullptr)
{
    std::vector<Points> frames;
    frames.reserve(traj.coeffs.size() + 1);
    frames.push_back(full);
    int total_out = 0;
    for (const VecX& c : traj.coeffs) {
        int out = 0;
        const Points v = basis.eval_field(c, frames.back(), &out);
        total_out += out;
        frames.push_back(detail::advance(frames.back(), v, traj.tau));
    }
    if (outside != nullptr) {
        *outside = total_out;
    }
    return frames;
}

/// Continues the free dynamics (no data term) from t = 1 up to t_end.
inline Trajectory extrapolate(const Trajectory& traj, const Simulator& sim, double t_end,
                              const std::vector<Triangle>* faces = nullptr)
{
    if (!(t_end >= 1.0)) {
        throw InvalidArgument("extrapolate: t_end must be >= 1");
    }
    Trajectory out = traj;
    const double t_now = traj.tau * traj.steps();
    const int extra = static_cast<int>(std::llround((t_end - t_now) / traj.tau));
    if (extra > 0) {
        sim.advance_steps(out, extra, nullptr, faces);
    }
    return out;
}

} // namespace hamshape
