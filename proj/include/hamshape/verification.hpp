#pragma once

#include "hamshape/optim.hpp"

#include <functional>
#include <random>
#include <sstream>

namespace hamshape {

struct SlopeFit {
    double slope = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

/// Least-squares slope of log(err) against log(tau) with a 95% interval (Student t).
inline SlopeFit fit_loglog_slope(const std::vector<double>& tau, const std::vector<double>& err)
{
    const std::size_t m = tau.size();
    if (m < 2 || err.size() != m) {
        throw InvalidArgument("slope fit needs at least two (tau, error) pairs");
    }
    double sx = 0, sy = 0;
    std::vector<double> lx(m), ly(m);
    for (std::size_t i = 0; i < m; ++i) {
        lx[i] = std::log(tau[i]);
        ly[i] = std::log(err[i]);
        sx += lx[i];
        sy += ly[i];
    }
    const double mx = sx / m, my = sy / m;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < m; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    SlopeFit f;
    f.slope = sxy / sxx;
    if (m > 2) {
        double rss = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const double r = ly[i] - (my + f.slope * (lx[i] - mx));
            rss += r * r;
        }
        const double se = std::sqrt(rss / static_cast<double>(m - 2) / sxx);
        // two-sided 97.5% quantiles for 1..5 degrees of freedom, then normal
        static const double tq[] = {12.706, 4.303, 3.182, 2.776, 2.571};
        const std::size_t df = m - 2;
        const double t = df <= 5 ? tq[df - 1] : 1.96;
        f.ci_low = f.slope - t * se;
        f.ci_high = f.slope + t * se;
    } else {
        f.ci_low = f.ci_high = f.slope;
    }
    return f;
}

struct OrderStudy {
    std::vector<double> tau; // strictly decreasing
    std::vector<double> error; // max_t |v_bar^(t+1) - v^(t+2)|
    SlopeFit fit; // over the 4 finest tau values
    bool monotone = true;
    bool exact = false; // all errors at rounding level
    bool inconclusive = false;
};

struct OrderStudyPair {
    OrderStudy extrapolated;
    OrderStudy plain;
};

/// Prescribed coefficient trajectory c(t).
using CoeffPath = std::function<VecX(double)>;

/// Measures how well v_bar^(t+1) predicts v^(t+2) under tau refinement. Velocities are the
/// prescribed field sampled at fixed probe points, v^(t) = v(x; c(t tau)).
inline OrderStudyPair run_order_study(const DivFreeBasis& basis, const CoeffPath& c, const Points& probes,
                                      const std::vector<double>& taus)
{
    if (taus.size() < 2) {
        throw InvalidArgument("order study needs at least two step sizes");
    }
    for (std::size_t i = 1; i < taus.size(); ++i) {
        if (!(taus[i] < taus[i - 1])) {
            throw InvalidArgument("order study step sizes must be strictly decreasing");
        }
    }
    OrderStudyPair out;
    double vscale = 0.0;
    for (double tau : taus) {
        const int T = static_cast<int>(std::llround(1.0 / tau));
        std::vector<Points> v;
        v.reserve(static_cast<std::size_t>(T + 1));
        for (int t = 0; t <= T; ++t) {
            v.push_back(basis.eval_field(c(t * tau), probes));
            vscale = std::max(vscale, v.back().cwiseAbs().maxCoeff());
        }
        double e_ext = 0.0, e_plain = 0.0;
        for (int t = 0; t + 2 <= T; ++t) {
            const Points vbar = 2.0 * v[t + 1] - v[t];
            e_ext = std::max(e_ext, (vbar - v[t + 2]).norm());
            e_plain = std::max(e_plain, (v[t + 1] - v[t + 2]).norm());
        }
        out.extrapolated.tau.push_back(tau);
        out.extrapolated.error.push_back(e_ext);
        out.plain.tau.push_back(tau);
        out.plain.error.push_back(e_plain);
    }
    const double floor = 1e-13 * std::max(vscale, 1.0) * std::sqrt(static_cast<double>(3 * probes.rows()));
    for (OrderStudy* s : {&out.extrapolated, &out.plain}) {
        s->exact = std::all_of(s->error.begin(), s->error.end(), [&](double e) { return e <= floor; });
        for (std::size_t i = 1; i < s->error.size(); ++i) {
            s->monotone = s->monotone && s->error[i] < s->error[i - 1];
        }
        if (s->exact) {
            continue;
        }
        const std::size_t m = s->tau.size();
        const std::size_t first = m > 4 ? m - 4 : 0;
        std::vector<double> tt(s->tau.begin() + first, s->tau.end());
        std::vector<double> ee(s->error.begin() + first, s->error.end());
        if (std::any_of(ee.begin(), ee.end(), [](double e) { return !(e > 0.0); })) {
            s->inconclusive = true;
            continue;
        }
        s->fit = fit_loglog_slope(tt, ee);
        s->inconclusive = !s->monotone;
    }
    return out;
}

struct FdComponent {
    int index = 0;
    double reverse = 0.0;
    double fd = 0.0;
    double rel_error = 0.0;
    double step = 0.0;
    bool curvature_flag = false; // successive Richardson estimates never settled
};

struct FdCheck {
    std::vector<FdComponent> components;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool curvature_flag = false;
};

/// Derivative of f along coordinate k by Richardson-extrapolated central differences. The step
/// is picked from a ladder h = s 10^-j (s = max(1, |x_k|)) where successive estimates agree
/// best; that agreement is the curvature probe.
inline FdComponent fd_derivative(const std::function<double(const VecX&)>& f, const VecX& x, int k)
{
    const double s = std::max(1.0, std::abs(x[k]));
    auto central = [&](double h) {
        VecX xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        return (f(xp) - f(xm)) / (2 * h);
    };
    auto richardson = [&](double h) { return (4 * central(h / 2) - central(h)) / 3; };
    std::vector<double> hs, d;
    for (int j = 1; j <= 5; ++j) {
        hs.push_back(s * std::pow(10.0, -j));
        d.push_back(richardson(hs.back()));
    }
    std::size_t best = 0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j + 1 < d.size(); ++j) {
        const double gap = std::abs(d[j + 1] - d[j]);
        if (gap < best_gap) {
            best_gap = gap;
            best = j + 1;
        }
    }
    FdComponent c;
    c.index = k;
    c.fd = d[best];
    c.step = hs[best];
    c.curvature_flag = !(best_gap <= 1e-4 * std::abs(c.fd) + 1e-12);
    return c;
}

/// Reverse-mode gradient of E vs central differences on `sample` random packed components
/// (c_hat entries first, then L entries). Relative errors use max(|fd|, 1e-8 max|fd|) as the
/// denominator; when every sampled derivative is below `zero_tol` the comparison is absolute.
inline FdCheck run_fd_gradient_check(const AlignmentObjective& obj, const Variables& v, int sample,
                                     std::uint64_t seed, double zero_tol = 1e-10)
{
    const auto ev = obj.evaluate(v, true);
    const VecX g = obj.gradient(v, ev);
    const VecX x = v.pack();
    const int K = static_cast<int>(v.chat.size());
    std::vector<int> idx(static_cast<std::size_t>(x.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    // Half of the sample from each block so both parameter groups are always exercised.
    std::vector<int> chosen;
    const int want_c = std::min(K, sample / 2);
    for (int k : idx) {
        if (k < K && static_cast<int>(chosen.size()) < want_c) {
            chosen.push_back(k);
        }
    }
    for (int k : idx) {
        if (k >= K && static_cast<int>(chosen.size()) < sample) {
            chosen.push_back(k);
        }
    }
    std::sort(chosen.begin(), chosen.end());
    auto f = [&](const VecX& xx) { return obj.value(Variables::unpack(xx, K)); };
    FdCheck out;
    double fd_max = 0.0;
    for (int k : chosen) {
        FdComponent c = fd_derivative(f, x, k);
        c.reverse = g[k];
        fd_max = std::max(fd_max, std::abs(c.fd));
        out.components.push_back(c);
    }
    const bool absolute = fd_max <= zero_tol;
    for (auto& c : out.components) {
        const double diff = std::abs(c.reverse - c.fd);
        c.rel_error = absolute ? diff : diff / std::max(std::abs(c.fd), 1e-8 * fd_max);
        out.max_rel_error = std::max(out.max_rel_error, c.rel_error);
        out.max_abs_error = std::max(out.max_abs_error, diff);
        out.curvature_flag = out.curvature_flag || c.curvature_flag;
    }
    return out;
}

struct VolumeStudy {
    std::vector<int> T;
    std::vector<double> drift; // max over frames of |V(p^t) - V(p^0)| / |V(p^0)|
    std::vector<double> final_drift; // same at t = 1
    SlopeFit fit; // of drift against tau = 1/T
    bool monotone = true;
    bool zero = false;
};

/// Prescribed: the stationary field v(x; c) advected with p <- p + tau v(p; c). Dynamics: c is
/// the initial coefficient vector of the full solution operator (potential and extrapolation).
enum class VolumeFlow { Prescribed, Dynamics };

/// Relative volume drift of a closed mesh flowed to t = 1 for several T.
inline VolumeStudy run_volume_study(const Shape& mesh, const DivFreeBasis& basis, const VecX& chat,
                                    const std::vector<int>& Ts, VolumeFlow flow = VolumeFlow::Prescribed,
                                    DynamicsConfig base = {})
{
    if (!mesh.has_faces()) {
        throw InvalidArgument("volume study needs a closed triangle mesh");
    }
    const double v0 = signed_volume(mesh);
    if (!(std::abs(v0) > 0.0)) {
        throw InvalidArgument("volume study: mesh has zero volume");
    }
    VolumeStudy out;
    for (int T : Ts) {
        std::vector<double> volumes;
        if (flow == VolumeFlow::Dynamics) {
            DynamicsConfig cfg = base;
            cfg.T = T;
            volumes = solution_operator(chat, identity_rotations(mesh.size()), mesh, basis, cfg).report.volume;
        } else {
            Trajectory traj;
            traj.tau = 1.0 / T;
            traj.coeffs.assign(static_cast<std::size_t>(T), chat);
            for (const Points& f : apply_flow_full_resolution(traj, basis, mesh.points())) {
                volumes.push_back(signed_volume(f, mesh.faces()));
            }
        }
        double worst = 0.0;
        for (double v : volumes) {
            worst = std::max(worst, std::abs(v - v0) / std::abs(v0));
        }
        out.T.push_back(T);
        out.drift.push_back(worst);
        out.final_drift.push_back(std::abs(volumes.back() - v0) / std::abs(v0));
    }
    out.zero = std::all_of(out.drift.begin(), out.drift.end(), [](double d) { return d == 0.0; });
    for (std::size_t i = 1; i < out.drift.size(); ++i) {
        out.monotone = out.monotone && out.drift[i] < out.drift[i - 1];
    }
    if (!out.zero && out.T.size() >= 2
        && std::all_of(out.drift.begin(), out.drift.end(), [](double d) { return d > 0.0; })) {
        std::vector<double> tau;
        for (int T : out.T) {
            tau.push_back(1.0 / T);
        }
        out.fit = fit_loglog_slope(tau, out.drift);
    }
    return out;
}

/// Bounded random coefficients: uniform in [-a, a] with a = scale / sqrt(K).
inline VecX bounded_random_coeffs(int K, double scale, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VecX c(K);
    const double a = scale / std::sqrt(static_cast<double>(K));
    for (int k = 0; k < K; ++k) {
        c[k] = a * u(rng);
    }
    return c;
}

/// Writes a study as a line-oriented table: header line then one row per entry.
inline std::string format_order_study(const OrderStudyPair& s)
{
    std::ostringstream os;
    os.precision(17);
    os << "# tau err_extrapolated err_plain\n";
    for (std::size_t i = 0; i < s.extrapolated.tau.size(); ++i) {
        os << s.extrapolated.tau[i] << ' ' << s.extrapolated.error[i] << ' ' << s.plain.error[i] << '\n';
    }
    os << "# slope_extrapolated " << s.extrapolated.fit.slope << " [" << s.extrapolated.fit.ci_low << ", "
       << s.extrapolated.fit.ci_high << "] exact " << s.extrapolated.exact << '\n';
    os << "# slope_plain " << s.plain.fit.slope << " [" << s.plain.fit.ci_low << ", " << s.plain.fit.ci_high
       << "] exact " << s.plain.exact << '\n';
    return os.str();
}

inline std::string format_volume_study(const VolumeStudy& s)
{
    std::ostringstream os;
    os.precision(17);
    os << "# T max_drift final_drift\n";
    for (std::size_t i = 0; i < s.T.size(); ++i) {
        os << s.T[i] << ' ' << s.drift[i] << ' ' << s.final_drift[i] << '\n';
    }
    os << "# slope " << s.fit.slope << " [" << s.fit.ci_low << ", " << s.fit.ci_high << "] monotone "
       << s.monotone << '\n';
    return os.str();
}

} // namespace hamshape
