#pragma once

#include "hamshape/geometry.hpp"

#include <Eigen/SVD>
#include <Eigen/Sparse>

namespace hamshape {

/// How the per-vertex matrix Sigma_i enters the edge norm.
/// Weight: |e|^2 = e^T Sigma e (small det Sigma = weak penalty).
/// Mahalanobis: |e|^2 = e^T Sigma^{-1} e.
enum class NormConvention { Weight, Mahalanobis };

/// Neighbourhood graph in CSR form plus the rest-pose edge vectors p_j(0) - p_i(0).
/// Rest edges are fixed at construction and shared by every frame of a trajectory.
class ArapModel {
public:
    ArapModel() = default;

    explicit ArapModel(const Shape& rest, NormConvention conv = NormConvention::Weight)
        : convention_(conv)
    {
        const int n = rest.size();
        offsets_.assign(static_cast<std::size_t>(n) + 1, 0);
        for (int i = 0; i < n; ++i) {
            const auto& nb = rest.neighbors()[i];
            if (nb.empty()) {
                throw InvalidArgument("vertex " + std::to_string(i) + " has no neighbours");
            }
            offsets_[i + 1] = offsets_[i] + static_cast<int>(nb.size());
        }
        adj_.reserve(static_cast<std::size_t>(offsets_[n]));
        rest_.reserve(static_cast<std::size_t>(offsets_[n]));
        for (int i = 0; i < n; ++i) {
            for (int j : rest.neighbors()[i]) {
                adj_.push_back(j);
                rest_.emplace_back(rest.points().row(j).transpose() - rest.points().row(i).transpose());
            }
        }
        n_ = n;
    }

    int size() const { return n_; }
    int edge_count() const { return static_cast<int>(adj_.size()); }
    int begin(int i) const { return offsets_[i]; }
    int end(int i) const { return offsets_[i + 1]; }
    int target(int e) const { return adj_[e]; }
    const Vec3& rest_edge(int e) const { return rest_[e]; }
    NormConvention convention() const { return convention_; }

private:
    int n_ = 0;
    std::vector<int> offsets_;
    std::vector<int> adj_;
    std::vector<Vec3> rest_;
    NormConvention convention_ = NormConvention::Weight;
};

struct ArapParams {
    std::vector<Mat3> rotations;
    std::vector<Mat3> sigmas;
};

inline bool is_symmetric_pd(const Mat3& s)
{
    if (!s.allFinite() || (s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + s.norm())) {
        return false;
    }
    Eigen::LLT<Mat3> llt(s);
    return llt.info() == Eigen::Success;
}

/// The matrices that actually weight the residuals (Sigma or Sigma^{-1}).
inline std::vector<Mat3> metric_weights(const ArapModel& model, const std::vector<Mat3>& sigmas)
{
    if (static_cast<int>(sigmas.size()) != model.size()) {
        throw InvalidArgument("sigma count differs from vertex count");
    }
    std::vector<Mat3> w(sigmas.size());
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (!is_symmetric_pd(sigmas[i])) {
            throw InvalidArgument("Sigma_" + std::to_string(i) + " is not symmetric positive definite");
        }
        w[i] = model.convention() == NormConvention::Weight ? sigmas[i] : Mat3(sigmas[i].inverse());
    }
    return w;
}

/// Pulls a gradient with respect to the residual weights back onto Sigma.
inline std::vector<Mat3> weight_grad_to_sigma(const ArapModel& model, const std::vector<Mat3>& sigmas,
                                             const std::vector<Mat3>& weight_grad)
{
    if (model.convention() == NormConvention::Weight) {
        return weight_grad;
    }
    std::vector<Mat3> g(weight_grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Mat3 inv = sigmas[i].inverse();
        g[i] = -inv.transpose() * weight_grad[i] * inv.transpose();
    }
    return g;
}

inline std::vector<Mat3> identity_rotations(int n) { return std::vector<Mat3>(n, Mat3::Identity()); }

// ---------------------------------------------------------------------------
// Rotation fitting

struct RotationFitReport {
    std::vector<int> degenerate_vertices;
    int newton_iterations = 0;
    int unconverged = 0;
};

namespace detail {

/// Residual data of one vertex at a candidate rotation.
struct LocalFrame {
    double f = 0.0; // 1/2 sum e^T M e
    Vec3 g = Vec3::Zero(); // gradient w.r.t. right perturbation R exp([w])
    Mat3 h_gn = Mat3::Zero();
    Mat3 h = Mat3::Zero(); // exact Hessian at w = 0
};

inline LocalFrame local_frame(const ArapModel& model, const Points& x, int i, const Mat3& r,
                              const Mat3& m)
{
    LocalFrame lf;
    const Vec3 xi = x.row(i).transpose();
    for (int e = model.begin(i); e < model.end(i); ++e) {
        const Vec3 d = x.row(model.target(e)).transpose() - xi;
        const Vec3 u = r.transpose() * d;
        const Vec3 res = model.rest_edge(e) - u;
        const Vec3 w = m * res;
        lf.f += 0.5 * res.dot(w);
        lf.g += u.cross(w);
        const Mat3 su = skew(u);
        lf.h_gn += su.transpose() * m * su;
        lf.h += -0.5 * (w * u.transpose() + u * w.transpose()) + w.dot(u) * Mat3::Identity();
    }
    lf.h += lf.h_gn;
    return lf;
}

inline double local_energy(const ArapModel& model, const Points& x, int i, const Mat3& r, const Mat3& m)
{
    double f = 0.0;
    const Vec3 xi = x.row(i).transpose();
    for (int e = model.begin(i); e < model.end(i); ++e) {
        const Vec3 res = model.rest_edge(e) - r.transpose() * (x.row(model.target(e)).transpose() - xi);
        f += 0.5 * res.dot(m * res);
    }
    return f;
}

inline bool is_isotropic(const Mat3& m)
{
    const double t = m.trace() / 3.0;
    return (m - t * Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-15 * std::abs(t);
}

} // namespace detail

/// Per-vertex R_i minimising sum_j |(p_j(0)-p_i(0)) - R^T (p_j - p_i)|^2_{Sigma_i}.
///
/// Closed form: polar factor of the weighted covariance S = sum_j d_j (M r_j)^T with the
/// smallest singular direction sign-corrected to keep det = +1. This is the exact minimiser
/// for isotropic weights; anisotropic weights are then refined with damped Newton steps on
/// SO(3) until the rotational gradient vanishes. Rank < 2 covariances keep the previous
/// rotation (identity if none) and are reported.
inline std::vector<Mat3> fit_rotations(const ArapModel& model, const Points& current,
                                       const std::vector<Mat3>& weights,
                                       const std::vector<Mat3>* previous = nullptr,
                                       RotationFitReport* report = nullptr)
{
    const int n = model.size();
    if (current.rows() != n) {
        throw InvalidArgument("fit_rotations: position count mismatch");
    }
    std::vector<Mat3> rot(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Mat3& m = weights[i];
        const Vec3 xi = current.row(i).transpose();
        Mat3 s = Mat3::Zero();
        double scale = 0.0;
        bool rest = true;
        for (int e = model.begin(i); e < model.end(i); ++e) {
            const Vec3 d = current.row(model.target(e)).transpose() - xi;
            s += d * (m * model.rest_edge(e)).transpose();
            scale += d.norm() * model.rest_edge(e).norm();
            rest = rest && d == model.rest_edge(e);
        }
        Eigen::JacobiSVD<Mat3> svd(s, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Vec3 sv = svd.singularValues();
        if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) {
            rot[i] = previous != nullptr ? (*previous)[i] : Mat3::Identity();
            if (report != nullptr) {
                report->degenerate_vertices.push_back(i);
            }
            continue;
        }
        // Untouched neighbourhood: identity is the exact minimiser, skip the round-off of the SVD.
        if (rest) {
            rot[i] = Mat3::Identity();
            continue;
        }
        Mat3 u = svd.matrixU();
        const Mat3 v = svd.matrixV();
        if ((u * v.transpose()).determinant() < 0.0) {
            u.col(2) *= -1.0;
        }
        Mat3 r = u * v.transpose();
        if (detail::is_isotropic(m)) {
            rot[i] = r;
            continue;
        }
        if (previous != nullptr
            && detail::local_energy(model, current, i, (*previous)[i], m)
                < detail::local_energy(model, current, i, r, m)) {
            r = (*previous)[i];
        }
        const double gtol = 1e-14 * (scale * m.norm() + 1e-300);
        double lambda = 0.0;
        bool converged = false;
        for (int it = 0; it < 60; ++it) {
            const detail::LocalFrame lf = detail::local_frame(model, current, i, r, m);
            if (lf.g.norm() <= gtol) {
                converged = true;
                break;
            }
            Vec3 step;
            Eigen::LLT<Mat3> llt(lf.h + lambda * Mat3::Identity());
            if (llt.info() == Eigen::Success) {
                step = -llt.solve(lf.g);
            } else {
                const double damp = std::max(lambda, 1e-12 * lf.h_gn.trace());
                step = -(lf.h_gn + damp * Mat3::Identity()).ldlt().solve(lf.g);
            }
            const Mat3 trial = r * so3_exp(step);
            if (detail::local_energy(model, current, i, trial, m) <= lf.f) {
                r = trial;
                lambda *= 0.25;
                if (report != nullptr) {
                    ++report->newton_iterations;
                }
                if (step.norm() < 1e-15) {
                    converged = true;
                    break;
                }
            } else {
                lambda = std::max(4.0 * lambda, 1e-6 * lf.h_gn.trace());
            }
        }
        if (!converged && report != nullptr) {
            ++report->unconverged;
        }
        rot[i] = r;
    }
    return rot;
}

/// Adjoint of fit_rotations by implicit differentiation of the stationarity condition.
/// Given dL/dR_i, accumulates dL/dx into `xbar` and dL/dM_i (residual weights) into
/// `weight_bar`. Vertices listed as degenerate carry no derivative.
inline void fit_rotations_vjp(const ArapModel& model, const Points& current,
                              const std::vector<Mat3>& weights, const std::vector<Mat3>& rotations,
                              const std::vector<Mat3>& rot_bar, Points& xbar,
                              std::vector<Mat3>* weight_bar, const std::vector<int>& degenerate = {})
{
    const int n = model.size();
    std::vector<char> skip(static_cast<std::size_t>(n), 0);
    for (int i : degenerate) {
        skip[i] = 1;
    }
    for (int i = 0; i < n; ++i) {
        if (skip[i]) {
            continue;
        }
        const Mat3& r = rotations[i];
        const Mat3 a = r.transpose() * rot_bar[i];
        const Vec3 wbar(a(2, 1) - a(1, 2), a(0, 2) - a(2, 0), a(1, 0) - a(0, 1));
        if (wbar.squaredNorm() == 0.0) {
            continue;
        }
        const Mat3& m = weights[i];
        const detail::LocalFrame lf = detail::local_frame(model, current, i, r, m);
        const Eigen::FullPivLU<Mat3> lu(lf.h);
        if (!lu.isInvertible()) {
            continue;
        }
        const Vec3 mu = lu.solve(wbar);
        const Vec3 xi = current.row(i).transpose();
        Mat3 mbar = Mat3::Zero();
        for (int e = model.begin(i); e < model.end(i); ++e) {
            const int j = model.target(e);
            const Vec3 d = current.row(j).transpose() - xi;
            const Vec3 u = r.transpose() * d;
            const Vec3 res = model.rest_edge(e) - u;
            const Vec3 w = m * res;
            const Vec3 mu_u = mu.cross(u);
            const Vec3 dphi_du = w.cross(mu) - m * mu_u;
            const Vec3 dbar = -(r * dphi_du);
            xbar.row(j) += dbar.transpose();
            xbar.row(i) -= dbar.transpose();
            mbar -= mu_u * res.transpose();
        }
        if (weight_bar != nullptr) {
            (*weight_bar)[i] += mbar;
        }
    }
}

// ---------------------------------------------------------------------------
// Energy, gradients, Hessian

/// W = 1/2 sum_i sum_{j in N(i)} e_ij^T M_i e_ij,  e_ij = r_ij - R_i^T (p_j - p_i).
inline double eval_W(const ArapModel& model, const Points& current, const std::vector<Mat3>& rotations,
                     const std::vector<Mat3>& weights)
{
    double w = 0.0;
    for (int i = 0; i < model.size(); ++i) {
        w += detail::local_energy(model, current, i, rotations[i], weights[i]);
    }
    return w;
}

/// Convenience overload taking Sigma (validated and converted by the model's convention).
inline double eval_W(const ArapModel& model, const Points& current, const ArapParams& params)
{
    return eval_W(model, current, params.rotations, metric_weights(model, params.sigmas));
}

/// Gradient of W with respect to positions at fixed rotations.
inline Points grad_W_positions(const ArapModel& model, const Points& current,
                               const std::vector<Mat3>& rotations, const std::vector<Mat3>& weights)
{
    Points g = Points::Zero(current.rows(), 3);
    for (int i = 0; i < model.size(); ++i) {
        const Mat3& r = rotations[i];
        const Mat3& m = weights[i];
        const Vec3 xi = current.row(i).transpose();
        for (int e = model.begin(i); e < model.end(i); ++e) {
            const int j = model.target(e);
            const Vec3 res = model.rest_edge(e) - r.transpose() * (current.row(j).transpose() - xi);
            const Vec3 f = r * (m * res);
            g.row(j) -= f.transpose();
            g.row(i) += f.transpose();
        }
    }
    return g;
}

inline Points grad_W_positions(const ArapModel& model, const Points& current, const ArapParams& params)
{
    return grad_W_positions(model, current, params.rotations, metric_weights(model, params.sigmas));
}

/// dW/dM_i at fixed rotations (general-matrix gradient, symmetric here).
inline std::vector<Mat3> grad_W_weights(const ArapModel& model, const Points& current,
                                        const std::vector<Mat3>& rotations)
{
    std::vector<Mat3> g(static_cast<std::size_t>(model.size()), Mat3::Zero());
    for (int i = 0; i < model.size(); ++i) {
        const Vec3 xi = current.row(i).transpose();
        for (int e = model.begin(i); e < model.end(i); ++e) {
            const Vec3 res = model.rest_edge(e)
                - rotations[i].transpose() * (current.row(model.target(e)).transpose() - xi);
            g[i] += 0.5 * res * res.transpose();
        }
    }
    return g;
}

/// H a where H is the (position-independent at fixed rotations) Hessian of W.
inline Points hessian_apply(const ArapModel& model, const std::vector<Mat3>& rotations,
                            const std::vector<Mat3>& weights, const Points& a)
{
    Points out = Points::Zero(a.rows(), 3);
    for (int i = 0; i < model.size(); ++i) {
        const Mat3 b = rotations[i] * weights[i] * rotations[i].transpose();
        const Vec3 ai = a.row(i).transpose();
        for (int e = model.begin(i); e < model.end(i); ++e) {
            const int j = model.target(e);
            const Vec3 f = b * (a.row(j).transpose() - ai);
            out.row(j) += f.transpose();
            out.row(i) -= f.transpose();
        }
    }
    return out;
}

/// Sparse 3n x 3n Hessian of W at fixed rotations.
inline Eigen::SparseMatrix<double> assemble_hessian(const ArapModel& model,
                                                    const std::vector<Mat3>& rotations,
                                                    const std::vector<Mat3>& weights)
{
    const int n = model.size();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(model.edge_count()) * 36);
    for (int i = 0; i < n; ++i) {
        const Mat3 b = rotations[i] * weights[i] * rotations[i].transpose();
        for (int e = model.begin(i); e < model.end(i); ++e) {
            const int j = model.target(e);
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) {
                    const double v = b(r, c);
                    trip.emplace_back(3 * j + r, 3 * j + c, v);
                    trip.emplace_back(3 * i + r, 3 * i + c, v);
                    trip.emplace_back(3 * j + r, 3 * i + c, -v);
                    trip.emplace_back(3 * i + r, 3 * j + c, -v);
                }
            }
        }
    }
    Eigen::SparseMatrix<double> h(3 * n, 3 * n);
    h.setFromTriplets(trip.begin(), trip.end());
    return h;
}

/// Directional-derivative adjoints of  phi = a^T grad W(y; R, M)  with respect to R_i and M_i.
/// Adds `scale` * d phi / dR_i into rot_bar and `scale` * d phi / dM_i into weight_bar.
inline void grad_dot_adjoint(const ArapModel& model, const Points& y, const Points& a,
                             const std::vector<Mat3>& rotations, const std::vector<Mat3>& weights,
                             double scale, std::vector<Mat3>& rot_bar, std::vector<Mat3>& weight_bar)
{
    for (int i = 0; i < model.size(); ++i) {
        const Mat3& r = rotations[i];
        const Mat3& m = weights[i];
        const Vec3 yi = y.row(i).transpose();
        const Vec3 ai = a.row(i).transpose();
        Mat3 rb = Mat3::Zero(), mb = Mat3::Zero();
        for (int e = model.begin(i); e < model.end(i); ++e) {
            const int j = model.target(e);
            const Vec3 dy = y.row(j).transpose() - yi;
            const Vec3 da = a.row(j).transpose() - ai;
            const Vec3 res = model.rest_edge(e) - r.transpose() * dy;
            const Vec3 rda = r.transpose() * da;
            rb += -da * (m * res).transpose() + dy * (m * rda).transpose();
            mb += -rda * res.transpose();
        }
        rot_bar[i] += scale * rb;
        weight_bar[i] += scale * mb;
    }
}

/// Isotropic ARAP energy 1/2 sum |R_i (p_j - p_i) - (p*_j - p*_i)|^2 on rest / deformed poses.
inline double eval_isotropic_arap(const Shape& rest, const Points& deformed,
                                  const std::vector<Mat3>& rotations)
{
    double w = 0.0;
    const Points& p = rest.points();
    for (int i = 0; i < rest.size(); ++i) {
        for (int j : rest.neighbors()[i]) {
            const Vec3 d0 = p.row(j).transpose() - p.row(i).transpose();
            const Vec3 d1 = deformed.row(j).transpose() - deformed.row(i).transpose();
            w += 0.5 * (rotations[i] * d0 - d1).squaredNorm();
        }
    }
    return w;
}

// ---------------------------------------------------------------------------
// Sigma parameterisation: Sigma = L L^T + eps I with lower-triangular L (6 numbers).

inline constexpr double kSigmaEps = 1e-6;

struct SigmaBounds {
    double min_eig = 0.05;
    double max_eig = 20.0;
};

using LowerFactor = Eigen::Matrix<double, 6, 1>;

inline Mat3 lower_from_params(const LowerFactor& l)
{
    Mat3 m = Mat3::Zero();
    m(0, 0) = l[0];
    m(1, 0) = l[1];
    m(1, 1) = l[2];
    m(2, 0) = l[3];
    m(2, 1) = l[4];
    m(2, 2) = l[5];
    return m;
}

inline LowerFactor params_from_lower(const Mat3& m)
{
    LowerFactor l;
    l << m(0, 0), m(1, 0), m(1, 1), m(2, 0), m(2, 1), m(2, 2);
    return l;
}

inline Mat3 sigma_from_factor(const LowerFactor& l, double eps = kSigmaEps)
{
    const Mat3 lo = lower_from_params(l);
    return lo * lo.transpose() + eps * Mat3::Identity();
}

inline LowerFactor factor_from_sigma(const Mat3& sigma, double eps = kSigmaEps)
{
    Eigen::LLT<Mat3> llt(sigma - eps * Mat3::Identity());
    if (llt.info() != Eigen::Success) {
        throw InvalidArgument("factor_from_sigma: Sigma - eps I is not positive definite");
    }
    return params_from_lower(llt.matrixL());
}

/// Chain rule through Sigma = L L^T: dE/dL = (G + G^T) L restricted to the lower triangle.
inline LowerFactor factor_gradient(const LowerFactor& l, const Mat3& sigma_grad)
{
    const Mat3 lo = lower_from_params(l);
    return params_from_lower((sigma_grad + sigma_grad.transpose()) * lo);
}

inline Mat3 clamp_sigma(const Mat3& sigma, const SigmaBounds& b = {})
{
    Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (sigma + sigma.transpose()));
    const Vec3 ev = es.eigenvalues().cwiseMax(b.min_eig).cwiseMin(b.max_eig);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace hamshape
