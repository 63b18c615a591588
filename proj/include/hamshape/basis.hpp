#pragma once

#include "hamshape/geometry.hpp"

#include <algorithm>
#include <span>
#include <tuple>

namespace hamshape {

/// One divergence-free field: curl of the vector potential
///   e_axis * sin(pi a x) sin(pi b y) sin(pi c z)
/// in box-normalised coordinates, scaled by 1 / (pi |(a,b,c)|).
struct Mode {
    int a = 1, b = 1, c = 1;
    int axis = 0;
    int shell() const { return a * a + b * b + c * c; }
    friend bool operator==(const Mode&, const Mode&) = default;
};

/// Coarse-to-fine basis of K closed-form divergence-free fields over a DomainBox.
///
/// Field values are returned in world units per unit time: a coefficient vector c is
/// expressed in box edges per unit time. Every field is tangent to the box faces and
/// its divergence vanishes identically (the Jacobian trace cancels term by term).
class DivFreeBasis {
public:
    static DivFreeBasis build(const DomainBox& box, int K)
    {
        if (K < 3) {
            throw InvalidArgument("basis needs K >= 3, got " + std::to_string(K));
        }
        if (!(box.half_extent > 0.0)) {
            throw InvalidArgument("basis box must have positive extent");
        }
        int F = 2;
        auto count_upto = [](int F) {
            const int smax = F * F + 1;
            int count = 0;
            for (int a = 1; a <= F; ++a) {
                for (int b = 1; b <= F; ++b) {
                    for (int c = 1; c <= F; ++c) {
                        count += (a * a + b * b + c * c <= smax) ? 3 : 0;
                    }
                }
            }
            return count;
        };
        while (count_upto(F) < K) {
            ++F;
        }
        std::vector<Mode> all;
        const int smax = F * F + 1;
        for (int a = 1; a <= F; ++a) {
            for (int b = 1; b <= F; ++b) {
                for (int c = 1; c <= F; ++c) {
                    if (a * a + b * b + c * c <= smax) {
                        for (int axis = 0; axis < 3; ++axis) {
                            all.push_back({a, b, c, axis});
                        }
                    }
                }
            }
        }
        std::sort(all.begin(), all.end(), [](const Mode& x, const Mode& y) {
            return std::make_tuple(x.shell(), x.a, x.b, x.c, x.axis)
                < std::make_tuple(y.shell(), y.a, y.b, y.c, y.axis);
        });
        all.resize(static_cast<std::size_t>(K));

        DivFreeBasis basis;
        basis.box_ = box;
        basis.modes_ = std::move(all);
        for (int k = 0; k < K; ++k) {
            const Mode& m = basis.modes_[k];
            if (basis.triples_.empty() || basis.triples_.back().a != m.a
                || basis.triples_.back().b != m.b || basis.triples_.back().c != m.c) {
                Triple t;
                t.a = m.a;
                t.b = m.b;
                t.c = m.c;
                t.norm = 1.0 / (kPi * std::sqrt(double(m.shell())));
                basis.triples_.push_back(t);
            }
            basis.triples_.back().index[m.axis] = k;
            basis.max_freq_ = std::max({basis.max_freq_, m.a, m.b, m.c});
        }
        return basis;
    }

    int size() const { return static_cast<int>(modes_.size()); }
    const std::vector<Mode>& modes() const { return modes_; }
    const DomainBox& box() const { return box_; }

    /// Value of field k at a world position.
    Vec3 eval_mode(int k, const Vec3& x) const
    {
        check_mode(k);
        const Mode& m = modes_[k];
        const Vec3 u = box_.to_unit(x);
        const double sa = std::sin(kPi * m.a * u.x()), ca = std::cos(kPi * m.a * u.x());
        const double sb = std::sin(kPi * m.b * u.y()), cb = std::cos(kPi * m.b * u.y());
        const double sc = std::sin(kPi * m.c * u.z()), cc = std::cos(kPi * m.c * u.z());
        const Vec3 grad(kPi * m.a * ca * sb * sc, kPi * m.b * sa * cb * sc, kPi * m.c * sa * sb * cc);
        const double scale = box_.edge() / (kPi * std::sqrt(double(m.shell())));
        return scale * grad.cross(Vec3::Unit(m.axis));
    }

    /// Analytic spatial Jacobian d(field_k)/dx at a world position.
    Mat3 mode_jacobian(int k, const Vec3& x) const
    {
        check_mode(k);
        const Mode& m = modes_[k];
        const Vec3 u = box_.to_unit(x);
        const double sa = std::sin(kPi * m.a * u.x()), ca = std::cos(kPi * m.a * u.x());
        const double sb = std::sin(kPi * m.b * u.y()), cb = std::cos(kPi * m.b * u.y());
        const double sc = std::sin(kPi * m.c * u.z()), cc = std::cos(kPi * m.c * u.z());
        const Hess h = hessian(m.a, m.b, m.c, sa, ca, sb, cb, sc, cc);
        return jacobian_of_axis(h, m.axis) / (kPi * std::sqrt(double(m.shell())));
    }

    /// Trace of the analytic Jacobian; identically zero by construction.
    double mode_divergence(int k, const Vec3& x) const { return mode_jacobian(k, x).trace(); }

    /// v(x_i; c) = sum_k c_k phi_k(x_i). Each point is evaluated independently with a fixed
    /// summation order, so results do not depend on how points are batched.
    Points eval_field(const VecX& c, const Points& x, int* outside = nullptr) const
    {
        check_coeffs(c);
        Points out(x.rows(), 3);
        Tables t(max_freq_);
        const double edge = box_.edge();
        int out_count = 0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const Vec3 u = box_.to_unit(Vec3(x.row(i).transpose()));
            out_count += outside_unit(u) ? 1 : 0;
            t.fill(u);
            double v0 = 0.0, v1 = 0.0, v2 = 0.0;
            for (const Triple& tr : triples_) {
                const Grad g = gradient(tr, t);
                for (int axis = 0; axis < 3; ++axis) {
                    const int k = tr.index[axis];
                    if (k < 0) {
                        continue;
                    }
                    const double w = c[k] * edge * tr.norm;
                    // grad x e_axis
                    switch (axis) {
                    case 0:
                        v1 += w * g.z;
                        v2 -= w * g.y;
                        break;
                    case 1:
                        v0 -= w * g.z;
                        v2 += w * g.x;
                        break;
                    default:
                        v0 += w * g.y;
                        v1 -= w * g.x;
                        break;
                    }
                }
            }
            out(i, 0) = v0;
            out(i, 1) = v1;
            out(i, 2) = v2;
        }
        if (outside != nullptr) {
            *outside = out_count;
        }
        return out;
    }

    /// Dense (3n) x K matrix with eval_field(c, x) = Phi c (rows point-major, then coordinate).
    MatX eval_basis_matrix(const Points& x) const { return eval_basis_transposed(x).transpose(); }

    /// K x (3n) transpose of eval_basis_matrix; column-contiguous per point and coordinate.
    MatX eval_basis_transposed(const Points& x) const
    {
        const int K = size();
        MatX phit(K, 3 * x.rows());
        Tables t(max_freq_);
        const double edge = box_.edge();
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            t.fill(box_.to_unit(Vec3(x.row(i).transpose())));
            double* col0 = phit.col(3 * i).data();
            double* col1 = phit.col(3 * i + 1).data();
            double* col2 = phit.col(3 * i + 2).data();
            for (const Triple& tr : triples_) {
                const Grad g = gradient(tr, t);
                const double s = edge * tr.norm;
                for (int axis = 0; axis < 3; ++axis) {
                    const int k = tr.index[axis];
                    if (k < 0) {
                        continue;
                    }
                    switch (axis) {
                    case 0:
                        col0[k] = 0.0;
                        col1[k] = s * g.z;
                        col2[k] = -s * g.y;
                        break;
                    case 1:
                        col0[k] = -s * g.z;
                        col1[k] = 0.0;
                        col2[k] = s * g.x;
                        break;
                    default:
                        col0[k] = s * g.y;
                        col1[k] = -s * g.x;
                        col2[k] = 0.0;
                        break;
                    }
                }
            }
        }
        return phit;
    }

    /// Jacobian of v(.; c) at a world position.
    Mat3 field_jacobian(const VecX& c, const Vec3& x) const
    {
        check_coeffs(c);
        Tables t(max_freq_);
        t.fill(box_.to_unit(x));
        Mat3 j = Mat3::Zero();
        for (const Triple& tr : triples_) {
            const Hess h = hessian(tr, t);
            for (int axis = 0; axis < 3; ++axis) {
                const int k = tr.index[axis];
                if (k >= 0) {
                    j += (c[k] * tr.norm) * jacobian_of_axis(h, axis);
                }
            }
        }
        return j;
    }

    /// Batched vector-Jacobian products: out_i = sum_p J(x_i; w_p)^T u_p(i).
    /// This is the pullback of perturbations of the basis matrix onto point positions.
    Points jacobian_transpose_apply(std::span<const VecX* const> ws,
                                    std::span<const Points* const> us, const Points& x) const
    {
        if (ws.size() != us.size()) {
            throw InvalidArgument("jacobian_transpose_apply: mismatched pair lists");
        }
        for (const VecX* w : ws) {
            check_coeffs(*w);
        }
        const Eigen::Index np = static_cast<Eigen::Index>(ws.size());
        Points out = Points::Zero(x.rows(), 3);
        if (np == 0) {
            return out;
        }
        MatX wm(size(), np);
        for (Eigen::Index p = 0; p < np; ++p) {
            wm.col(p) = *ws[p];
        }
        Tables t(max_freq_);
        MatX u(np, 3);
        Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> q(size(), 3);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            t.fill(box_.to_unit(Vec3(x.row(i).transpose())));
            for (Eigen::Index p = 0; p < np; ++p) {
                u.row(p) = us[p]->row(i);
            }
            // q_k = sum_p w_pk u_p(i); each triple then needs one Hessian.
            q.noalias() = wm * u;
            double a0 = 0.0, a1 = 0.0, a2 = 0.0;
            for (const Triple& tr : triples_) {
                const Hess h = hessian(tr, t);
                if (const int k = tr.index[0]; k >= 0) { // J = [0; (xz yz zz); -(xy yy yz)]
                    const double u1 = tr.norm * q(k, 1), u2 = tr.norm * q(k, 2);
                    a0 += h.xz * u1 - h.xy * u2;
                    a1 += h.yz * u1 - h.yy * u2;
                    a2 += h.zz * u1 - h.yz * u2;
                }
                if (const int k = tr.index[1]; k >= 0) { // J = [-(xz yz zz); 0; (xx xy xz)]
                    const double u0 = tr.norm * q(k, 0), u2 = tr.norm * q(k, 2);
                    a0 += h.xx * u2 - h.xz * u0;
                    a1 += h.xy * u2 - h.yz * u0;
                    a2 += h.xz * u2 - h.zz * u0;
                }
                if (const int k = tr.index[2]; k >= 0) { // J = [(xy yy yz); -(xx xy xz); 0]
                    const double u0 = tr.norm * q(k, 0), u1 = tr.norm * q(k, 1);
                    a0 += h.xy * u0 - h.xx * u1;
                    a1 += h.yy * u0 - h.xy * u1;
                    a2 += h.yz * u0 - h.xz * u1;
                }
            }
            out(i, 0) = a0;
            out(i, 1) = a1;
            out(i, 2) = a2;
        }
        return out;
    }

private:
    struct Triple {
        int a = 1, b = 1, c = 1;
        double norm = 1.0;
        int index[3] = {-1, -1, -1};
    };
    struct Grad {
        double x, y, z;
    };
    struct Hess {
        double xx, yy, zz, xy, xz, yz;
    };

    /// sin/cos tables of pi f u for f = 1..max_freq along each axis.
    struct Tables {
        explicit Tables(int F) : F(F), s(3 * (F + 1)), c(3 * (F + 1)) {}
        void fill(const Vec3& u)
        {
            for (int d = 0; d < 3; ++d) {
                for (int f = 1; f <= F; ++f) {
                    s[d * (F + 1) + f] = std::sin(kPi * f * u[d]);
                    c[d * (F + 1) + f] = std::cos(kPi * f * u[d]);
                }
            }
        }
        double sn(int d, int f) const { return s[d * (F + 1) + f]; }
        double cs(int d, int f) const { return c[d * (F + 1) + f]; }
        int F;
        std::vector<double> s, c;
    };

    static Grad gradient(const Triple& tr, const Tables& t)
    {
        const double sa = t.sn(0, tr.a), sb = t.sn(1, tr.b), sc = t.sn(2, tr.c);
        return {kPi * tr.a * t.cs(0, tr.a) * sb * sc, kPi * tr.b * sa * t.cs(1, tr.b) * sc,
                kPi * tr.c * sa * sb * t.cs(2, tr.c)};
    }

    static Hess hessian(int a, int b, int c, double sa, double ca, double sb, double cb, double sc,
                        double cc)
    {
        const double psi = sa * sb * sc;
        const double pa = kPi * a, pb = kPi * b, pc = kPi * c;
        return {-pa * pa * psi,      -pb * pb * psi,      -pc * pc * psi,
                pa * pb * ca * cb * sc, pa * pc * ca * sb * cc, pb * pc * sa * cb * cc};
    }

    static Hess hessian(const Triple& tr, const Tables& t)
    {
        return hessian(tr.a, tr.b, tr.c, t.sn(0, tr.a), t.cs(0, tr.a), t.sn(1, tr.b), t.cs(1, tr.b),
                       t.sn(2, tr.c), t.cs(2, tr.c));
    }

    /// Jacobian (box-normalised) of grad(psi) x e_axis.
    static Mat3 jacobian_of_axis(const Hess& h, int axis)
    {
        Mat3 j;
        switch (axis) {
        case 0: // (0, psi_z, -psi_y)
            j << 0, 0, 0, h.xz, h.yz, h.zz, -h.xy, -h.yy, -h.yz;
            break;
        case 1: // (-psi_z, 0, psi_x)
            j << -h.xz, -h.yz, -h.zz, 0, 0, 0, h.xx, h.xy, h.xz;
            break;
        default: // (psi_y, -psi_x, 0)
            j << h.xy, h.yy, h.yz, -h.xx, -h.xy, -h.xz, 0, 0, 0;
            break;
        }
        return j;
    }

    static bool outside_unit(const Vec3& u)
    {
        return (u.array() < 0.0).any() || (u.array() > 1.0).any();
    }

    void check_mode(int k) const
    {
        if (k < 0 || k >= size()) {
            throw InvalidArgument("mode index out of range");
        }
    }

    void check_coeffs(const VecX& c) const
    {
        if (c.size() != size()) {
            throw InvalidArgument("coefficient vector has length " + std::to_string(c.size())
                                  + ", basis has K=" + std::to_string(size()));
        }
    }

    DomainBox box_;
    std::vector<Mode> modes_;
    std::vector<Triple> triples_;
    int max_freq_ = 1;
};

} // namespace hamshape
