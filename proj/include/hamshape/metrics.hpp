#pragma once

#include "hamshape/geometry.hpp"
#include "hamshape/kdtree.hpp"

#include <iomanip>
#include <limits>
#include <sstream>

namespace hamshape {

struct ConformalResult {
    std::vector<double> values; // one per triangle, NaN where excluded
    int excluded = 0; // degenerate rest triangles
    double mean = 0.0;
    double max = 0.0;
};

/// Per-triangle s1/s2 + s2/s1 of the in-plane deformation Jacobian (s1 >= s2 its singular
/// values). Rest triangles with area < 1e-14 diameter^2 are excluded. A deformed triangle
/// that collapses gets +inf.
inline ConformalResult conformal_distortion(const Points& rest, const std::vector<Triangle>& faces,
                                            const Points& deformed, double rest_diameter = -1.0)
{
    if (rest.rows() != deformed.rows()) {
        throw InvalidArgument("conformal_distortion: vertex counts differ");
    }
    const double diam = rest_diameter > 0.0 ? rest_diameter : diameter_of(rest).value;
    const double min_area = 1e-14 * diam * diam;
    ConformalResult r;
    r.values.resize(faces.size(), std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int counted = 0;
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const auto& t = faces[f];
        const Vec3 a = rest.row(t[0]).transpose();
        const Vec3 e1 = Vec3(rest.row(t[1]).transpose()) - a;
        const Vec3 e2 = Vec3(rest.row(t[2]).transpose()) - a;
        const Vec3 nrm = e1.cross(e2);
        if (0.5 * nrm.norm() < min_area) {
            ++r.excluded;
            continue;
        }
        // orthonormal frame of the rest plane
        const Vec3 u = e1.normalized();
        const Vec3 v = nrm.normalized().cross(u);
        Eigen::Matrix2d er;
        er << e1.dot(u), e2.dot(u), e1.dot(v), e2.dot(v);
        Eigen::Matrix<double, 3, 2> ed;
        ed.col(0) = (deformed.row(t[1]) - deformed.row(t[0])).transpose();
        ed.col(1) = (deformed.row(t[2]) - deformed.row(t[0])).transpose();
        const Eigen::Matrix<double, 3, 2> j = ed * er.inverse();
        Eigen::JacobiSVD<Eigen::Matrix<double, 3, 2>> svd(j);
        const double s1 = svd.singularValues()[0];
        const double s2 = svd.singularValues()[1];
        const double d = s2 > 0.0 ? s1 / s2 + s2 / s1 : std::numeric_limits<double>::infinity();
        r.values[f] = d;
        sum += d;
        r.max = std::max(r.max, d);
        ++counted;
    }
    r.mean = counted > 0 ? sum / counted : 0.0;
    return r;
}

/// |V(p^t) - V(p^0)| / |V(p^0)| per frame, V from the signed divergence-theorem volume.
inline std::vector<double> volume_change(const std::vector<Points>& frames, const std::vector<Triangle>& faces,
                                         double rest_volume)
{
    if (!(std::abs(rest_volume) > 0.0)) {
        throw InvalidArgument("volume_change: rest volume is zero");
    }
    std::vector<double> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        out.push_back(std::abs(signed_volume(f, faces) - rest_volume) / std::abs(rest_volume));
    }
    return out;
}

inline std::vector<double> volume_change(const std::vector<Points>& frames, const std::vector<Triangle>& faces)
{
    if (frames.empty()) {
        return {};
    }
    return volume_change(frames, faces, signed_volume(frames.front(), faces));
}

/// Nearest-neighbour distance from every point of a to the set b.
inline std::vector<double> nearest_distances(const Points& a, const Points& b)
{
    if (a.rows() == 0 || b.rows() == 0) {
        throw InvalidArgument("nearest_distances: empty point set");
    }
    const KdTree tree(b);
    std::vector<double> d(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        d[i] = std::sqrt(tree.nearest(a.row(i).transpose()).dist2);
    }
    return d;
}

/// Symmetric Chamfer distance (mean nearest distance each way, averaged) in % of diam.
inline double chamfer_pct(const Points& a, const Points& b, double diam)
{
    if (!(diam > 0.0)) {
        throw InvalidArgument("chamfer_pct: diameter must be > 0");
    }
    const auto ab = nearest_distances(a, b);
    const auto ba = nearest_distances(b, a);
    double sa = 0.0, sb = 0.0;
    for (double d : ab) {
        sa += d;
    }
    for (double d : ba) {
        sb += d;
    }
    return 100.0 * 0.5 * (sa / ab.size() + sb / ba.size()) / diam;
}

struct Curve {
    std::string name;
    std::vector<std::pair<double, double>> points; // (threshold, fraction <= threshold)
};

/// Cumulative fraction of finite samples below each of `count` uniform thresholds on
/// [lo, max(samples)] (or [lo, lo + 1] when all samples equal lo).
inline Curve cumulative_curve(std::string name, std::vector<double> samples, double lo, int count = 256)
{
    Curve c;
    c.name = std::move(name);
    samples.erase(std::remove_if(samples.begin(), samples.end(), [](double v) { return std::isnan(v); }),
                  samples.end());
    std::sort(samples.begin(), samples.end());
    double hi = lo;
    for (double v : samples) {
        if (std::isfinite(v)) {
            hi = std::max(hi, v);
        }
    }
    if (!(hi > lo)) {
        hi = lo + 1.0;
    }
    for (int k = 0; k < count; ++k) {
        const double th = lo + (hi - lo) * k / (count - 1);
        const auto it = std::upper_bound(samples.begin(), samples.end(), th);
        const double frac = samples.empty() ? 0.0 : double(it - samples.begin()) / samples.size();
        c.points.emplace_back(th, frac);
    }
    return c;
}

struct FrameMetrics {
    int frame = 0;
    double conformal_mean = 0.0;
    double conformal_max = 0.0;
    double volume_change = 0.0;
    double chamfer_pct = 0.0; // to the target
};

struct MetricReport {
    std::vector<FrameMetrics> frames;
    int excluded_triangles = 0;
    bool open_mesh = false;
    double diameter = 0.0;
    std::vector<Curve> curves;

    const FrameMetrics& last() const { return frames.back(); }
    double max_volume_change() const
    {
        double m = 0.0;
        for (const auto& f : frames) {
            m = std::max(m, f.volume_change);
        }
        return m;
    }
    double max_conformal() const
    {
        double m = 0.0;
        for (const auto& f : frames) {
            m = std::max(m, f.conformal_max);
        }
        return m;
    }
};

/// All metrics of a frame sequence against a target point set. The rest frame is frames[0]
/// with the given connectivity; Chamfer is in % of the target diameter.
inline MetricReport evaluate_sequence(const std::vector<Points>& frames, const std::vector<Triangle>& faces,
                                      const Points& target)
{
    if (frames.empty()) {
        throw InvalidArgument("evaluate_sequence: no frames");
    }
    MetricReport rep;
    rep.diameter = diameter_of(target).value;
    const double rest_diam = diameter_of(frames.front()).value;
    const bool have_faces = !faces.empty();
    rep.open_mesh = have_faces && boundary_edge_count(faces) > 0;
    const double v0 = have_faces ? signed_volume(frames.front(), faces) : 0.0;
    std::vector<double> all_conformal, all_volume;
    for (std::size_t t = 0; t < frames.size(); ++t) {
        FrameMetrics fm;
        fm.frame = static_cast<int>(t);
        if (have_faces) {
            const auto cd = conformal_distortion(frames.front(), faces, frames[t], rest_diam);
            fm.conformal_mean = cd.mean;
            fm.conformal_max = cd.max;
            rep.excluded_triangles = cd.excluded;
            all_conformal.insert(all_conformal.end(), cd.values.begin(), cd.values.end());
            fm.volume_change = v0 != 0.0 ? std::abs(signed_volume(frames[t], faces) - v0) / std::abs(v0) : 0.0;
            all_volume.push_back(fm.volume_change);
        }
        fm.chamfer_pct = rep.diameter > 0.0 ? chamfer_pct(frames[t], target, rep.diameter) : 0.0;
        rep.frames.push_back(fm);
    }
    if (have_faces) {
        rep.curves.push_back(cumulative_curve("conformal", all_conformal, 2.0));
        rep.curves.push_back(cumulative_curve("volume_change", all_volume, 0.0));
    }
    std::vector<double> d = nearest_distances(frames.back(), target);
    for (double& x : d) {
        x = rep.diameter > 0.0 ? 100.0 * x / rep.diameter : 0.0;
    }
    rep.curves.push_back(cumulative_curve("chamfer_pct", d, 0.0));
    return rep;
}

/// Line-oriented report: `frame` records with named fields, then `curve` records.
inline std::string format_report(const MetricReport& r)
{
    std::ostringstream os;
    os << std::setprecision(17);
    os << "# hamshape metrics v1\n";
    os << "diameter " << r.diameter << " excluded_triangles " << r.excluded_triangles << " open_mesh "
       << (r.open_mesh ? 1 : 0) << '\n';
    for (const auto& f : r.frames) {
        os << "frame " << f.frame << " conformal_mean " << f.conformal_mean << " conformal_max " << f.conformal_max
           << " volume_change " << f.volume_change << " chamfer_pct " << f.chamfer_pct << '\n';
    }
    for (const auto& c : r.curves) {
        for (const auto& [th, fr] : c.points) {
            os << "curve " << c.name << ' ' << th << ' ' << fr << '\n';
        }
    }
    return os.str();
}

/// Inverse of format_report for the frame records and curves.
inline MetricReport parse_report(const std::string& text)
{
    MetricReport r;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "diameter") {
            std::string k1, k2;
            int open = 0;
            ls >> r.diameter >> k1 >> r.excluded_triangles >> k2 >> open;
            r.open_mesh = open != 0;
        } else if (kind == "frame") {
            FrameMetrics f;
            std::string k;
            ls >> f.frame >> k >> f.conformal_mean >> k >> f.conformal_max >> k >> f.volume_change >> k
                >> f.chamfer_pct;
            if (!ls) {
                throw ParseError("<report>", lineno, "malformed frame record");
            }
            r.frames.push_back(f);
        } else if (kind == "curve") {
            std::string name;
            double th = 0, fr = 0;
            ls >> name >> th >> fr;
            if (!ls) {
                throw ParseError("<report>", lineno, "malformed curve record");
            }
            if (r.curves.empty() || r.curves.back().name != name) {
                r.curves.push_back({name, {}});
            }
            r.curves.back().points.emplace_back(th, fr);
        } else {
            throw ParseError("<report>", lineno, "unknown record '" + kind + "'");
        }
    }
    return r;
}

} // namespace hamshape
