#pragma once

#include "hamshape/common.hpp"
#include "hamshape/kdtree.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>

namespace hamshape {

/// Point set with a symmetric, self-loop-free neighbourhood graph and optional triangles.
/// Immutable after construction; build through from_mesh / build_knn_graph.
class Shape {
public:
    Shape() = default;

    /// Mesh constructor: neighbours are the edge-adjacent vertices of the triangles.
    static Shape from_mesh(Points points, std::vector<Triangle> faces)
    {
        const int n = static_cast<int>(points.rows());
        check_size(n);
        std::vector<std::set<int>> adj(static_cast<std::size_t>(n));
        for (const Triangle& f : faces) {
            for (int c = 0; c < 3; ++c) {
                const int a = f[c], b = f[(c + 1) % 3];
                if (a < 0 || a >= n || b < 0 || b >= n) {
                    throw InvalidArgument("face references vertex outside [0, n)");
                }
                if (a == b) {
                    throw InvalidArgument("degenerate face with repeated vertex");
                }
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        Shape s;
        s.points_ = std::move(points);
        s.faces_ = std::move(faces);
        s.neighbors_.resize(adj.size());
        for (std::size_t i = 0; i < adj.size(); ++i) {
            s.neighbors_[i].assign(adj[i].begin(), adj[i].end());
        }
        return s;
    }

    /// Point cloud with an explicit neighbour graph (validated).
    static Shape from_graph(Points points, std::vector<std::vector<int>> neighbors)
    {
        const int n = static_cast<int>(points.rows());
        check_size(n);
        if (static_cast<int>(neighbors.size()) != n) {
            throw InvalidArgument("neighbour list count differs from point count");
        }
        for (int i = 0; i < n; ++i) {
            auto& nb = neighbors[i];
            std::sort(nb.begin(), nb.end());
            nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
            for (int j : nb) {
                if (j < 0 || j >= n || j == i) {
                    throw InvalidArgument("neighbour index out of range or self loop at vertex "
                                          + std::to_string(i));
                }
            }
        }
        for (int i = 0; i < n; ++i) {
            for (int j : neighbors[i]) {
                if (!std::binary_search(neighbors[j].begin(), neighbors[j].end(), i)) {
                    throw InvalidArgument("neighbour relation is not symmetric");
                }
            }
        }
        Shape s;
        s.points_ = std::move(points);
        s.neighbors_ = std::move(neighbors);
        return s;
    }

    int size() const { return static_cast<int>(points_.rows()); }
    const Points& points() const { return points_; }
    const std::vector<Triangle>& faces() const { return faces_; }
    bool has_faces() const { return !faces_.empty(); }
    const std::vector<std::vector<int>>& neighbors() const { return neighbors_; }

    /// Same connectivity, new positions (frames of a trajectory share the source graph).
    Shape with_points(Points p) const
    {
        if (p.rows() != points_.rows()) {
            throw InvalidArgument("with_points: vertex count mismatch");
        }
        Shape s = *this;
        s.points_ = std::move(p);
        return s;
    }

    /// Number of connected components of the neighbour graph.
    int component_count() const
    {
        const int n = size();
        std::vector<int> label(static_cast<std::size_t>(n), -1);
        int count = 0;
        std::vector<int> stack;
        for (int s = 0; s < n; ++s) {
            if (label[s] >= 0) {
                continue;
            }
            label[s] = count;
            stack.push_back(s);
            while (!stack.empty()) {
                const int v = stack.back();
                stack.pop_back();
                for (int w : neighbors_[v]) {
                    if (label[w] < 0) {
                        label[w] = count;
                        stack.push_back(w);
                    }
                }
            }
            ++count;
        }
        return count;
    }

private:
    static void check_size(int n)
    {
        if (n < 4) {
            throw InvalidArgument("a shape needs at least 4 points, got " + std::to_string(n));
        }
    }

    Points points_;
    std::vector<Triangle> faces_;
    std::vector<std::vector<int>> neighbors_;
};

/// Isotropic cube used as the support of the flow basis.
struct DomainBox {
    Vec3 center = Vec3::Constant(0.5);
    double half_extent = 0.5;

    double edge() const { return 2.0 * half_extent; }
    static DomainBox unit() { return {}; }

    /// World -> [0,1]^3.
    Vec3 to_unit(const Vec3& x) const { return (x - center) / edge() + Vec3::Constant(0.5); }
    Vec3 from_unit(const Vec3& u) const { return (u - Vec3::Constant(0.5)) * edge() + center; }

    Points to_unit(const Points& p) const
    {
        Points out(p.rows(), 3);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            out.row(i) = to_unit(Vec3(p.row(i).transpose())).transpose();
        }
        return out;
    }
    Points from_unit(const Points& p) const
    {
        Points out(p.rows(), 3);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            out.row(i) = from_unit(Vec3(p.row(i).transpose())).transpose();
        }
        return out;
    }

    bool contains(const Vec3& x) const
    {
        return ((x - center).cwiseAbs().array() <= half_extent).all();
    }
};

enum class DiameterMethod { Exact, FarthestPairRefinement };

struct DiameterResult {
    double value = 0.0;
    DiameterMethod method = DiameterMethod::Exact;
    /// Bounding-box diagonal; equals `value` only for degenerate sets.
    double upper_bound = 0.0;
};

inline constexpr int kExactDiameterLimit = 5000;

inline DiameterResult diameter_of(const Points& p)
{
    const Eigen::Index n = p.rows();
    if (n < 2) {
        throw InvalidArgument("diameter needs at least 2 points");
    }
    DiameterResult r;
    r.upper_bound = (p.colwise().maxCoeff() - p.colwise().minCoeff()).norm();
    if (n <= kExactDiameterLimit) {
        double best = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                best = std::max(best, (p.row(i) - p.row(j)).squaredNorm());
            }
        }
        r.value = std::sqrt(best);
        r.method = DiameterMethod::Exact;
        return r;
    }
    // Farthest-pair sweeps seeded from the extreme points along 13 directions.
    static const double dirs[13][3] = {{1, 0, 0},  {0, 1, 0},  {0, 0, 1},  {1, 1, 0}, {1, -1, 0},
                                       {1, 0, 1},  {1, 0, -1}, {0, 1, 1},  {0, 1, -1}, {1, 1, 1},
                                       {1, 1, -1}, {1, -1, 1}, {-1, 1, 1}};
    auto farthest_from = [&](Eigen::Index a) {
        Eigen::Index arg = a;
        double best = -1.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double d = (p.row(j) - p.row(a)).squaredNorm();
            if (d > best) {
                best = d;
                arg = j;
            }
        }
        return std::pair{arg, best};
    };
    double best = 0.0;
    for (const auto& d : dirs) {
        const Eigen::RowVector3d dir(d[0], d[1], d[2]);
        Eigen::Index arg = 0;
        (p * dir.transpose()).maxCoeff(&arg);
        for (int sweep = 0; sweep < 4; ++sweep) {
            const auto [next, d2] = farthest_from(arg);
            if (d2 <= best && sweep > 0) {
                break;
            }
            best = std::max(best, d2);
            arg = next;
        }
    }
    r.value = std::sqrt(best);
    r.method = DiameterMethod::FarthestPairRefinement;
    return r;
}

inline double diameter(const Shape& s) { return diameter_of(s.points()).value; }

/// Symmetrised k-nearest-neighbour graph (union of directed kNN edges).
inline Shape build_knn_graph(const Points& points, int k)
{
    const int n = static_cast<int>(points.rows());
    if (k <= 0) {
        throw InvalidArgument("k must be positive");
    }
    if (n < k + 1) {
        throw InvalidArgument("build_knn_graph: need at least k+1 points (k=" + std::to_string(k)
                              + ", n=" + std::to_string(n) + ")");
    }
    const double tol = 1e-12 * diameter_of(points).value;
    const KdTree tree(points);
    std::vector<std::vector<int>> nb(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto hits = tree.knn(points.row(i).transpose(), k, i);
        if (!hits.empty() && std::sqrt(hits.front().dist2) <= tol) {
            throw InvalidArgument("duplicate points " + std::to_string(i) + " and "
                                  + std::to_string(hits.front().index));
        }
        for (const auto& h : hits) {
            nb[i].push_back(h.index);
            nb[h.index].push_back(i);
        }
    }
    return Shape::from_graph(points, std::move(nb));
}

struct SampleResult {
    std::vector<int> indices;
    /// For every input vertex, the position (into `indices`) of its nearest sample.
    std::vector<int> prolongation;
};

/// Greedy Euclidean farthest point sampling; first sample is `seed mod n`.
inline SampleResult farthest_point_sample(const Points& points, int m_sub, std::uint64_t seed)
{
    const int n = static_cast<int>(points.rows());
    if (m_sub <= 0 || m_sub > n) {
        throw InvalidArgument("farthest_point_sample: m_sub must be in [1, n]");
    }
    SampleResult r;
    r.indices.reserve(static_cast<std::size_t>(m_sub));
    r.prolongation.assign(static_cast<std::size_t>(n), 0);
    std::vector<double> mind(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    int current = static_cast<int>(seed % static_cast<std::uint64_t>(n));
    for (int s = 0; s < m_sub; ++s) {
        r.indices.push_back(current);
        const Eigen::RowVector3d c = points.row(current);
        int next = -1;
        double far = -1.0;
        for (int i = 0; i < n; ++i) {
            const double d = (points.row(i) - c).squaredNorm();
            if (d < mind[i]) {
                mind[i] = d;
                r.prolongation[i] = s;
            }
            if (mind[i] > far) {
                far = mind[i];
                next = i;
            }
        }
        current = next;
    }
    return r;
}

inline SampleResult farthest_point_sample(const Shape& shape, int m_sub, std::uint64_t seed)
{
    return farthest_point_sample(shape.points(), m_sub, seed);
}

/// Divergence-theorem volume (1/6) sum det[a,b,c]; sign follows face orientation.
inline double signed_volume(const Points& p, const std::vector<Triangle>& faces)
{
    if (faces.empty()) {
        throw UnsupportedInput("signed_volume requires triangles");
    }
    double v = 0.0;
    for (const Triangle& f : faces) {
        const Vec3 a = p.row(f[0]), b = p.row(f[1]), c = p.row(f[2]);
        v += a.dot(b.cross(c));
    }
    return v / 6.0;
}

inline double signed_volume(const Shape& s) { return signed_volume(s.points(), s.faces()); }

/// Number of edges used by exactly one triangle (0 for a closed manifold mesh).
inline int boundary_edge_count(const std::vector<Triangle>& faces)
{
    std::vector<std::pair<int, int>> edges;
    edges.reserve(faces.size() * 3);
    for (const Triangle& f : faces) {
        for (int c = 0; c < 3; ++c) {
            const int a = f[c], b = f[(c + 1) % 3];
            edges.emplace_back(std::min(a, b), std::max(a, b));
        }
    }
    std::sort(edges.begin(), edges.end());
    int boundary = 0;
    for (std::size_t i = 0; i < edges.size();) {
        std::size_t j = i;
        while (j < edges.size() && edges[j] == edges[i]) {
            ++j;
        }
        if (j - i == 1) {
            ++boundary;
        }
        i = j;
    }
    return boundary;
}

/// Smallest cube containing both point sets, grown by padding * edge on every side.
inline DomainBox fit_domain_box(const Points& p, const Points& q, double padding = 0.25)
{
    if (padding < 0.0) {
        throw InvalidArgument("padding must be non-negative");
    }
    Vec3 lo = p.colwise().minCoeff().transpose().cwiseMin(q.colwise().minCoeff().transpose());
    Vec3 hi = p.colwise().maxCoeff().transpose().cwiseMax(q.colwise().maxCoeff().transpose());
    const double edge = (hi - lo).maxCoeff();
    if (!(edge > 0.0) || !std::isfinite(edge)) {
        throw InvalidArgument("fit_domain_box: degenerate (zero-extent) input");
    }
    DomainBox box;
    box.center = 0.5 * (lo + hi);
    box.half_extent = 0.5 * edge * (1.0 + 2.0 * padding);
    return box;
}

inline DomainBox fit_domain_box(const Shape& p, const Shape& q, double padding = 0.25)
{
    return fit_domain_box(p.points(), q.points(), padding);
}

} // namespace hamshape
