#pragma once

// Procedural meshes used by the test-suite, the acceptance runner and the CLI demos.

#include "hamshape/geometry.hpp"

#include <map>
#include <tuple>

namespace hamshape::shapes {

/// Geodesic sphere: every icosahedron face split into frequency^2 triangles and projected
/// to the sphere. Vertex count is 10 * frequency^2 + 2 (642 for 8, 2562 for 16).
inline Shape icosphere(int frequency, double radius = 1.0, const Vec3& center = Vec3::Zero())
{
    if (frequency < 1) {
        throw InvalidArgument("icosphere frequency must be >= 1");
    }
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    const double base[12][3] = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                                {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                                {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    const int tris[20][3] = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    const int nu = frequency;
    std::vector<Vec3> verts;
    std::map<std::tuple<long long, long long, long long>, int> lookup;
    auto vertex_id = [&](const Vec3& p) {
        const auto key = std::make_tuple(std::llround(p.x() * 1e9), std::llround(p.y() * 1e9),
                                         std::llround(p.z() * 1e9));
        auto it = lookup.find(key);
        if (it != lookup.end()) {
            return it->second;
        }
        const int id = static_cast<int>(verts.size());
        verts.push_back(p);
        lookup.emplace(key, id);
        return id;
    };
    std::vector<Triangle> faces;
    faces.reserve(static_cast<std::size_t>(20 * nu * nu));
    for (const auto& tri : tris) {
        const Vec3 a(base[tri[0]][0], base[tri[0]][1], base[tri[0]][2]);
        const Vec3 b(base[tri[1]][0], base[tri[1]][1], base[tri[1]][2]);
        const Vec3 c(base[tri[2]][0], base[tri[2]][1], base[tri[2]][2]);
        std::vector<std::vector<int>> grid(static_cast<std::size_t>(nu + 1));
        for (int i = 0; i <= nu; ++i) {
            for (int j = 0; i + j <= nu; ++j) {
                const Vec3 p = a + (b - a) * (double(i) / nu) + (c - a) * (double(j) / nu);
                grid[i].push_back(vertex_id(p));
            }
        }
        for (int i = 0; i < nu; ++i) {
            for (int j = 0; i + j < nu; ++j) {
                faces.push_back({grid[i][j], grid[i + 1][j], grid[i][j + 1]});
                if (i + j < nu - 1) {
                    faces.push_back({grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]});
                }
            }
        }
    }
    Points pts(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) {
        pts.row(static_cast<Eigen::Index>(i)) = (center + radius * verts[i].normalized()).transpose();
    }
    return Shape::from_mesh(std::move(pts), std::move(faces));
}

/// Axis-aligned unit cube [0,1]^3, 12 outward-oriented triangles.
inline Shape unit_cube()
{
    Points p(8, 3);
    p << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1;
    std::vector<Triangle> f = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                               {1, 2, 6}, {1, 6, 5}, {2, 3, 7}, {2, 7, 6}, {3, 0, 4}, {3, 4, 7}};
    return Shape::from_mesh(std::move(p), std::move(f));
}

/// Applies x -> A x + t to every vertex, keeping connectivity.
inline Shape transformed(const Shape& s, const Mat3& a, const Vec3& t = Vec3::Zero())
{
    Points p = s.points();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        p.row(i) = (a * Vec3(p.row(i).transpose()) + t).transpose();
    }
    return s.with_points(std::move(p));
}

/// Volume-preserving stretch diag(s, 1/sqrt(s), 1/sqrt(s)).
inline Mat3 volume_preserving_stretch(double s)
{
    return Eigen::Vector3d(s, 1.0 / std::sqrt(s), 1.0 / std::sqrt(s)).asDiagonal();
}

} // namespace hamshape::shapes
