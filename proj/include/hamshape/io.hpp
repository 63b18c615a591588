#pragma once

#include "hamshape/geometry.hpp"
#include "hamshape/optim.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hamshape {

namespace fs = std::filesystem;
using Json = nlohmann::json;

enum class MeshFormat { Off, Obj, Ply };

inline MeshFormat format_from_path(const fs::path& p)
{
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".off") {
        return MeshFormat::Off;
    }
    if (ext == ".obj") {
        return MeshFormat::Obj;
    }
    if (ext == ".ply") {
        return MeshFormat::Ply;
    }
    throw UnsupportedInput("unknown mesh extension '" + ext + "' for " + p.string());
}

inline MeshFormat parse_format(const std::string& s)
{
    if (s == "off") {
        return MeshFormat::Off;
    }
    if (s == "obj") {
        return MeshFormat::Obj;
    }
    if (s == "ply") {
        return MeshFormat::Ply;
    }
    throw InvalidArgument("unknown mesh format '" + s + "'");
}

inline const char* extension(MeshFormat f)
{
    switch (f) {
    case MeshFormat::Obj:
        return ".obj";
    case MeshFormat::Ply:
        return ".ply";
    default:
        return ".off";
    }
}

/// Raw file contents: positions plus triangles (polygons fan-triangulated).
struct MeshData {
    Points points;
    std::vector<Triangle> faces;
};

inline constexpr int kPointCloudNeighbours = 6;

namespace detail {

    /// Line reader that skips blank lines and '#' comments and remembers the line number.
    class LineReader {
    public:
        LineReader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

        bool next(std::string& line)
        {
            while (std::getline(is_, line)) {
                ++lineno_;
                if (!line.empty() && line.back() == '\r') {
                    line.pop_back();
                }
                const auto hash = line.find('#');
                if (hash != std::string::npos) {
                    line.erase(hash);
                }
                if (line.find_first_not_of(" \t") != std::string::npos) {
                    return true;
                }
            }
            return false;
        }
        [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_, lineno_, what); }
        std::size_t line() const { return lineno_; }
        const std::string& path() const { return path_; }

    private:
        std::istream& is_;
        std::string path_;
        std::size_t lineno_ = 0;
    };

    inline void add_polygon(const std::vector<int>& poly, std::vector<Triangle>& faces, LineReader& r)
    {
        if (poly.size() < 3) {
            r.fail("face with fewer than 3 vertices");
        }
        for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
            faces.push_back({poly[0], poly[k], poly[k + 1]});
        }
    }

    inline void check_face_indices(const MeshData& m, LineReader& r)
    {
        for (const auto& f : m.faces) {
            for (int v : f) {
                if (v < 0 || v >= m.points.rows()) {
                    r.fail("face index " + std::to_string(v) + " out of range");
                }
            }
        }
    }

    inline MeshData read_off(std::istream& is, const std::string& path)
    {
        LineReader r(is, path);
        std::string line;
        if (!r.next(line)) {
            r.fail("empty file");
        }
        std::istringstream hs(line);
        std::string magic;
        hs >> magic;
        if (magic != "OFF") {
            r.fail("expected OFF header");
        }
        long nv = -1, nf = -1, ne = 0;
        if (!(hs >> nv)) {
            if (!r.next(line)) {
                r.fail("missing counts line");
            }
            hs = std::istringstream(line);
            hs >> nv;
        }
        if (!(hs >> nf >> ne) || nv < 0 || nf < 0) {
            r.fail("malformed counts line");
        }
        MeshData m;
        m.points.resize(nv, 3);
        for (long i = 0; i < nv; ++i) {
            if (!r.next(line)) {
                r.fail("expected " + std::to_string(nv) + " vertices, found " + std::to_string(i));
            }
            std::istringstream ls(line);
            if (!(ls >> m.points(i, 0) >> m.points(i, 1) >> m.points(i, 2))) {
                r.fail("malformed vertex");
            }
        }
        std::vector<int> poly;
        for (long f = 0; f < nf; ++f) {
            if (!r.next(line)) {
                r.fail("expected " + std::to_string(nf) + " faces, found " + std::to_string(f));
            }
            std::istringstream ls(line);
            int k = 0;
            if (!(ls >> k) || k < 0) {
                r.fail("malformed face");
            }
            poly.resize(static_cast<std::size_t>(k));
            for (int j = 0; j < k; ++j) {
                if (!(ls >> poly[j])) {
                    r.fail("face has fewer indices than declared");
                }
            }
            add_polygon(poly, m.faces, r);
        }
        if (r.next(line)) {
            r.fail("trailing data after declared faces");
        }
        check_face_indices(m, r);
        return m;
    }

    inline MeshData read_obj(std::istream& is, const std::string& path)
    {
        LineReader r(is, path);
        std::string line;
        std::vector<Vec3> verts;
        std::vector<std::vector<int>> polys;
        std::vector<std::size_t> poly_lines;
        while (r.next(line)) {
            std::istringstream ls(line);
            std::string tag;
            ls >> tag;
            if (tag == "v") {
                Vec3 p;
                if (!(ls >> p.x() >> p.y() >> p.z())) {
                    r.fail("malformed vertex");
                }
                verts.push_back(p);
            } else if (tag == "f") {
                std::vector<int> poly;
                std::string tok;
                while (ls >> tok) {
                    // v, v/vt, v//vn, v/vt/vn
                    int idx = 0;
                    try {
                        std::size_t used = 0;
                        idx = std::stoi(tok, &used);
                        if (used != tok.size() && tok[used] != '/') {
                            r.fail("malformed face index '" + tok + "'");
                        }
                    } catch (const std::logic_error&) {
                        r.fail("malformed face index '" + tok + "'");
                    }
                    if (idx == 0) {
                        r.fail("face index 0 is invalid in OBJ");
                    }
                    // negative indices are relative to the vertices read so far
                    poly.push_back(idx > 0 ? idx - 1 : static_cast<int>(verts.size()) + idx);
                }
                polys.push_back(std::move(poly));
                poly_lines.push_back(r.line());
            }
            // vt, vn, g, o, s, usemtl, mtllib ignored
        }
        MeshData m;
        m.points.resize(static_cast<Eigen::Index>(verts.size()), 3);
        for (std::size_t i = 0; i < verts.size(); ++i) {
            m.points.row(i) = verts[i].transpose();
        }
        for (std::size_t f = 0; f < polys.size(); ++f) {
            if (polys[f].size() < 3) {
                throw ParseError(path, poly_lines[f], "face with fewer than 3 vertices");
            }
            for (int v : polys[f]) {
                if (v < 0 || v >= m.points.rows()) {
                    throw ParseError(path, poly_lines[f], "face index out of range");
                }
            }
            add_polygon(polys[f], m.faces, r);
        }
        return m;
    }

    inline MeshData read_ply(std::istream& is, const std::string& path)
    {
        // header is read line by line without comment stripping ('comment' is a keyword)
        std::string line;
        std::size_t lineno = 0;
        auto getline = [&](std::string& l) {
            if (!std::getline(is, l)) {
                return false;
            }
            ++lineno;
            if (!l.empty() && l.back() == '\r') {
                l.pop_back();
            }
            return true;
        };
        auto fail = [&](const std::string& what) { throw ParseError(path, lineno, what); };
        if (!getline(line) || line != "ply") {
            fail("expected 'ply' magic");
        }
        struct Element {
            std::string name;
            long count = 0;
            std::vector<std::string> props; // "list" entries are stored as "list:<name>"
        };
        std::vector<Element> elements;
        bool ascii = false;
        for (;;) {
            if (!getline(line)) {
                fail("unterminated header");
            }
            std::istringstream ls(line);
            std::string kw;
            ls >> kw;
            if (kw == "end_header") {
                break;
            }
            if (kw == "format") {
                std::string f;
                ls >> f;
                if (f == "binary_little_endian" || f == "binary_big_endian") {
                    throw UnsupportedInput(path + ": binary PLY is not supported");
                }
                if (f != "ascii") {
                    fail("unknown PLY format '" + f + "'");
                }
                ascii = true;
            } else if (kw == "element") {
                Element e;
                if (!(ls >> e.name >> e.count) || e.count < 0) {
                    fail("malformed element line");
                }
                elements.push_back(e);
            } else if (kw == "property") {
                if (elements.empty()) {
                    fail("property before element");
                }
                std::string type, name;
                ls >> type;
                if (type == "list") {
                    std::string ct, it;
                    ls >> ct >> it >> name;
                    elements.back().props.push_back("list:" + name);
                } else {
                    ls >> name;
                    elements.back().props.push_back(name);
                }
            } else if (kw != "comment" && kw != "obj_info" && !kw.empty()) {
                fail("unknown header keyword '" + kw + "'");
            }
        }
        if (!ascii) {
            fail("missing format line");
        }
        MeshData m;
        std::vector<int> poly;
        for (const auto& e : elements) {
            int ix = -1, iy = -1, iz = -1, ilist = -1;
            for (std::size_t k = 0; k < e.props.size(); ++k) {
                const auto& p = e.props[k];
                if (p == "x") {
                    ix = static_cast<int>(k);
                } else if (p == "y") {
                    iy = static_cast<int>(k);
                } else if (p == "z") {
                    iz = static_cast<int>(k);
                } else if (p == "list:vertex_indices" || p == "list:vertex_index") {
                    ilist = static_cast<int>(k);
                }
            }
            if (e.name == "vertex") {
                if (ix < 0 || iy < 0 || iz < 0) {
                    fail("vertex element lacks x/y/z");
                }
                m.points.resize(e.count, 3);
            }
            for (long i = 0; i < e.count; ++i) {
                if (!getline(line)) {
                    fail("expected " + std::to_string(e.count) + " " + e.name + " records");
                }
                std::istringstream ls(line);
                for (std::size_t k = 0; k < e.props.size(); ++k) {
                    if (e.props[k].rfind("list:", 0) == 0) {
                        int cnt = 0;
                        if (!(ls >> cnt) || cnt < 0) {
                            fail("malformed list property");
                        }
                        std::vector<int> vals(static_cast<std::size_t>(cnt));
                        for (int j = 0; j < cnt; ++j) {
                            if (!(ls >> vals[j])) {
                                fail("list shorter than declared");
                            }
                        }
                        if (static_cast<int>(k) == ilist && e.name == "face") {
                            poly = vals;
                        }
                    } else {
                        double v = 0.0;
                        if (!(ls >> v)) {
                            fail("malformed " + e.name + " record");
                        }
                        if (e.name == "vertex") {
                            if (static_cast<int>(k) == ix) {
                                m.points(i, 0) = v;
                            } else if (static_cast<int>(k) == iy) {
                                m.points(i, 1) = v;
                            } else if (static_cast<int>(k) == iz) {
                                m.points(i, 2) = v;
                            }
                        }
                    }
                }
                if (e.name == "face") {
                    if (poly.size() < 3) {
                        fail("face with fewer than 3 vertices");
                    }
                    for (int v : poly) {
                        if (v < 0 || v >= m.points.rows()) {
                            fail("face index out of range");
                        }
                    }
                    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
                        m.faces.push_back({poly[0], poly[k], poly[k + 1]});
                    }
                }
            }
        }
        return m;
    }

    inline void put(std::ostream& os, double v)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
    }

    inline void put_row(std::ostream& os, const Points& p, Eigen::Index i)
    {
        put(os, p(i, 0));
        os << ' ';
        put(os, p(i, 1));
        os << ' ';
        put(os, p(i, 2));
    }

} // namespace detail

inline MeshData read_mesh(const fs::path& path)
{
    const MeshFormat f = format_from_path(path);
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot open " + path.string());
    }
    switch (f) {
    case MeshFormat::Obj:
        return detail::read_obj(is, path.string());
    case MeshFormat::Ply:
        return detail::read_ply(is, path.string());
    default:
        return detail::read_off(is, path.string());
    }
}

/// Mesh when the file has faces, otherwise a point cloud with a kNN graph (k = 6).
inline Shape load_shape(const fs::path& path)
{
    MeshData m = read_mesh(path);
    if (m.points.rows() < 4) {
        throw ParseError(path.string(), 0, "need at least 4 vertices, got " + std::to_string(m.points.rows()));
    }
    if (m.faces.empty()) {
        return build_knn_graph(m.points, kPointCloudNeighbours);
    }
    return Shape::from_mesh(std::move(m.points), std::move(m.faces));
}

inline void write_mesh(std::ostream& os, MeshFormat f, const Points& p, const std::vector<Triangle>& faces)
{
    const Eigen::Index n = p.rows();
    switch (f) {
    case MeshFormat::Obj:
        for (Eigen::Index i = 0; i < n; ++i) {
            os << "v ";
            detail::put_row(os, p, i);
            os << '\n';
        }
        for (const auto& t : faces) {
            os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
        }
        break;
    case MeshFormat::Ply:
        os << "ply\nformat ascii 1.0\nelement vertex " << n
           << "\nproperty double x\nproperty double y\nproperty double z\n";
        os << "element face " << faces.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
        for (Eigen::Index i = 0; i < n; ++i) {
            detail::put_row(os, p, i);
            os << '\n';
        }
        for (const auto& t : faces) {
            os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
        }
        break;
    default:
        os << "OFF\n" << n << ' ' << faces.size() << " 0\n";
        for (Eigen::Index i = 0; i < n; ++i) {
            detail::put_row(os, p, i);
            os << '\n';
        }
        for (const auto& t : faces) {
            os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
        }
    }
}

inline void save_mesh(const fs::path& path, const Points& p, const std::vector<Triangle>& faces)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    write_mesh(os, format_from_path(path), p, faces);
    os.flush();
    if (!os) {
        throw Error("write failed: " + path.string());
    }
}

inline void save_shape(const fs::path& path, const Shape& s) { save_mesh(path, s.points(), s.faces()); }

// --- correspondences ---------------------------------------------------------------

struct CorrespondenceMap {
    std::vector<int> map; // 0-based target index, -1 = unmatched
    int matched = 0;
    int duplicate_targets = 0; // target vertices hit more than once
    double matched_fraction() const { return map.empty() ? 0.0 : double(matched) / double(map.size()); }
    std::vector<bool> mask() const
    {
        std::vector<bool> m(map.size());
        for (std::size_t i = 0; i < map.size(); ++i) {
            m[i] = map[i] >= 0;
        }
        return m;
    }
};

inline CorrespondenceMap summarize_correspondences(std::vector<int> map, int m)
{
    CorrespondenceMap c;
    c.map = std::move(map);
    std::vector<int> hits(static_cast<std::size_t>(std::max(m, 0)), 0);
    for (int j : c.map) {
        if (j >= 0) {
            ++c.matched;
            if (j < m && ++hits[j] == 2) {
                ++c.duplicate_targets;
            }
        }
    }
    return c;
}

/// Format: a header line `correspondences base <0|1> unmatched -1 count <n>`, then one target
/// index per line.
inline CorrespondenceMap read_correspondences(std::istream& is, const std::string& path, int n, int m)
{
    detail::LineReader r(is, path);
    std::string line;
    if (!r.next(line)) {
        r.fail("empty correspondence file");
    }
    std::istringstream hs(line);
    std::string magic, kb, ku, kc;
    int base = -1, unmatched = 0;
    long count = -1;
    hs >> magic >> kb >> base >> ku >> unmatched >> kc >> count;
    if (!hs || magic != "correspondences" || kb != "base" || ku != "unmatched" || kc != "count") {
        r.fail("expected header 'correspondences base <0|1> unmatched -1 count <n>'");
    }
    if (base != 0 && base != 1) {
        r.fail("base must be 0 or 1");
    }
    if (unmatched != -1) {
        r.fail("unmatched marker must be -1");
    }
    if (count != n) {
        r.fail("header count " + std::to_string(count) + " differs from source vertex count " + std::to_string(n));
    }
    std::vector<int> map;
    map.reserve(static_cast<std::size_t>(n));
    while (r.next(line)) {
        std::istringstream ls(line);
        long v = 0;
        std::string extra;
        if (!(ls >> v) || (ls >> extra)) {
            r.fail("expected a single integer");
        }
        if (static_cast<long>(map.size()) >= n) {
            r.fail("more than " + std::to_string(n) + " records");
        }
        if (v == unmatched) {
            map.push_back(-1);
            continue;
        }
        const long idx = v - base;
        if (idx < 0 || idx >= m) {
            r.fail("target index " + std::to_string(v) + " out of range for " + std::to_string(m) + " targets");
        }
        map.push_back(static_cast<int>(idx));
    }
    if (static_cast<int>(map.size()) != n) {
        r.fail("found " + std::to_string(map.size()) + " records, expected " + std::to_string(n));
    }
    CorrespondenceMap c = summarize_correspondences(std::move(map), m);
    if (c.matched == 0) {
        r.fail("no matched vertices; the data term would be empty");
    }
    return c;
}

inline CorrespondenceMap load_correspondences(const fs::path& path, int n, int m)
{
    std::ifstream is(path);
    if (!is) {
        throw UsageError("cannot open correspondence file " + path.string());
    }
    return read_correspondences(is, path.string(), n, m);
}

inline void write_correspondences(std::ostream& os, const std::vector<int>& map, int base = 0)
{
    os << "correspondences base " << base << " unmatched -1 count " << map.size() << '\n';
    for (int j : map) {
        os << (j < 0 ? -1 : j + base) << '\n';
    }
}

inline void save_correspondences(const fs::path& path, const std::vector<int>& map, int base = 0)
{
    std::ofstream os(path);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    write_correspondences(os, map, base);
    if (!os) {
        throw Error("write failed: " + path.string());
    }
}

// --- configuration -----------------------------------------------------------------

inline Json to_json(const OptimConfig& c)
{
    return Json{{"gamma", c.gamma},
                {"iterations", c.iterations},
                {"sigma", c.sigma},
                {"T", c.T},
                {"K", c.K},
                {"inner_iters", c.inner_iters},
                {"lambda_sigma", c.lambda_sigma},
                {"optimizer", c.optimizer == OptimizerKind::Adam ? "adam" : "descent"},
                {"backtracking", c.backtracking},
                {"bb_step", c.bb_step},
                {"optimize_sigma", c.optimize_sigma},
                {"grad_mode", c.grad_mode == GradMode::Reverse ? "reverse" : "fd"},
                {"rotation_gradient", c.rotation_gradient == RotationGradient::Exact ? "exact" : "envelope"},
                {"convention", c.convention == NormConvention::Weight ? "weight" : "mahalanobis"},
                {"potential_weight", c.potential_weight},
                {"sigma_min", c.bounds.min_eig},
                {"sigma_max", c.bounds.max_eig},
                {"grad_tolerance", c.grad_tolerance},
                {"rel_decrease_tolerance", c.rel_decrease_tolerance},
                {"seed", c.seed}};
}

/// Overwrites the fields present in j; unknown keys are rejected.
inline void apply_json(const Json& j, OptimConfig& c)
{
    if (!j.is_object()) {
        throw InvalidArgument("config must be a JSON object");
    }
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "gamma") {
                c.gamma = v.get<double>();
            } else if (key == "iterations") {
                c.iterations = v.get<int>();
            } else if (key == "sigma") {
                c.sigma = v.get<double>();
            } else if (key == "T") {
                c.T = v.get<int>();
            } else if (key == "K") {
                c.K = v.get<int>();
            } else if (key == "inner_iters") {
                c.inner_iters = v.get<int>();
            } else if (key == "lambda_sigma") {
                c.lambda_sigma = v.get<double>();
            } else if (key == "optimizer") {
                const auto s = v.get<std::string>();
                if (s != "adam" && s != "descent") {
                    throw InvalidArgument("optimizer must be 'descent' or 'adam'");
                }
                c.optimizer = s == "adam" ? OptimizerKind::Adam : OptimizerKind::Descent;
            } else if (key == "backtracking") {
                c.backtracking = v.get<bool>();
            } else if (key == "bb_step") {
                c.bb_step = v.get<bool>();
            } else if (key == "optimize_sigma") {
                c.optimize_sigma = v.get<bool>();
            } else if (key == "grad_mode") {
                const auto s = v.get<std::string>();
                if (s != "reverse" && s != "fd") {
                    throw InvalidArgument("grad_mode must be 'reverse' or 'fd'");
                }
                c.grad_mode = s == "fd" ? GradMode::FiniteDifference : GradMode::Reverse;
            } else if (key == "rotation_gradient") {
                const auto s = v.get<std::string>();
                if (s != "exact" && s != "envelope") {
                    throw InvalidArgument("rotation_gradient must be 'exact' or 'envelope'");
                }
                c.rotation_gradient = s == "exact" ? RotationGradient::Exact : RotationGradient::Envelope;
            } else if (key == "convention") {
                const auto s = v.get<std::string>();
                if (s != "weight" && s != "mahalanobis") {
                    throw InvalidArgument("convention must be 'weight' or 'mahalanobis'");
                }
                c.convention = s == "weight" ? NormConvention::Weight : NormConvention::Mahalanobis;
            } else if (key == "potential_weight") {
                c.potential_weight = v.get<double>();
            } else if (key == "sigma_min") {
                c.bounds.min_eig = v.get<double>();
            } else if (key == "sigma_max") {
                c.bounds.max_eig = v.get<double>();
            } else if (key == "grad_tolerance") {
                c.grad_tolerance = v.get<double>();
            } else if (key == "rel_decrease_tolerance") {
                c.rel_decrease_tolerance = v.get<double>();
            } else if (key == "seed") {
                c.seed = v.get<std::uint64_t>();
            } else {
                throw InvalidArgument("unknown config key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("config key '" + key + "': " + e.what());
        }
    }
}

inline Json read_json(const fs::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw UsageError("cannot open " + path.string());
    }
    try {
        return Json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), 0, e.what());
    }
}

inline void write_json(const fs::path& path, const Json& j)
{
    std::ofstream os(path);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << j.dump(2) << '\n';
    if (!os) {
        throw Error("write failed: " + path.string());
    }
}

// --- trajectory export -------------------------------------------------------------

inline std::string frame_name(int t, MeshFormat f)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04d", t);
    return std::string(buf) + extension(f);
}

/// Writes frames[first..] as frame_%04d files (numbered from `first_index`) and, when
/// metadata is non-null, metadata.json next to them.
inline std::vector<fs::path> export_frames(const std::vector<Points>& frames, const std::vector<Triangle>& faces,
                                           const fs::path& dir, MeshFormat f, int first_index = 0)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error("cannot create " + dir.string() + ": " + ec.message());
    }
    std::vector<fs::path> out;
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const fs::path p = dir / frame_name(first_index + static_cast<int>(t), f);
        save_mesh(p, frames[t], faces);
        out.push_back(p);
    }
    return out;
}

/// Frames of a trajectory plus metadata (config, seed, per-frame H and volume, solve stats).
inline std::vector<fs::path> export_trajectory(const Trajectory& traj, const std::vector<Triangle>& faces,
                                               const fs::path& dir, MeshFormat f, Json metadata)
{
    auto files = export_frames(traj.frames, faces, dir, f);
    const auto& rep = traj.report;
    metadata["frame_count"] = traj.frames.size();
    metadata["format"] = extension(f) + 1;
    metadata["hamiltonian"] = rep.hamiltonian;
    metadata["volume"] = rep.volume;
    metadata["solve"] = Json{{"inner_iterations", rep.inner_iterations},
                             {"outside_counts", rep.outside_counts},
                             {"degenerate_rotations", rep.degenerate_rotations},
                             {"ridge_fallbacks", rep.ridge_fallbacks},
                             {"dense_fallbacks", rep.dense_fallbacks},
                             {"pcg_iterations", rep.pcg_iterations},
                             {"newton_unconverged", rep.newton_unconverged}};
    write_json(dir / "metadata.json", metadata);
    return files;
}

/// Sorted frame_XXXX files of a directory.
inline std::vector<fs::path> list_frames(const fs::path& dir)
{
    if (!fs::is_directory(dir)) {
        throw UsageError("not a directory: " + dir.string());
    }
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.rfind("frame_", 0) == 0) {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace hamshape
