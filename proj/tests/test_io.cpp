#include "hamshape/io.hpp"
#include "hamshape/shapes.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

using namespace hamshape;
using namespace testutil;

namespace {

const fs::path data_dir = HAMSHAPE_TEST_DATA;

class TempDir {
public:
    TempDir()
    {
        static int counter = 0;
        path_ = fs::temp_directory_path()
                / ("hamshape_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

CorrespondenceMap read_corr(const std::string& text, int n, int m)
{
    std::istringstream is(text);
    return read_correspondences(is, "<mem>", n, m);
}

} // namespace

TEST(Load, CubeOff)
{
    const Shape s = load_shape(data_dir / "cube.off");
    EXPECT_EQ(s.size(), 8);
    EXPECT_EQ(s.faces().size(), 12u);
    EXPECT_NEAR(signed_volume(s), 1.0, 1e-15);
    EXPECT_EQ(boundary_edge_count(s.faces()), 0);
}

TEST(Load, QuadObjIsFanTriangulated)
{
    const Shape s = load_shape(data_dir / "cube_quads.obj");
    EXPECT_EQ(s.size(), 8);
    EXPECT_EQ(s.faces().size(), 12u); // 6 quads
    EXPECT_NEAR(signed_volume(s), 1.0, 1e-15);
    EXPECT_EQ(boundary_edge_count(s.faces()), 0);
}

TEST(Load, VertexOnlyObjFallsBackToKnn)
{
    const Shape s = load_shape(data_dir / "cloud.obj");
    EXPECT_EQ(s.size(), 10);
    EXPECT_FALSE(s.has_faces());
    for (const auto& nb : s.neighbors()) {
        EXPECT_GE(nb.size(), static_cast<std::size_t>(kPointCloudNeighbours));
    }
}

TEST(Load, AsciiPly)
{
    const Shape s = load_shape(data_dir / "cube.ply");
    EXPECT_EQ(s.size(), 8);
    EXPECT_EQ(s.faces().size(), 12u);
    EXPECT_NEAR(signed_volume(s), 1.0, 1e-15);
}

TEST(Load, BinaryPlyIsUnsupported) { EXPECT_THROW(load_shape(data_dir / "binary.ply"), UnsupportedInput); }

TEST(Load, CountMismatchReportsLine)
{
    try {
        load_shape(data_dir / "bad_count.off");
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 5u); // last line read before running out of vertices
        EXPECT_NE(std::string(e.what()).find("bad_count.off"), std::string::npos);
    }
}

TEST(Load, MalformedInputs)
{
    const std::vector<std::pair<std::string, std::string>> cases{
        {"OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 7\n", "off"},
        {"OFX\n", "off"},
        {"OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\nextra\n", "off"},
        {"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 9\n", "obj"},
        {"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2\n", "obj"},
        {"v 0 0\n", "obj"},
        {"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n0\n", "ply"},
    };
    TempDir tmp;
    int k = 0;
    for (const auto& [text, ext] : cases) {
        const fs::path p = tmp.path() / ("bad" + std::to_string(k++) + "." + ext);
        std::ofstream(p) << text;
        EXPECT_THROW(load_shape(p), ParseError) << text;
    }
}

TEST(Save, RoundTripIsBitExactForEveryFormat)
{
    std::mt19937_64 rng(1);
    const Shape s = shapes::icosphere(3);
    Points p = s.points();
    std::normal_distribution<double> g;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        p.data()[i] += 1e-3 * g(rng) + 1e-17;
    }
    TempDir tmp;
    for (const char* ext : {".off", ".obj", ".ply"}) {
        const fs::path f = tmp.path() / (std::string("rt") + ext);
        save_mesh(f, p, s.faces());
        const MeshData m = read_mesh(f);
        EXPECT_EQ(m.points, p) << ext;
        EXPECT_EQ(m.faces, s.faces()) << ext;
        // saving the reloaded mesh gives the same bytes
        const fs::path f2 = tmp.path() / (std::string("rt2") + ext);
        save_mesh(f2, m.points, m.faces);
        std::ifstream a(f), b(f2);
        std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
        EXPECT_EQ(sa, sb);
    }
}

TEST(Correspondences, IdentityAndBaseConversion)
{
    const auto a = load_correspondences(data_dir / "identity5.corr", 5, 5);
    const auto b = load_correspondences(data_dir / "identity5_base1.corr", 5, 5);
    EXPECT_EQ(a.map, (std::vector<int>{0, 1, 2, 3, 4}));
    EXPECT_EQ(a.map, b.map);
    EXPECT_EQ(a.matched, 5);
    EXPECT_EQ(a.matched_fraction(), 1.0);
    EXPECT_EQ(a.duplicate_targets, 0);
    for (bool m : a.mask()) {
        EXPECT_TRUE(m);
    }
}

TEST(Correspondences, UnmatchedAndDuplicates)
{
    const auto c = read_corr("correspondences base 0 unmatched -1 count 4\n2\n-1\n2\n0\n", 4, 3);
    EXPECT_EQ(c.map, (std::vector<int>{2, -1, 2, 0}));
    EXPECT_EQ(c.matched, 3);
    EXPECT_EQ(c.duplicate_targets, 1);
    EXPECT_FALSE(c.mask()[1]);
}

TEST(Correspondences, Rejections)
{
    EXPECT_THROW(read_corr("correspondences base 0 unmatched -1 count 2\n-1\n-1\n", 2, 3), ParseError);
    EXPECT_THROW(read_corr("correspondences base 0 unmatched -1 count 3\n0\n1\n", 3, 3), ParseError);
    EXPECT_THROW(read_corr("correspondences base 0 unmatched -1 count 2\n0\n1\n2\n", 2, 3), ParseError);
    EXPECT_THROW(read_corr("correspondences base 0 unmatched -1 count 3\n0\n1\n2\n", 2, 3), ParseError);
    EXPECT_THROW(read_corr("correspondences base 2 unmatched -1 count 1\n0\n", 1, 3), ParseError);
    EXPECT_THROW(read_corr("correspondences base 0 unmatched -2 count 1\n0\n", 1, 3), ParseError);
    EXPECT_THROW(read_corr("0\n1\n", 2, 3), ParseError);
    EXPECT_THROW(read_corr("correspondences base 1 unmatched -1 count 1\n0\n", 1, 3), ParseError);
    EXPECT_THROW(read_corr("correspondences base 0 unmatched -1 count 1\n1.5\n", 1, 3), ParseError);
    EXPECT_THROW(load_correspondences(data_dir / "missing.corr", 1, 1), UsageError);
}

TEST(Correspondences, FuzzOutOfRangeIsAlwaysRejected)
{
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 20);
        const int m = 1 + static_cast<int>(rng() % 20);
        const int base = static_cast<int>(rng() % 2);
        std::vector<int> map(static_cast<std::size_t>(n));
        for (int& j : map) {
            j = static_cast<int>(rng() % m);
        }
        const int bad = static_cast<int>(rng() % n);
        std::ostringstream os;
        os << "correspondences base " << base << " unmatched -1 count " << n << '\n';
        for (int i = 0; i < n; ++i) {
            long v = map[i] + base;
            if (i == bad) {
                // above the range, or below it without being the unmatched marker
                v = (rng() % 2) ? m + base + static_cast<long>(rng() % 5) : -2 - static_cast<long>(rng() % 5);
                if (base == 1 && v == -2 && rng() % 2) {
                    v = 0;
                }
            }
            os << v << '\n';
        }
        EXPECT_THROW(read_corr(os.str(), n, m), ParseError) << os.str();
    }
}

TEST(Correspondences, WriteReadRoundTrip)
{
    const std::vector<int> map{4, -1, 0, 2, 2};
    for (int base : {0, 1}) {
        std::ostringstream os;
        write_correspondences(os, map, base);
        EXPECT_EQ(read_corr(os.str(), 5, 5).map, map);
    }
}

TEST(Config, JsonRoundTripAndValidation)
{
    OptimConfig c;
    c.K = 60;
    c.T = 9;
    c.gamma = 0.125;
    c.optimizer = OptimizerKind::Adam;
    c.grad_mode = GradMode::FiniteDifference;
    c.convention = NormConvention::Mahalanobis;
    c.seed = 1234567890123ULL;
    OptimConfig d;
    apply_json(to_json(c), d);
    EXPECT_EQ(to_json(d), to_json(c));
    EXPECT_THROW(apply_json(Json{{"bogus", 1}}, d), InvalidArgument);
    EXPECT_THROW(apply_json(Json{{"K", "many"}}, d), InvalidArgument);
    EXPECT_THROW(apply_json(Json{{"optimizer", "newton"}}, d), InvalidArgument);
    EXPECT_THROW(apply_json(Json::array(), d), InvalidArgument);
}

TEST(Export, FrameCountMetadataAndReload)
{
    const Shape s = shapes::icosphere(2, 0.3, Vec3::Constant(0.5));
    Trajectory traj;
    traj.tau = 1.0 / 15;
    for (int t = 0; t <= 15; ++t) {
        traj.frames.push_back(s.points() * (1.0 + 0.01 * t));
        traj.report.hamiltonian.push_back(0.5 * t);
    }
    TempDir tmp;
    const auto files = export_trajectory(traj, s.faces(), tmp.path() / "run", MeshFormat::Off, Json{{"seed", 3}});
    EXPECT_EQ(files.size(), 16u);
    EXPECT_EQ(list_frames(tmp.path() / "run"), files);
    EXPECT_EQ(files.front().filename(), "frame_0000.off");
    EXPECT_EQ(files.back().filename(), "frame_0015.off");
    EXPECT_EQ(load_shape(files.front()).points(), s.points());
    const Json meta = read_json(tmp.path() / "run" / "metadata.json");
    EXPECT_EQ(meta.at("seed").get<int>(), 3);
    EXPECT_EQ(meta.at("frame_count").get<int>(), 16);
    EXPECT_EQ(meta.at("hamiltonian").size(), 16u);
}

TEST(Export, WriteFailureNamesThePath)
{
    TempDir tmp;
    const fs::path blocker = tmp.path() / "file";
    std::ofstream(blocker) << "x";
    try {
        export_frames({Points::Zero(4, 3)}, {}, blocker / "sub", MeshFormat::Off);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("file"), std::string::npos);
    }
}
