#include "hamshape/metrics.hpp"
#include "hamshape/shapes.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace hamshape;
using namespace testutil;

namespace {

Points apply(const Points& p, const Mat3& a)
{
    Points out(p.rows(), 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        out.row(i) = (a * Vec3(p.row(i).transpose())).transpose();
    }
    return out;
}

// flat 4x4 vertex patch in the xy plane
Shape flat_patch()
{
    Points p(16, 3);
    std::vector<Triangle> f;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            p.row(i * 4 + j) << i * 0.3, j * 0.2 + 0.05 * i, 0.0;
        }
    }
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            const int a = i * 4 + j;
            f.push_back({a, a + 4, a + 5});
            f.push_back({a, a + 5, a + 1});
        }
    }
    return Shape::from_mesh(p, f);
}

double brute_chamfer(const Points& a, const Points& b, double diam)
{
    auto one_way = [](const Points& x, const Points& y) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < y.rows(); ++j) {
                best = std::min(best, (x.row(i) - y.row(j)).norm());
            }
            s += best;
        }
        return s / x.rows();
    };
    return 100.0 * 0.5 * (one_way(a, b) + one_way(b, a)) / diam;
}

} // namespace

TEST(Conformal, SimilaritiesGiveExactlyTwoUpToRounding)
{
    const Shape s = shapes::icosphere(3);
    std::mt19937_64 rng(1);
    for (const Mat3& a : {Mat3(Mat3::Identity()), Mat3(3.0 * Mat3::Identity()), Mat3(0.7 * random_rotation(rng))}) {
        const auto r = conformal_distortion(s.points(), s.faces(), apply(s.points(), a));
        ASSERT_EQ(r.values.size(), s.faces().size());
        EXPECT_EQ(r.excluded, 0);
        for (double v : r.values) {
            EXPECT_NEAR(v, 2.0, 1e-12);
        }
    }
}

TEST(Conformal, AnisotropicStretchOfFlatPatch)
{
    const Shape s = flat_patch();
    const Mat3 a = Vec3(2.0, 1.0, 1.0).asDiagonal();
    const auto r = conformal_distortion(s.points(), s.faces(), apply(s.points(), a));
    for (double v : r.values) {
        EXPECT_NEAR(v, 2.5, 1e-12);
    }
    EXPECT_NEAR(r.mean, 2.5, 1e-12);
}

TEST(Conformal, ScaleInvariantAndBoundedBelow)
{
    const Shape s = shapes::icosphere(2);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 0.05);
    Points d = s.points();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        d.data()[i] += g(rng);
    }
    const auto a = conformal_distortion(s.points(), s.faces(), d);
    const auto b = conformal_distortion(s.points(), s.faces(), apply(d, 4.0 * random_rotation(rng)));
    const auto c = conformal_distortion(apply(s.points(), 0.1 * Mat3::Identity()), s.faces(), d);
    for (std::size_t f = 0; f < a.values.size(); ++f) {
        EXPECT_GE(a.values[f], 2.0 - 1e-12);
        EXPECT_NEAR(a.values[f], b.values[f], 1e-10 * a.values[f]);
        EXPECT_NEAR(a.values[f], c.values[f], 1e-10 * a.values[f]);
    }
}

TEST(Conformal, DegenerateRestTrianglesAreExcludedAndCounted)
{
    Points p(5, 3);
    p << 0, 0, 0, 1, 0, 0, 0, 1, 0, 2, 0, 0, 0, 0, 1;
    // (0,1,3) is collinear
    const std::vector<Triangle> f{{0, 1, 2}, {0, 1, 3}, {0, 2, 4}};
    const auto r = conformal_distortion(p, f, p);
    EXPECT_EQ(r.excluded, 1);
    EXPECT_TRUE(std::isnan(r.values[1]));
    EXPECT_NEAR(r.values[0], 2.0, 1e-12);
    EXPECT_NEAR(r.mean, 2.0, 1e-12);
}

TEST(VolumeChange, RigidMotionsAreZeroAndScaleIsCubic)
{
    const Shape s = shapes::icosphere(4);
    std::mt19937_64 rng(3);
    std::vector<Points> frames{s.points()};
    for (int k = 0; k < 4; ++k) {
        frames.push_back(rigid(s.points(), random_rotation(rng), Vec3::Random()));
    }
    for (double v : volume_change(frames, s.faces())) {
        EXPECT_LE(v, 1e-9);
    }
    for (double sc : {0.5, 1.3, 2.0}) {
        const auto v = volume_change({s.points(), apply(s.points(), sc * Mat3::Identity())}, s.faces());
        EXPECT_NEAR(v[1], std::abs(sc * sc * sc - 1.0), 1e-12);
    }
}

TEST(VolumeChange, InvariantUnderPerFrameRigidMotion)
{
    const Shape s = shapes::icosphere(3);
    std::mt19937_64 rng(4);
    std::vector<Points> frames{s.points(), apply(s.points(), Vec3(1.2, 0.9, 1.0).asDiagonal())};
    std::vector<Points> moved;
    for (const auto& f : frames) {
        moved.push_back(rigid(f, random_rotation(rng), Vec3::Random()));
    }
    const auto a = volume_change(frames, s.faces());
    const auto b = volume_change(moved, s.faces());
    for (std::size_t t = 0; t < a.size(); ++t) {
        EXPECT_NEAR(a[t], b[t], 1e-12);
    }
}

TEST(Chamfer, DefinitionExamples)
{
    const Shape s = shapes::icosphere(2);
    EXPECT_EQ(chamfer_pct(s.points(), s.points(), 2.0), 0.0);
    Points a(1, 3), b(1, 3);
    a << 0, 0, 0;
    b << 0.3, 0.4, 0;
    EXPECT_NEAR(chamfer_pct(a, b, 0.5), 100.0, 1e-12);
    EXPECT_THROW(chamfer_pct(a, b, 0.0), InvalidArgument);
}

TEST(Chamfer, MatchesBruteForceAndIsSymmetric)
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const Points a = random_points(40 + trial * 7, rng);
        const Points b = random_points(55 - trial * 3, rng, -0.5, 1.5);
        const double c = chamfer_pct(a, b, 3.0);
        EXPECT_NEAR(c, brute_chamfer(a, b, 3.0), 1e-12 * c);
        EXPECT_NEAR(c, chamfer_pct(b, a, 3.0), 1e-12 * c);
        EXPECT_GT(c, 0.0);
    }
}

TEST(Curves, MonotoneFractionsInUnitInterval)
{
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(2.0, 5.0);
    std::vector<double> v(300);
    for (double& x : v) {
        x = u(rng);
    }
    v[7] = std::numeric_limits<double>::quiet_NaN();
    const Curve c = cumulative_curve("conformal", v, 2.0);
    ASSERT_EQ(c.points.size(), 256u);
    EXPECT_EQ(c.points.front().first, 2.0);
    EXPECT_EQ(c.points.back().second, 1.0);
    for (std::size_t i = 1; i < c.points.size(); ++i) {
        EXPECT_GT(c.points[i].first, c.points[i - 1].first);
        EXPECT_GE(c.points[i].second, c.points[i - 1].second);
        EXPECT_GE(c.points[i].second, 0.0);
        EXPECT_LE(c.points[i].second, 1.0);
    }
}

TEST(Curves, AllZeroSamplesStepAtZero)
{
    const Curve c = cumulative_curve("chamfer_pct", std::vector<double>(10, 0.0), 0.0);
    for (const auto& [th, fr] : c.points) {
        EXPECT_EQ(fr, 1.0) << th;
    }
}

TEST(Report, SequenceStatisticsAndRoundTrip)
{
    const Shape s = shapes::icosphere(3);
    const Points tgt = apply(s.points(), shapes::volume_preserving_stretch(1.2));
    std::vector<Points> frames;
    for (int t = 0; t <= 4; ++t) {
        const double a = t / 4.0;
        frames.push_back((1 - a) * s.points() + a * tgt);
    }
    const MetricReport r = evaluate_sequence(frames, s.faces(), tgt);
    ASSERT_EQ(r.frames.size(), 5u);
    EXPECT_FALSE(r.open_mesh);
    EXPECT_EQ(r.frames[0].volume_change, 0.0);
    EXPECT_NEAR(r.frames[0].conformal_max, 2.0, 1e-12);
    EXPECT_EQ(r.frames[4].chamfer_pct, 0.0);
    EXPECT_NEAR(r.frames[2].chamfer_pct,
                chamfer_pct(frames[2], tgt, diameter_of(tgt).value), 1e-15);
    ASSERT_EQ(r.curves.size(), 3u);

    const MetricReport back = parse_report(format_report(r));
    ASSERT_EQ(back.frames.size(), r.frames.size());
    for (std::size_t t = 0; t < r.frames.size(); ++t) {
        EXPECT_EQ(back.frames[t].conformal_mean, r.frames[t].conformal_mean);
        EXPECT_EQ(back.frames[t].conformal_max, r.frames[t].conformal_max);
        EXPECT_EQ(back.frames[t].volume_change, r.frames[t].volume_change);
        EXPECT_EQ(back.frames[t].chamfer_pct, r.frames[t].chamfer_pct);
    }
    ASSERT_EQ(back.curves.size(), r.curves.size());
    for (std::size_t c = 0; c < r.curves.size(); ++c) {
        EXPECT_EQ(back.curves[c].name, r.curves[c].name);
        EXPECT_EQ(back.curves[c].points, r.curves[c].points);
    }
    EXPECT_EQ(back.diameter, r.diameter);
}

TEST(Report, OpenMeshIsFlagged)
{
    const Shape p = flat_patch();
    const MetricReport r = evaluate_sequence({p.points(), p.points()}, p.faces(), p.points());
    EXPECT_TRUE(r.open_mesh);
}

TEST(Report, ParseErrorsCarryLineNumbers)
{
    try {
        parse_report("# header\nframe 0 conformal_mean 2\n");
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(parse_report("bogus 1 2\n"), ParseError);
}
