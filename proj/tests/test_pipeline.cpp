#include "hamshape/pipeline.hpp"
#include "hamshape/shapes.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

using namespace hamshape;
using namespace testutil;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

class PipelineTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        static int counter = 0;
        dir_ = fs::temp_directory_path()
               / ("hamshape_pipe_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(dir_);
        const Shape s = shapes::icosphere(4, 0.5, Vec3(0.2, -0.1, 0.3));
        faces_ = s.faces();
        source_ = s.points();
        save_mesh(dir_ / "source.off", source_, faces_);
        std::vector<int> id(static_cast<std::size_t>(s.size()));
        std::iota(id.begin(), id.end(), 0);
        save_correspondences(dir_ / "identity.corr", id);

        const Mat3 a = shapes::volume_preserving_stretch(1.2);
        Points t = source_;
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
            t.row(i) = (a * Vec3(t.row(i).transpose())).transpose();
        }
        save_mesh(dir_ / "stretched.off", t, faces_);

        cfg_.optim.K = 30;
        cfg_.optim.T = 4;
        cfg_.optim.iterations = 4;
        cfg_.optim.inner_iters = 2;
        cfg_.full_resolution = true;
        cfg_.resolution = 100;
    }
    void TearDown() override
    {
        std::error_code ec;
        fs::remove_all(dir_, ec);
    }

    fs::path dir_;
    Points source_;
    std::vector<Triangle> faces_;
    RunConfig cfg_;
};

} // namespace

TEST_F(PipelineTest, IdenticalShapesGiveZeroChamfer)
{
    cfg_.out = dir_ / "same";
    const auto o = run_interpolate(dir_ / "source.off", dir_ / "source.off", dir_ / "identity.corr", cfg_);
    EXPECT_LT(o.metrics.last().chamfer_pct, 1e-9);
    EXPECT_LT(o.metrics.max_volume_change(), 1e-9);
    EXPECT_EQ(list_frames(cfg_.out).size(), 5u);
    for (const char* f : {"metadata.json", "metrics.txt", "correspondences.txt", "timing.json"}) {
        EXPECT_TRUE(fs::is_regular_file(cfg_.out / f)) << f;
    }
}

TEST_F(PipelineTest, StretchRunReducesMismatchAndIsReproducible)
{
    cfg_.out = dir_ / "a";
    const auto o = run_interpolate(dir_ / "source.off", dir_ / "stretched.off", dir_ / "identity.corr", cfg_);
    EXPECT_FALSE(o.result.diverged);
    EXPECT_LT(o.metrics.last().chamfer_pct, o.metrics.frames.front().chamfer_pct);
    EXPECT_EQ(o.frames.size(), 5u);
    EXPECT_EQ(o.frames.front(), load_shape(dir_ / "source.off").points());

    cfg_.out = dir_ / "b";
    run_interpolate(dir_ / "source.off", dir_ / "stretched.off", dir_ / "identity.corr", cfg_);
    EXPECT_EQ(slurp(dir_ / "a" / "metrics.txt"), slurp(dir_ / "b" / "metrics.txt"));
    for (int t = 0; t <= 4; ++t) {
        const auto name = frame_name(t, MeshFormat::Off);
        EXPECT_EQ(slurp(dir_ / "a" / name), slurp(dir_ / "b" / name)) << name;
    }
    // the recorded paths differ only through --out, which metadata does not store
    EXPECT_EQ(slurp(dir_ / "a" / "metadata.json"), slurp(dir_ / "b" / "metadata.json"));

    // rerunning into an existing directory replaces it without leftovers
    cfg_.out = dir_ / "a";
    run_interpolate(dir_ / "source.off", dir_ / "stretched.off", dir_ / "identity.corr", cfg_);
    EXPECT_FALSE(fs::exists(dir_ / "a.tmp"));
    EXPECT_FALSE(fs::exists(dir_ / "a.old"));
    EXPECT_EQ(list_frames(dir_ / "a").size(), 5u);
}

TEST_F(PipelineTest, MissingInputsAreUsageErrorsAndWriteNothing)
{
    cfg_.out = dir_ / "never";
    EXPECT_THROW(run_interpolate(dir_ / "source.off", dir_ / "source.off", dir_ / "nope.corr", cfg_), UsageError);
    EXPECT_THROW(run_interpolate(dir_ / "nope.off", dir_ / "source.off", dir_ / "identity.corr", cfg_), UsageError);
    EXPECT_FALSE(fs::exists(cfg_.out));
    cfg_.resolution = 50;
    EXPECT_THROW(run_interpolate(dir_ / "source.off", dir_ / "source.off", dir_ / "identity.corr", cfg_), UsageError);
    EXPECT_FALSE(fs::exists(cfg_.out));
    EXPECT_THROW(load_run(dir_), UsageError);
}

TEST_F(PipelineTest, MetricsCommandMatchesLibrary)
{
    cfg_.out = dir_ / "run";
    const auto o = run_interpolate(dir_ / "source.off", dir_ / "stretched.off", dir_ / "identity.corr", cfg_);
    const auto rep = run_metrics(cfg_.out, dir_ / "stretched.off", dir_ / "m.txt");
    const auto direct = evaluate_sequence(o.frames, faces_, load_shape(dir_ / "stretched.off").points());
    ASSERT_EQ(rep.frames.size(), direct.frames.size());
    for (std::size_t t = 0; t < rep.frames.size(); ++t) {
        EXPECT_NEAR(rep.frames[t].chamfer_pct, direct.frames[t].chamfer_pct, 1e-12);
        EXPECT_NEAR(rep.frames[t].volume_change, direct.frames[t].volume_change, 1e-12);
        EXPECT_NEAR(rep.frames[t].conformal_mean, direct.frames[t].conformal_mean, 1e-12);
    }
    const auto parsed = parse_report(slurp(dir_ / "m.txt"));
    EXPECT_EQ(parsed.frames.size(), rep.frames.size());
    EXPECT_EQ(slurp(dir_ / "m.txt"), slurp(cfg_.out / "metrics.txt"));
}

TEST_F(PipelineTest, MetricsOnRepeatedTargetAndRigidSequence)
{
    const Points tgt = load_shape(dir_ / "stretched.off").points();
    export_frames({tgt, tgt, tgt}, faces_, dir_ / "still", MeshFormat::Off);
    const auto rep = run_metrics(dir_ / "still", dir_ / "stretched.off", dir_ / "still.txt");
    for (const auto& f : rep.frames) {
        EXPECT_EQ(f.chamfer_pct, 0.0);
    }
    for (const auto& c : rep.curves) {
        if (c.name == "chamfer_pct") {
            for (const auto& [th, fr] : c.points) {
                EXPECT_EQ(fr, 1.0) << th;
            }
        }
    }

    std::mt19937_64 rng(9);
    std::vector<Points> moving{source_};
    for (int k = 0; k < 3; ++k) {
        moving.push_back(rigid(source_, random_rotation(rng), Vec3::Random()));
    }
    export_frames(moving, faces_, dir_ / "rigid", MeshFormat::Obj);
    const auto r2 = run_metrics(dir_ / "rigid", dir_ / "source.off", dir_ / "rigid.txt");
    for (const auto& f : r2.frames) {
        EXPECT_LE(f.volume_change, 1e-12);
        EXPECT_NEAR(f.conformal_max, 2.0, 1e-9);
    }
}

TEST_F(PipelineTest, ExtrapolateAddsFramesOnlyPastTheEnd)
{
    cfg_.out = dir_ / "run";
    run_interpolate(dir_ / "source.off", dir_ / "stretched.off", dir_ / "identity.corr", cfg_);
    EXPECT_EQ(run_extrapolate(cfg_.out, 1.0), 0);
    EXPECT_EQ(list_frames(cfg_.out).size(), 5u);
    EXPECT_FALSE(fs::exists(cfg_.out / "extrapolation.json"));

    EXPECT_EQ(run_extrapolate(cfg_.out, 2.0), 4);
    const auto files = list_frames(cfg_.out);
    ASSERT_EQ(files.size(), 9u);
    EXPECT_EQ(files.back().filename(), "frame_0008.off");
    const Json info = read_json(cfg_.out / "extrapolation.json");
    EXPECT_EQ(info.at("first_frame").get<int>(), 5);
    EXPECT_EQ(info.at("hamiltonian").size(), 9u);
    EXPECT_FALSE(fs::exists(cfg_.out / ".extrapolate.tmp"));
    // connectivity carries over
    EXPECT_EQ(read_mesh(files.back()).faces, faces_);
}

TEST_F(PipelineTest, RefineKeepsAnAlreadyAlignedMatch)
{
    cfg_.out = dir_ / "run";
    run_interpolate(dir_ / "source.off", dir_ / "source.off", dir_ / "identity.corr", cfg_);
    const auto o = run_refine(cfg_.out, dir_ / "identity.corr");
    EXPECT_EQ(o.refined.correspondence, o.input);
    EXPECT_EQ(o.refined.changed, 0);
    EXPECT_EQ(o.input_error, 0.0);
    EXPECT_EQ(o.refined_error, 0.0);
    const auto back = load_correspondences(cfg_.out / "refined_correspondences.txt", 162, 162);
    EXPECT_EQ(back.map, o.input);
}

TEST_F(PipelineTest, FpsWritesCloudAndIndices)
{
    const auto idx = run_fps(dir_ / "source.off", 40, 3, dir_ / "fps.obj");
    ASSERT_EQ(idx.size(), 40u);
    const MeshData m = read_mesh(dir_ / "fps.obj");
    EXPECT_TRUE(m.faces.empty());
    ASSERT_EQ(m.points.rows(), 40);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        EXPECT_EQ(Vec3(m.points.row(static_cast<Eigen::Index>(i))), Vec3(source_.row(idx[i])));
    }
    std::ifstream is(dir_ / "fps.indices.txt");
    std::vector<int> read{std::istream_iterator<int>(is), {}};
    EXPECT_EQ(read, idx);
    EXPECT_EQ(run_fps(dir_ / "source.off", 40, 3, dir_ / "fps2.obj"), idx);
}

TEST(RunConfigJson, RoundTripAndUnknownKeys)
{
    RunConfig c;
    c.resolution = 500;
    c.full_resolution = true;
    c.format = MeshFormat::Ply;
    c.optim.T = 7;
    RunConfig d;
    apply_json(to_json(c), d);
    EXPECT_EQ(to_json(d), to_json(c));
    EXPECT_THROW(apply_json(Json{{"resolutoin", 5}}, d), InvalidArgument);
}
