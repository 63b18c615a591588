#include "hamshape/verification.hpp"
#include "hamshape/shapes.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace hamshape;
using namespace testutil;

namespace {

// 50 farthest-point samples of a sphere with a 6-NN graph, plus a stretched copy as target.
AlignmentProblem small_problem(double stretch = 1.3)
{
    const Shape ico = shapes::icosphere(3, 0.3, Vec3::Constant(0.5));
    const auto fps = farthest_point_sample(ico, 50, 0);
    Points p(50, 3);
    for (int i = 0; i < 50; ++i) {
        p.row(i) = ico.points().row(fps.indices[i]);
    }
    AlignmentProblem pr{build_knn_graph(p, 6), Points(50, 3), std::vector<int>(50)};
    const Mat3 a = shapes::volume_preserving_stretch(stretch);
    for (int i = 0; i < 50; ++i) {
        pr.target.row(i) = (a * (Vec3(p.row(i).transpose()) - Vec3::Constant(0.5)) + Vec3::Constant(0.5)).transpose();
    }
    std::iota(pr.correspondence.begin(), pr.correspondence.end(), 0);
    return pr;
}

OptimConfig small_config()
{
    OptimConfig cfg;
    cfg.K = 12;
    cfg.T = 4;
    cfg.inner_iters = 2;
    return cfg;
}

Variables random_variables(int K, int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Variables v = Variables::initial(K, n);
    for (int k = 0; k < K; ++k) {
        v.chat[k] = 0.3 * g(rng);
    }
    for (auto& l : v.factors) {
        l += 0.2 * LowerFactor::NullaryExpr([&]() { return g(rng); });
    }
    return v;
}

} // namespace

TEST(Alignment, ValidationRejectsBadMaps)
{
    AlignmentProblem pr = small_problem();
    EXPECT_TRUE(pr.validate().empty());
    pr.correspondence[3] = 50;
    EXPECT_THROW(pr.validate(), InvalidArgument);
    pr.correspondence[3] = -2;
    EXPECT_THROW(pr.validate(), InvalidArgument);
    std::fill(pr.correspondence.begin(), pr.correspondence.end(), -1);
    EXPECT_THROW(pr.validate(), InvalidArgument);
    pr.correspondence[0] = 0;
    EXPECT_EQ(pr.validate().size(), 1u); // under 30% matched
    pr.correspondence.pop_back();
    EXPECT_THROW(pr.validate(), InvalidArgument);
}

TEST(Alignment, AlignedRestTrajectoryLeavesOnlyThePrior)
{
    AlignmentProblem pr = small_problem();
    pr.target = pr.source.points();
    const auto cfg = small_config();
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const AlignmentObjective obj(pr, basis, cfg);
    Variables v = random_variables(cfg.K, 50, 1);
    v.chat.setZero();
    const auto ev = obj.evaluate(v, false);
    double prior = 0.0;
    for (const Mat3& s : v.sigmas()) {
        prior += obj.lambda_sigma() * (s - Mat3::Identity()).squaredNorm();
    }
    EXPECT_EQ(ev.energy.data, 0.0);
    EXPECT_EQ(ev.energy.potential, 0.0);
    EXPECT_DOUBLE_EQ(ev.energy.prior, prior);
    EXPECT_DOUBLE_EQ(ev.energy.total, prior);
}

TEST(Alignment, DataTermScalesWithInverseSigmaSquared)
{
    const AlignmentProblem pr = small_problem();
    auto cfg = small_config();
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const Variables v = random_variables(cfg.K, 50, 2);
    const auto traj = AlignmentObjective(pr, basis, cfg).evaluate(v, false).trajectory;
    const auto e1 = energy_E(traj, pr, v.sigmas(), basis, cfg);
    cfg.sigma *= 2.0;
    const auto e2 = energy_E(traj, pr, v.sigmas(), basis, cfg);
    EXPECT_NEAR(e2.data, 0.25 * e1.data, 1e-12 * e1.data);
    EXPECT_DOUBLE_EQ(e2.potential, e1.potential);
}

TEST(Alignment, MaskedDataTerm)
{
    AlignmentProblem pr = small_problem();
    pr.target = pr.source.points();
    const auto cfg = small_config();
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const Variables rest = Variables::initial(cfg.K, 50);
    AlignmentProblem half = pr;
    for (int i = 0; i < 50; i += 2) {
        half.correspondence[i] = -1;
    }
    const auto traj = AlignmentObjective(pr, basis, cfg).evaluate(rest, false).trajectory;
    EXPECT_EQ(energy_E(traj, pr, rest.sigmas(), basis, cfg).data, 0.0);
    EXPECT_EQ(energy_E(traj, half, rest.sigmas(), basis, cfg).data, 0.0);

    // Removing matches never increases the data term at a fixed trajectory.
    const AlignmentProblem stretched = small_problem();
    AlignmentProblem partial = stretched;
    const auto traj2 = AlignmentObjective(stretched, basis, cfg).evaluate(random_variables(cfg.K, 50, 3), false).trajectory;
    double last = energy_E(traj2, stretched, rest.sigmas(), basis, cfg).data;
    for (int i = 0; i < 40; i += 3) {
        partial.correspondence[i] = -1;
        const double d = energy_E(traj2, partial, rest.sigmas(), basis, cfg).data;
        EXPECT_LE(d, last);
        last = d;
    }
}

class GradientFd : public ::testing::TestWithParam<NormConvention> {};

TEST_P(GradientFd, ReverseMatchesCentralDifferences)
{
    const AlignmentProblem pr = small_problem();
    auto cfg = small_config();
    cfg.convention = GetParam();
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const AlignmentObjective obj(pr, basis, cfg);
    const auto chk = run_fd_gradient_check(obj, random_variables(cfg.K, 50, 4), 20, 5);
    ASSERT_EQ(chk.components.size(), 20u);
    for (const auto& c : chk.components) {
        EXPECT_LT(c.rel_error, 1e-4) << c.index << " reverse " << c.reverse << " fd " << c.fd;
    }
}

INSTANTIATE_TEST_SUITE_P(Conventions, GradientFd,
                         ::testing::Values(NormConvention::Weight, NormConvention::Mahalanobis),
                         [](const auto& info) {
                             return std::string(info.param == NormConvention::Weight ? "Weight" : "Mahalanobis");
                         });

TEST(Gradient, PriorOnlyGradientIsAnalytic)
{
    AlignmentProblem pr = small_problem();
    pr.target = pr.source.points();
    auto cfg = small_config();
    cfg.lambda_sigma = 0.37;
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const AlignmentObjective obj(pr, basis, cfg);
    Variables v = random_variables(cfg.K, 50, 6);
    v.chat.setZero();
    const VecX g = obj.gradient(v, obj.evaluate(v, true));
    EXPECT_EQ(g.head(cfg.K).norm(), 0.0);
    for (int i = 0; i < 50; ++i) {
        // d/dL of lambda |L L^T + eps I - I|^2 written out entry by entry
        const Mat3 l = lower_from_params(v.factors[i]);
        const Mat3 d = 2.0 * cfg.lambda_sigma * (l * l.transpose() + kSigmaEps * Mat3::Identity() - Mat3::Identity());
        const Mat3 gl = 2.0 * d * l;
        const LowerFactor expect = params_from_lower(gl);
        EXPECT_LE((g.segment(cfg.K + 6 * i, 6) - expect).norm(), 1e-12 * (1 + expect.norm())) << i;
    }
}

TEST(Gradient, ZeroDeformationFixtureHasZeroGradient)
{
    AlignmentProblem pr = small_problem();
    pr.target = pr.source.points();
    const auto cfg = small_config();
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const AlignmentObjective obj(pr, basis, cfg);
    const auto chk = run_fd_gradient_check(obj, Variables::initial(cfg.K, 50), 20, 7);
    EXPECT_LE(chk.max_abs_error, 1e-10);
    for (const auto& c : chk.components) {
        EXPECT_LE(std::abs(c.reverse), 1e-12);
    }
}

TEST(Interpolate, IdenticalShapesConvergeImmediately)
{
    AlignmentProblem pr = small_problem();
    pr.target = pr.source.points();
    const auto cfg = small_config();
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const auto res = interpolate(pr, basis, cfg);
    EXPECT_TRUE(res.converged);
    EXPECT_EQ(res.history.size(), 1u);
    EXPECT_EQ(res.energy.total, 0.0);
    for (const auto& f : res.trajectory.frames) {
        EXPECT_EQ(f, pr.source.points());
    }
}

TEST(Interpolate, BacktrackingDescentIsMonotoneAndDeterministic)
{
    const AlignmentProblem pr = small_problem();
    auto cfg = small_config();
    cfg.K = 60; // K = 12 cannot represent the stretch
    cfg.iterations = 15;
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const auto a = interpolate(pr, basis, cfg);
    ASSERT_GE(a.history.size(), 2u);
    for (std::size_t i = 1; i < a.history.size(); ++i) {
        EXPECT_LE(a.history[i].energy.total, a.history[i - 1].energy.total);
    }
    EXPECT_LT(a.energy.total, 0.5 * a.history.front().energy.total);
    const auto b = interpolate(pr, basis, cfg);
    ASSERT_EQ(a.history.size(), b.history.size());
    EXPECT_EQ(a.trajectory.frames.back(), b.trajectory.frames.back());
    EXPECT_EQ(a.variables.pack(), b.variables.pack());
}

TEST(Interpolate, AdamVariantDecreasesEnergy)
{
    const AlignmentProblem pr = small_problem();
    auto cfg = small_config();
    cfg.iterations = 20;
    cfg.optimizer = OptimizerKind::Adam;
    cfg.backtracking = false;
    cfg.gamma = 2e-2;
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const auto res = interpolate(pr, basis, cfg);
    EXPECT_LT(res.energy.total, res.history.front().energy.total);
}

TEST(Interpolate, FixedHugeStepDivergesAndKeepsBest)
{
    const AlignmentProblem pr = small_problem();
    auto cfg = small_config();
    cfg.iterations = 10;
    cfg.backtracking = false;
    cfg.bb_step = false;
    cfg.gamma = 1e3;
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const auto res = interpolate(pr, basis, cfg);
    EXPECT_TRUE(res.diverged || res.stop_reason == "line search found no decrease");
    EXPECT_LE(res.energy.total, res.history.front().energy.total);
}

TEST(Interpolate, FiniteDifferenceModeAgreesWithReverseOnFirstStep)
{
    const AlignmentProblem pr = small_problem();
    auto cfg = small_config();
    cfg.iterations = 1;
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const auto a = interpolate(pr, basis, cfg);
    cfg.grad_mode = GradMode::FiniteDifference;
    const auto b = interpolate(pr, basis, cfg);
    EXPECT_NEAR(a.history[0].grad_norm, b.history[0].grad_norm, 1e-4 * a.history[0].grad_norm);
}

TEST(Refine, AlignedFinalFrameGivesIdentity)
{
    const AlignmentProblem pr = small_problem();
    const auto r = refine_correspondences(pr.target, pr.target, pr.correspondence);
    EXPECT_EQ(r.correspondence, pr.correspondence);
    EXPECT_EQ(r.changed, 0);
    EXPECT_EQ(r.mean_distance, 0.0);
}

TEST(Refine, UndeformedFrameIsPlainNearestNeighbour)
{
    std::mt19937_64 rng(8);
    const Points p = random_points(60, rng);
    const Points q = random_points(80, rng);
    const auto r = refine_correspondences(p, q);
    for (int i = 0; i < 60; ++i) {
        int best = 0;
        for (int j = 1; j < 80; ++j) {
            if ((q.row(j) - p.row(i)).squaredNorm() < (q.row(best) - p.row(i)).squaredNorm()) {
                best = j;
            }
        }
        EXPECT_EQ(r.correspondence[i], best);
    }
}

TEST(Refine, ReducesErrorOfNoisyMap)
{
    AlignmentProblem pr = small_problem(1.2);
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> pick(0, 49);
    const std::vector<int> truth = pr.correspondence;
    for (int i = 0; i < 50; i += 5) {
        pr.correspondence[i] = pick(rng);
    }
    auto cfg = small_config();
    cfg.iterations = 40;
    const auto basis = DivFreeBasis::build(DomainBox::unit(), cfg.K);
    const auto res = interpolate(pr, basis, cfg);
    const auto r = refine_correspondences(res.trajectory, pr);
    auto err = [&](const std::vector<int>& m) {
        double e = 0;
        for (int i = 0; i < 50; ++i) {
            e += (pr.target.row(m[i]) - pr.target.row(truth[i])).norm();
        }
        return e / 50;
    };
    EXPECT_LT(err(r.correspondence), err(pr.correspondence));
}

TEST(Verification, SlopeFitRecoversPowerLaw)
{
    const std::vector<double> tau{0.1, 0.05, 0.025, 0.0125};
    std::vector<double> e;
    for (double t : tau) {
        e.push_back(3.0 * t * t);
    }
    const auto f = fit_loglog_slope(tau, e);
    EXPECT_NEAR(f.slope, 2.0, 1e-12);
    EXPECT_NEAR(f.ci_low, 2.0, 1e-9);
}

TEST(Verification, OrderStudyPolynomialPaths)
{
    const auto basis = DivFreeBasis::build(DomainBox::unit(), 40);
    std::mt19937_64 rng(10);
    const Points probes = random_points(200, rng, 0.05, 0.95);
    const VecX a = VecX::Random(40), b = VecX::Random(40), d = VecX::Random(40);
    const std::vector<double> taus{1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};

    const auto constant = run_order_study(basis, [&](double) { return a; }, probes, taus);
    EXPECT_TRUE(constant.extrapolated.exact);
    EXPECT_TRUE(constant.plain.exact);

    const auto linear = run_order_study(basis, [&](double t) -> VecX { return a + t * b; }, probes, taus);
    EXPECT_TRUE(linear.extrapolated.exact);
    for (double e : linear.extrapolated.error) {
        EXPECT_LE(e, 1e-12);
    }
    EXPECT_FALSE(linear.plain.exact);

    const auto quad = run_order_study(basis, [&](double t) -> VecX { return a + t * b + t * t * d; }, probes, taus);
    EXPECT_FALSE(quad.extrapolated.inconclusive);
    EXPECT_GE(quad.extrapolated.fit.slope, 1.8);
    EXPECT_LE(quad.plain.fit.slope, 1.2);
    EXPECT_THROW(run_order_study(basis, [&](double) { return a; }, probes, {0.1, 0.2}), InvalidArgument);
}

TEST(Verification, VolumeStudyZeroCoefficients)
{
    const Shape s = shapes::icosphere(3, 0.3, Vec3::Constant(0.5));
    const auto basis = DivFreeBasis::build(DomainBox::unit(), 20);
    const auto st = run_volume_study(s, basis, VecX::Zero(20), {4, 8});
    EXPECT_TRUE(st.zero);
    for (double d : st.drift) {
        EXPECT_EQ(d, 0.0);
    }
}
