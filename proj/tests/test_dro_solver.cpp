#include <gtest/gtest.h>

#include <random>

#include "drofolio/dro_solver.h"
#include "instances.h"
#include "oracles.h"

using namespace drofolio;
using testing_support::small_instance;
using testing_support::to_oracle;

namespace {

Vector tangent(Index p, std::uint64_t seed) {
    Engine eng(seed);
    std::normal_distribution<double> n;
    Vector d(p);
    for (Index i = 0; i < p; ++i) d(i) = n(eng);
    d.array() -= d.mean();
    return d / d.norm();
}

Matrix full_cov(const DroProblem& pr) {
    return pr.loadings * pr.factor_cov * pr.loadings.transpose() + pr.residual_cov;
}

}  // namespace

TEST(Solver, ZeroRadiusSlackFloorIsGmv) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const DroProblem pr = small_instance(s, 6, 2, 0.0, false);
        const PortfolioWeights sol = solve_hd_dro(pr);
        ASSERT_EQ(sol.status, SolveStatus::optimal);
        EXPECT_LE((sol.weights - oracle::gmv(full_cov(pr))).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Solver, MatchesBruteForceOnThreeAssets) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const DroProblem pr = small_instance(100 + s, 3, 1, 0.01, s % 2 == 0);
        const PortfolioWeights sol = solve_hd_dro(pr);
        ASSERT_EQ(sol.status, SolveStatus::optimal) << s;
        const oracle::BruteResult ref = oracle::brute_force(to_oracle(pr));
        ASSERT_TRUE(std::isfinite(ref.objective));
        EXPECT_NEAR(sol.objective, ref.objective, 1e-4) << s;
        // never beaten by the oracle beyond its own resolution
        EXPECT_LE(sol.objective, ref.objective + 1e-9) << s;
    }
}

TEST(Solver, StatusInvariants) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const DroProblem pr = small_instance(200 + s, 5, 2, 0.05, s % 2 == 0);
        const PortfolioWeights sol = solve_hd_dro(pr);
        ASSERT_EQ(sol.status, SolveStatus::optimal);
        EXPECT_LE(std::abs(sol.budget_residual), 1e-8);
        EXPECT_GE(sol.return_slack, -1e-8);
        EXPECT_LE(sol.kkt_residual, 10 * SolverOptions{}.tol);
        EXPECT_NEAR(sol.objective, hd_dro_objective(pr, sol.weights), 1e-15);
    }
}

TEST(Solver, InfeasibleFloorReportsStatus) {
    DroProblem pr = small_instance(7, 5, 2, 0.05, true);
    pr.delta = 2.25 * pr.factor_mean.squaredNorm();  // radius beyond the mean keeps g_bar finite
    const Feasibility f = check_feasibility(pr);
    ASSERT_FALSE(f.unbounded);
    pr.rho = f.g_bar + 0.01;
    const PortfolioWeights sol = solve_hd_dro(pr);
    EXPECT_EQ(sol.status, SolveStatus::infeasible);
    EXPECT_EQ(sol.weights.size(), 0);
}

TEST(Feasibility, StrictInteriorAndViolation) {
    DroProblem pr = small_instance(9, 4, 2, 0.3, true);
    pr.delta = 1.21 * pr.factor_mean.squaredNorm();
    const Feasibility f = check_feasibility(pr);
    ASSERT_FALSE(f.unbounded);
    pr.rho = f.g_bar - 0.01;
    EXPECT_TRUE(check_feasibility(pr).feasible);
    pr.rho = f.g_bar + 0.01;
    EXPECT_FALSE(check_feasibility(pr).feasible);
}

TEST(Bcz, LargeRadiusTendsToEqualWeights) {
    const DroProblem base = small_instance(3, 5, 2, 0.0, false);
    const Vector mean = base.loadings * base.factor_mean;
    const Matrix cov = full_cov(base);
    const double delta = 1e6;
    const Feasibility f = check_feasibility(bcz_problem(mean, cov, delta, 0.0));
    const PortfolioWeights sol = solve_bcz_dro(mean, cov, delta, std::min(0.0, f.g_bar - 1.0));
    ASSERT_EQ(sol.status, SolveStatus::optimal);
    EXPECT_LE((sol.weights.array() - 0.2).abs().maxCoeff(), 1e-3);
}

TEST(Bcz, ZeroRadiusIsGmv) {
    const DroProblem base = small_instance(4, 5, 2, 0.0, false);
    const Matrix cov = full_cov(base);
    const PortfolioWeights sol = solve_bcz_dro(base.loadings * base.factor_mean, cov, 0.0, -10.0);
    ASSERT_EQ(sol.status, SolveStatus::optimal);
    EXPECT_LE((sol.weights - oracle::gmv(cov)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Bcz, SingleAssetRadiusAboveMeanIsInfeasible) {
    // sqrt(delta) = 0.2 > E(r) = 0.1, rho > 0: no w = 1 satisfies the floor
    const PortfolioWeights sol =
        solve_bcz_dro(Vector::Constant(1, 0.1), Matrix::Constant(1, 1, 0.04), 0.04, 0.01);
    EXPECT_EQ(sol.status, SolveStatus::infeasible);
}

TEST(Kkt, ConvergedSmallEqualWeightLarge) {
    const DroProblem pr = small_instance(11, 6, 2, 0.05, false);
    const PortfolioWeights sol = solve_hd_dro(pr);
    EXPECT_LE(kkt_residual(pr, sol.weights), 10 * SolverOptions{}.tol);
    EXPECT_GT(kkt_residual(pr, Vector::Constant(6, 1.0 / 6.0)), 1e-4);
}

TEST(Kkt, GrowsWithPerturbation) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const DroProblem pr = small_instance(300 + s, 5, 2, 0.02, false);
        const PortfolioWeights sol = solve_hd_dro(pr);
        ASSERT_EQ(sol.status, SolveStatus::optimal);
        const Vector d = tangent(5, s);
        double prev = kkt_residual(pr, sol.weights);
        for (double h : {1e-4, 1e-3, 1e-2}) {
            const Vector w = sol.weights + h * d;
            ASSERT_GE(return_slack(pr, w), 0.0);
            const double r = kkt_residual(pr, w);
            EXPECT_GT(r, prev) << "seed " << s << " h " << h;
            prev = r;
        }
    }
}

TEST(Objective, Convexity) {
    const DroProblem pr = small_instance(13, 6, 2, 0.1, false);
    Engine eng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const Vector w1 = Vector::Constant(6, 1.0 / 6.0) + tangent(6, 2 * i + 1) * 3.0 * u(eng);
        const Vector w2 = Vector::Constant(6, 1.0 / 6.0) + tangent(6, 2 * i + 2) * 3.0 * u(eng);
        const double t = u(eng);
        const double lhs = hd_dro_objective(pr, t * w1 + (1 - t) * w2);
        const double rhs = t * hd_dro_objective(pr, w1) + (1 - t) * hd_dro_objective(pr, w2);
        EXPECT_LE(lhs, rhs + 1e-10);
    }
}

TEST(Objective, MatchesDefinition) {
    const DroProblem pr = small_instance(21, 5, 2, 0.07, false);
    const oracle::Dro o = to_oracle(pr);
    const Vector w = Vector::Constant(5, 0.2) + tangent(5, 3);
    EXPECT_NEAR(hd_dro_objective(pr, w), o.objective(w), 1e-14);
    EXPECT_NEAR(return_slack(pr, w), o.slack(w), 1e-14);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const DroProblem pr = small_instance(400 + s, 5, 2, 0.05, false);
        const Vector w = Vector::Constant(5, 0.2) + tangent(5, s) * 0.7;
        const Vector g = hd_dro_gradient(pr, w);
        Vector fd(5);
        for (Index i = 0; i < 5; ++i) {
            Vector a = w, b = w;
            a(i) += 1e-6;
            b(i) -= 1e-6;
            fd(i) = (hd_dro_objective(pr, a) - hd_dro_objective(pr, b)) / 2e-6;
        }
        EXPECT_LE((g - fd).norm(), 1e-5 * fd.norm()) << s;
    }
}

TEST(Solver, ObjectiveNondecreasingInDelta) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        DroProblem pr = small_instance(500 + s, 5, 2, 0.0, false);
        pr.rho = -10.0;
        double prev = -1.0;
        for (double d : {0.0, 0.01, 0.05, 0.2, 1.0}) {
            pr.delta = d;
            const PortfolioWeights sol = solve_hd_dro(pr);
            ASSERT_EQ(sol.status, SolveStatus::optimal);
            EXPECT_GE(sol.objective, prev - 1e-12);
            prev = sol.objective;
        }
    }
}

TEST(Solver, ScaleInvariance) {
    const DroProblem pr = small_instance(600, 5, 2, 0.04, true);
    const double a = 9.0;
    DroProblem sc = pr;
    sc.factor_cov *= a;
    sc.residual_cov *= a;
    sc.delta *= a;
    sc.factor_mean *= std::sqrt(a);
    sc.rho *= std::sqrt(a);
    const PortfolioWeights s1 = solve_hd_dro(pr);
    const PortfolioWeights s2 = solve_hd_dro(sc);
    ASSERT_EQ(s1.status, SolveStatus::optimal);
    ASSERT_EQ(s2.status, SolveStatus::optimal);
    EXPECT_NEAR(s2.objective, a * s1.objective, 1e-8 * s2.objective);
    EXPECT_LE((s1.weights - s2.weights).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Problem, ValidateRejectsBadInput) {
    DroProblem pr = small_instance(1, 4, 2, 0.1, false);
    pr.delta = -1.0;
    EXPECT_THROW(pr.validate(), std::invalid_argument);
    pr = small_instance(1, 4, 2, 0.1, false);
    pr.residual_cov = Matrix::Identity(3, 3);
    EXPECT_THROW(pr.validate(), std::invalid_argument);
}
