#include <gtest/gtest.h>

#include <random>

#include "drofolio/longrun.h"
#include "drofolio/parallel.h"

using namespace drofolio;

namespace {

Matrix ar1(Index k, Index t, double a, std::uint64_t seed) {
    Engine eng(seed);
    std::normal_distribution<double> n;
    Matrix f(k, t);
    for (Index i = 0; i < k; ++i) {
        double x = n(eng) / std::sqrt(1.0 - a * a);
        for (Index s = 0; s < t; ++s) {
            x = a * x + n(eng);
            f(i, s) = x;
        }
    }
    return f;
}

}  // namespace

TEST(Autocov, HandExample) {
    Matrix f(1, 4);
    f << 1, 2, 3, 4;
    const Matrix c = autocov(f, Vector::Constant(1, 2.5), 1);
    EXPECT_NEAR(c(0, 0), 0.3125, 1e-15);
}

TEST(Autocov, LagZeroIsSecondMoment) {
    const Matrix f = Matrix::Random(3, 20);
    const Vector mu = f.rowwise().mean();
    const Matrix z = f.colwise() - mu;
    EXPECT_LE((autocov(f, mu, 0) - z * z.transpose() / 20.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Autocov, LastLagSingleProduct) {
    const Matrix f = Matrix::Random(2, 9);
    const Vector mu = Vector::Zero(2);
    const Matrix c = autocov(f, mu, 8);
    const Matrix one = f.col(8) * f.col(0).transpose() / 9.0;
    EXPECT_LE((c - one).cwiseAbs().maxCoeff(), 1e-16);
    EXPECT_THROW(autocov(f, mu, 9), std::invalid_argument);
}

TEST(Hac, BandwidthOneIsLagZero) {
    const Matrix f = Matrix::Random(3, 30);
    const Vector mu = f.rowwise().mean();
    const LongRunCov v = hac_long_run_cov(f, mu, 1);
    EXPECT_EQ(v.matrix, autocov(f, mu, 0));
}

TEST(Hac, BartlettWeights) {
    EXPECT_EQ(bartlett_weight(0, 4), 1.0);
    EXPECT_EQ(bartlett_weight(1, 4), 0.75);
    EXPECT_EQ(bartlett_weight(4, 4), 0.0);
    EXPECT_EQ(bartlett_weight(7, 4), 0.0);
}

TEST(Hac, MatchesDirectSum) {
    const Matrix f = ar1(2, 50, 0.4, 3);
    const Vector mu = f.rowwise().mean();
    Matrix direct = autocov(f, mu, 0);
    for (Index j = 1; j < 5; ++j) {
        const Matrix c = autocov(f, mu, j);
        direct += (1.0 - j / 5.0) * (c + c.transpose());
    }
    EXPECT_LE((hac_long_run_cov(f, mu, 5).matrix - direct).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Hac, IidFactorsNearIdentity) {
    const Matrix f = ar1(3, 5000, 0.0, 9);
    const Vector mu = f.rowwise().mean();
    const LongRunCov v = hac_long_run_cov(f, mu, default_bandwidth(5000, 100));
    EXPECT_LE((v.matrix - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.1);
}

TEST(Hac, Ar1LongRunVariance) {
    const double a = 0.5;
    const Matrix f = ar1(1, 20000, a, 13);
    const Vector mu = f.rowwise().mean();
    // bandwidth large enough for the geometric tail to die out
    const LongRunCov v = hac_long_run_cov(f, mu, 60);
    const double truth = 1.0 / ((1.0 - a) * (1.0 - a));  // 4
    EXPECT_NEAR(v.matrix(0, 0), truth, 0.15 * truth);
}

TEST(Hac, PsdOnRandomInputs) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const Matrix f = ar1(4, 15, 0.3, 100 + s) + Matrix::Random(4, 15);
        const LongRunCov v = hac_long_run_cov(f, f.rowwise().mean(), 1 + static_cast<Index>(s % 10));
        Eigen::SelfAdjointEigenSolver<Matrix> es(v.matrix);
        EXPECT_GE(es.eigenvalues().minCoeff(), 0.0);
        EXPECT_EQ((v.matrix - v.matrix.transpose()).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(Hac, ScalingEquivariance) {
    const Matrix f = ar1(2, 80, 0.3, 5);
    const Vector mu = f.rowwise().mean();
    const double a = 3.0;
    const Matrix v1 = hac_long_run_cov(f, mu, 6).matrix;
    const Matrix v2 = hac_long_run_cov(a * f, a * mu, 6).matrix;
    EXPECT_LE((v2 - a * a * v1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Hac, IidShortcut) {
    const Vector mu{{0.1, -0.2}};
    const LongRunCov v = iid_long_run_cov(mu);
    EXPECT_LE((v.matrix - (Matrix::Identity(2, 2) - mu * mu.transpose())).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Bandwidth, DefaultRule) {
    EXPECT_EQ(default_bandwidth(200, 100, 5.0), 8);
    EXPECT_EQ(default_bandwidth(200, 30, 5.0), 6);
    EXPECT_EQ(default_bandwidth(200, 30, 0.01), 1);
}
