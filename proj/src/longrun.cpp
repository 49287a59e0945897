#include "drofolio/longrun.h"

#include <cmath>
#include <string>

namespace drofolio {

namespace {

Matrix centred(const Matrix& factors, const Vector& mean) {
    if (mean.size() != factors.rows())
        throw std::invalid_argument("factor mean has length " + std::to_string(mean.size()) + ", expected " +
                                    std::to_string(factors.rows()));
    if (!factors.allFinite() || !mean.allFinite()) throw DataError("factors contain non-finite values");
    return factors.colwise() - mean;
}

Matrix lagged_product(const Matrix& z, Index lag) {
    const Index t = z.cols();
    return z.rightCols(t - lag) * z.leftCols(t - lag).transpose() / static_cast<double>(t);
}

}  // namespace

Matrix autocov(const Matrix& factors, const Vector& mean, Index lag) {
    if (lag < 0 || lag >= factors.cols())
        throw std::invalid_argument("lag " + std::to_string(lag) + " outside [0, " +
                                    std::to_string(factors.cols() - 1) + "]");
    return lagged_product(centred(factors, mean), lag);
}

double bartlett_weight(Index lag, Index bandwidth) {
    if (lag < 0) lag = -lag;
    if (lag >= bandwidth) return 0.0;
    return 1.0 - static_cast<double>(lag) / static_cast<double>(bandwidth);
}

LongRunCov hac_long_run_cov(const Matrix& factors, const Vector& mean, Index bandwidth) {
    if (bandwidth < 1) throw std::invalid_argument("bandwidth must be >= 1");
    if (factors.cols() < 1) throw DataError("no factor observations");
    const Matrix z = centred(factors, mean);
    const Index t = z.cols();

    Matrix v = lagged_product(z, 0);
    const Index last = std::min(bandwidth - 1, t - 1);
    for (Index j = 1; j <= last; ++j) {
        const Matrix c = lagged_product(z, j);
        v += bartlett_weight(j, bandwidth) * (c + c.transpose());
    }
    v = (0.5 * (v + v.transpose())).eval();

    Eigen::SelfAdjointEigenSolver<Matrix> es(v);
    if (es.info() != Eigen::Success) throw DataError("eigen-decomposition of long-run covariance failed");
    const double min_ev = es.eigenvalues().minCoeff();
    if (min_ev < -1e-10)
        throw std::runtime_error("HAC long-run covariance has eigenvalue " + std::to_string(min_ev));
    if (min_ev < 0.0) {
        const Matrix& q = es.eigenvectors();
        v = q * es.eigenvalues().cwiseMax(0.0).asDiagonal() * q.transpose();
        v = (0.5 * (v + v.transpose())).eval();
    }
    return {v, bandwidth, Kernel::bartlett};
}

LongRunCov iid_long_run_cov(const Vector& factor_mean) {
    const Index k = factor_mean.size();
    Matrix v = Matrix::Identity(k, k) - factor_mean * factor_mean.transpose();
    return {0.5 * (v + v.transpose()), 1, Kernel::bartlett};
}

Index default_bandwidth(Index t, Index p, double c) {
    if (t < 2 || p < 1 || !(c > 0.0)) throw std::invalid_argument("default_bandwidth needs t >= 2, p >= 1, c > 0");
    const double q = c * std::pow(static_cast<double>(t), -0.125) * std::pow(static_cast<double>(p), 0.25);
    return std::max<Index>(1, static_cast<Index>(std::floor(q)));
}

}  // namespace drofolio
