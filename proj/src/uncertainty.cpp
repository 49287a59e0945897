#include "drofolio/uncertainty.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "drofolio/parallel.h"

namespace drofolio {

namespace {

constexpr Index kChunk = 8192;

void check_level(double level, const char* what) {
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument(std::string(what) + " must lie in (0, 1), got " + std::to_string(level));
}

// type-7 empirical quantile of a sorted sample
double sorted_quantile(const std::vector<double>& x, double level) {
    const double h = level * static_cast<double>(x.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= x.size()) return x.back();
    return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

}  // namespace

double standard_normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal quantile needs p in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

std::vector<double> quadform_quantiles(const Matrix& cov, const std::vector<double>& levels, Index draws,
                                       std::uint64_t seed) {
    if (cov.rows() != cov.cols()) throw std::invalid_argument("covariance must be square");
    if (draws < 1000) throw std::invalid_argument("quadform quantile needs at least 1000 draws");
    for (const double l : levels) check_level(l, "quantile level");
    if (!cov.allFinite()) throw DataError("covariance contains non-finite values");

    std::vector<double> lambda;
    if (cov.rows() > 0) {
        const Matrix sym = 0.5 * (cov + cov.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
        if (es.info() != Eigen::Success) throw DataError("eigen-decomposition of covariance failed");
        const double scale = std::max(1.0, sym.cwiseAbs().maxCoeff());
        for (Index i = 0; i < es.eigenvalues().size(); ++i) {
            const double ev = es.eigenvalues()(i);
            if (ev < -1e-10 * scale)
                throw DataError("covariance is not positive semidefinite (eigenvalue " + std::to_string(ev) + ")");
            if (ev > 0.0) lambda.push_back(ev);
        }
    }
    if (lambda.empty()) return std::vector<double>(levels.size(), 0.0);

    std::vector<double> sample(static_cast<std::size_t>(draws));
    const auto chunks = static_cast<std::size_t>((draws + kChunk - 1) / kChunk);
    parallel_for(chunks, [&](std::size_t c) {
        Engine eng = make_engine(seed, c);
        std::normal_distribution<double> normal;
        const std::size_t begin = c * static_cast<std::size_t>(kChunk);
        const std::size_t end = std::min(sample.size(), begin + static_cast<std::size_t>(kChunk));
        for (std::size_t i = begin; i < end; ++i) {
            double s = 0.0;
            for (const double l : lambda) {
                const double z = normal(eng);
                s += l * z * z;
            }
            sample[i] = s;
        }
    });
    std::sort(sample.begin(), sample.end());

    std::vector<double> out;
    out.reserve(levels.size());
    for (const double l : levels) out.push_back(sorted_quantile(sample, l));
    return out;
}

double quadform_quantile(const Matrix& cov, double level, Index draws, std::uint64_t seed) {
    return quadform_quantiles(cov, {level}, draws, seed).front();
}

double delta_from_moments(double quadform_q, double mu_quad, Index t) {
    if (t < 1) throw std::invalid_argument("sample length must be positive");
    if (!(mu_quad < 1.0)) throw DataError("factor mean inconsistent with normalization (mu'mu >= 1)");
    return quadform_q / (4.0 * (1.0 - mu_quad)) / static_cast<double>(t);
}

double select_delta(const FactorFit& fit, const LongRunCov& longrun, double level, Index draws,
                    std::uint64_t seed) {
    check_level(level, "delta confidence level");
    if (longrun.matrix.rows() != fit.k) throw std::invalid_argument("long-run covariance does not match factor count");
    const double q = quadform_quantile(longrun.matrix, level, draws, seed);
    return delta_from_moments(q, fit.factor_mean.squaredNorm(), fit.factors.cols());
}

Vector mv_closed_form(const Vector& mean, const Matrix& cov, double target) {
    const Index p = mean.size();
    if (cov.rows() != p || cov.cols() != p) throw std::invalid_argument("mean and covariance dimensions differ");
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw DataError("covariance is not positive definite");
    const Vector ones = Vector::Ones(p);
    const Vector x = llt.solve(mean);
    const Vector y = llt.solve(ones);
    const double a1 = mean.dot(y);
    const double a2 = mean.dot(x);
    const double a3 = ones.dot(y);
    const double a4 = a2 * a3 - a1 * a1;
    if (!(std::abs(a4) > 1e-12 * std::abs(a2 * a3))) throw DataError("ill-posed mean-variance system");
    return ((target * a3 - a1) / a4) * x + ((a2 - target * a1) / a4) * y;
}

Vector gmv_weights(const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw DataError("covariance is not positive definite");
    const Vector y = llt.solve(Vector::Ones(cov.rows()));
    return y / y.sum();
}

UncertaintyParams rho_from_moments(double delta, const Matrix& loadings, const Matrix& longrun,
                                   const Vector& w_mv, double target, double eps, Index t) {
    if (!(delta >= 0.0)) throw std::invalid_argument("delta must be >= 0");
    if (!(eps > 0.0 && eps < 0.5)) throw std::invalid_argument("eps must lie in (0, 0.5)");
    if (w_mv.size() != loadings.rows()) throw std::invalid_argument("weights do not match loadings");
    if (longrun.rows() != loadings.cols()) throw std::invalid_argument("long-run covariance does not match loadings");
    if (t < 1) throw std::invalid_argument("sample length must be positive");

    const Vector bw = loadings.transpose() * w_mv;
    double sigma2 = bw.dot(longrun * bw);
    const double tol = 1e-12 * std::max(1.0, longrun.cwiseAbs().maxCoeff()) * bw.squaredNorm();
    if (sigma2 < -tol) throw DataError("negative variance in rho selection");
    sigma2 = std::max(sigma2, 0.0);

    const double sqrt_t = std::sqrt(static_cast<double>(t));
    UncertaintyParams out;
    out.delta = delta;
    out.rho_confidence = 1.0 - eps;
    out.target_return = target;
    out.diagnostics.norm_bw = bw.norm();
    out.diagnostics.a_quantile = std::sqrt(sigma2) * standard_normal_quantile(eps);
    out.diagnostics.q_value =
        out.diagnostics.norm_bw > 0.0 ? out.diagnostics.a_quantile / (sqrt_t * out.diagnostics.norm_bw) : 0.0;
    out.diagnostics.l0_quantile = delta * static_cast<double>(t);
    out.rho = target - (std::sqrt(delta) * out.diagnostics.norm_bw - out.diagnostics.a_quantile / sqrt_t);
    return out;
}

UncertaintyParams select_rho(double delta, const FactorFit& fit, const LongRunCov& longrun, const Vector& w_mv,
                             double target, double eps) {
    if (std::abs(w_mv.sum() - 1.0) > 1e-8) throw std::invalid_argument("mean-variance weights must sum to 1");
    return rho_from_moments(delta, fit.loadings, longrun.matrix, w_mv, target, eps, fit.factors.cols());
}

FeasibilityBound max_feasible_rho(const Matrix& loadings, const Vector& factor_mean, double delta) {
    if (!(delta >= 0.0)) throw std::invalid_argument("delta must be >= 0");
    const Index k = loadings.cols();
    if (factor_mean.size() != k) throw std::invalid_argument("factor mean does not match loadings");

    // {B'w : w'1 = 1} = bbar + L, L the row space of the column-centred B
    const Vector bbar = loadings.colwise().mean().transpose();
    const Matrix centred = loadings.rowwise() - bbar.transpose();
    Eigen::JacobiSVD<Matrix> svd(centred, Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double cut = static_cast<double>(std::max(loadings.rows(), k)) *
                       std::numeric_limits<double>::epsilon() * (sv.size() > 0 ? sv(0) : 0.0);
    Index rank = 0;
    while (rank < sv.size() && sv(rank) > cut) ++rank;
    const Matrix q = svd.matrixV().leftCols(rank);

    Vector a = rank == k ? Vector::Zero(k) : Vector(bbar - q * (q.transpose() * bbar));
    const Vector m = q.transpose() * factor_mean;
    const double s = std::sqrt(delta);
    const double mn = m.norm();

    FeasibilityBound out;
    if (mn - s > 1e-12 * std::max(factor_mean.norm(), std::numeric_limits<double>::min())) {
        out.unbounded = true;
        out.g_bar = std::numeric_limits<double>::infinity();
        return out;
    }
    out.g_bar = a.dot(factor_mean) - a.norm() * std::sqrt(std::max(s * s - mn * mn, 0.0));
    return out;
}

Calibration calibrate_uncertainty(const FactorFit& fit, const CovModel& cov, const CalibrationConfig& config) {
    check_level(config.delta_level, "delta confidence level");
    check_level(config.rho_level, "rho confidence level");
    if (!(config.rho_level > 0.5)) throw std::invalid_argument("rho confidence level must exceed 0.5");
    const Index t = fit.factors.cols();
    const Index p = fit.loadings.rows();

    Calibration out;
    if (config.iid_factors) {
        out.longrun = iid_long_run_cov(fit.factor_mean);
    } else {
        const Index q = config.bandwidth ? *config.bandwidth : default_bandwidth(t, p, config.bandwidth_c);
        out.longrun = hac_long_run_cov(fit.factors, fit.factor_mean, q);
    }
    const double delta = select_delta(fit, out.longrun, config.delta_level, config.draws, config.seed);
    out.w_mv = mv_closed_form(cov.mean, cov.sigma_r, config.target_return);
    out.params = select_rho(delta, fit, out.longrun, out.w_mv, config.target_return, 1.0 - config.rho_level);
    out.params.delta_confidence = config.delta_level;
    out.bound = max_feasible_rho(fit.loadings, fit.factor_mean, delta);
    return out;
}

}  // namespace drofolio
