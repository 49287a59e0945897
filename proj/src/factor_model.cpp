#include "drofolio/factor_model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "drofolio/parallel.h"

namespace drofolio {

namespace {

void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw DataError(std::string(what) + " contains non-finite values");
}

// Descending eigenpairs of a symmetric matrix.
struct Spectrum {
    Vector values;
    Matrix vectors;
};

Spectrum descending_eigen(const Matrix& gram) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    if (es.info() != Eigen::Success) throw DataError("eigen-decomposition of the Gram matrix failed");
    Spectrum s;
    s.values = es.eigenvalues().reverse();
    s.vectors = es.eigenvectors().rowwise().reverse();
    return s;
}

Matrix symmetric_gram_rows(const Matrix& x) {
    // x x' with an exactly symmetric result.
    Matrix g = Matrix::Zero(x.rows(), x.rows());
    g.selfadjointView<Eigen::Lower>().rankUpdate(x);
    return g.selfadjointView<Eigen::Lower>();
}

bool is_diagonal(const Matrix& m) {
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i)
            if (i != j && m(i, j) != 0.0) return false;
    return true;
}

}  // namespace

FactorFit estimate_factors(const Matrix& returns, Index k, GramSide side) {
    const Index p = returns.rows();
    const Index t = returns.cols();
    if (k < 1 || k > std::min(p, t))
        throw std::invalid_argument("number of factors " + std::to_string(k) + " outside [1, " +
                                    std::to_string(std::min(p, t)) + "]");
    check_finite(returns, "return panel");

    const double sqrt_t = std::sqrt(static_cast<double>(t));
    const Index nev = std::min(p, t);
    Matrix factors(k, t);
    Vector eigenvalues(nev);

    bool use_asset = side == GramSide::asset || (side == GramSide::automatic && p < t);
    if (use_asset) {
        const Spectrum s = descending_eigen(symmetric_gram_rows(returns));
        // v = R'u / sqrt(lambda) needs a clearly nonzero lambda
        if (s.values(k - 1) <= 1e-12 * std::max(s.values(0), 1e-300)) {
            if (side == GramSide::asset) throw DataError("panel rank below requested factor count");
            use_asset = false;
        } else {
            for (Index j = 0; j < k; ++j) {
                Vector v = returns.transpose() * s.vectors.col(j);
                v /= v.norm();
                factors.row(j) = sqrt_t * v.transpose();
            }
            eigenvalues = s.values.head(nev);
        }
    }
    if (!use_asset) {
        const Spectrum s = descending_eigen(symmetric_gram_rows(returns.transpose()));
        factors = sqrt_t * s.vectors.leftCols(k).transpose();
        eigenvalues = s.values.head(nev);
    }

    FactorFit fit;
    fit.k = k;
    fit.loadings = returns * factors.transpose() / static_cast<double>(t);
    for (Index j = 0; j < k; ++j) {
        Index arg = 0;
        fit.loadings.col(j).cwiseAbs().maxCoeff(&arg);
        if (fit.loadings(arg, j) < 0.0) {
            fit.loadings.col(j) *= -1.0;
            factors.row(j) *= -1.0;
        }
    }
    fit.factors = std::move(factors);
    fit.factor_mean = fit.factors.rowwise().mean();
    fit.second_moment = fit.factors * fit.factors.transpose() / static_cast<double>(t);
    fit.residuals = returns - fit.loadings * fit.factors;
    fit.eigenvalues = std::move(eigenvalues);
    return fit;
}

FactorFit estimate_factors(const ReturnPanel& panel, Index k) {
    panel.validate();
    return estimate_factors(panel.returns, k);
}

FactorCountSelection select_num_factors_detailed(const Matrix& returns, Index max_k) {
    const Index p = returns.rows();
    const Index t = returns.cols();
    if (max_k < 1 || max_k > std::min(p, t) - 1)
        throw std::invalid_argument("max_k " + std::to_string(max_k) + " outside [1, " +
                                    std::to_string(std::min(p, t) - 1) + "]");
    check_finite(returns, "return panel");
    const double total = returns.squaredNorm();
    if (total == 0.0) throw DataError("all-zero return panel, factor count undefined");

    const Matrix gram = p < t ? symmetric_gram_rows(returns) : symmetric_gram_rows(returns.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw DataError("eigen-decomposition of the Gram matrix failed");
    const Vector lambda = es.eigenvalues().reverse();

    const double pd = static_cast<double>(p);
    const double td = static_cast<double>(t);
    const double penalty = ((pd + td) / (pd * td)) * std::log(pd * td / (pd + td));

    FactorCountSelection out;
    out.criterion.resize(static_cast<std::size_t>(max_k + 1));
    double explained = 0.0;
    for (Index k1 = 0; k1 <= max_k; ++k1) {
        if (k1 > 0) explained += std::max(lambda(k1 - 1), 0.0);
        const double v = std::max((total - explained) / (pd * td), std::numeric_limits<double>::min());
        out.criterion[static_cast<std::size_t>(k1)] = std::log(v) + static_cast<double>(k1) * penalty;
    }
    // strict comparison keeps the smaller K1 on ties
    out.k = 0;
    for (Index k1 = 1; k1 <= max_k; ++k1)
        if (out.criterion[static_cast<std::size_t>(k1)] < out.criterion[static_cast<std::size_t>(out.k)])
            out.k = k1;
    return out;
}

Index select_num_factors(const ReturnPanel& panel, Index max_k) {
    panel.validate();
    return select_num_factors_detailed(panel.returns, max_k).k;
}

ThresholdInputs threshold_inputs(const Matrix& residuals) {
    check_finite(residuals, "residual matrix");
    const Index p = residuals.rows();
    const double t = static_cast<double>(residuals.cols());
    if (p < 1 || residuals.cols() < 1) throw DataError("empty residual matrix");

    ThresholdInputs in;
    in.sample_cov = symmetric_gram_rows(residuals) / t;
    const Matrix fourth = symmetric_gram_rows(residuals.cwiseAbs2()) / t;
    // theta_ij = mean((e_i e_j)^2) - s_ij^2, same as the centred definition
    in.sqrt_theta = (fourth - in.sample_cov.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
    in.omega = std::sqrt(1.0 / static_cast<double>(p)) + std::sqrt(std::log(static_cast<double>(p)) / t);
    return in;
}

SparseResidualCov apply_threshold(const ThresholdInputs& in, double c, ThresholdRule rule) {
    if (!(c >= 0.0) || !std::isfinite(c))
        throw std::invalid_argument("threshold constant must be finite and >= 0");
    const Index p = in.sample_cov.rows();
    SparseResidualCov out;
    out.threshold_constant = c;
    out.rule = rule;
    out.matrix = in.sample_cov;
    Index zeros = 0;
    for (Index j = 0; j < p; ++j) {
        for (Index i = j + 1; i < p; ++i) {
            const double s = in.sample_cov(i, j);
            const double tau = c * in.sqrt_theta(i, j) * in.omega;
            double v;
            if (rule == ThresholdRule::hard) {
                v = std::abs(s) > tau ? s : 0.0;
            } else {
                const double shrunk = std::abs(s) - tau;
                v = shrunk > 0.0 ? std::copysign(shrunk, s) : 0.0;
            }
            out.matrix(i, j) = v;
            out.matrix(j, i) = v;
            if (v == 0.0) zeros += 2;
        }
    }
    out.zero_fraction = p > 1 ? static_cast<double>(zeros) / static_cast<double>(p * (p - 1)) : 0.0;
    return out;
}

SparseResidualCov threshold_residual_cov(const Matrix& residuals, double c, ThresholdRule rule) {
    return apply_threshold(threshold_inputs(residuals), c, rule);
}

std::vector<double> default_threshold_grid() {
    std::vector<double> grid(21);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.2 * static_cast<double>(i);
    return grid;
}

bool is_positive_definite(const Matrix& m) {
    if (m.rows() != m.cols() || m.rows() == 0 || !m.allFinite()) return false;
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) return false;
    return (llt.matrixLLT().diagonal().array() > 0.0).all();
}

ThresholdCvResult cross_validate_threshold_detailed(const Matrix& residuals, Index folds,
                                                    const std::vector<double>& grid,
                                                    std::uint64_t seed, ThresholdRule rule) {
    if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
    if (grid.empty()) throw std::invalid_argument("threshold grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end()) || grid.front() < 0.0)
        throw std::invalid_argument("threshold grid must be sorted ascending and nonnegative");
    check_finite(residuals, "residual matrix");
    const Index t = residuals.cols();
    const Index n_train = (2 * t) / 3;
    if (n_train < 2 || t - n_train < 1)
        throw DataError("too few periods (" + std::to_string(t) + ") for threshold cross-validation");

    const std::size_t ng = grid.size();
    const auto nf = static_cast<std::size_t>(folds);
    std::vector<std::vector<double>> loss(nf, std::vector<double>(ng));
    std::vector<std::vector<char>> pd(nf, std::vector<char>(ng)), diag(nf, std::vector<char>(ng));

    parallel_for(nf, [&](std::size_t f) {
        std::vector<Index> idx(static_cast<std::size_t>(t));
        std::iota(idx.begin(), idx.end(), Index{0});
        Engine eng = make_engine(seed, f);
        std::shuffle(idx.begin(), idx.end(), eng);
        std::sort(idx.begin(), idx.begin() + n_train);
        std::sort(idx.begin() + n_train, idx.end());

        Matrix train(residuals.rows(), n_train), test(residuals.rows(), t - n_train);
        for (Index j = 0; j < n_train; ++j) train.col(j) = residuals.col(idx[static_cast<std::size_t>(j)]);
        for (Index j = n_train; j < t; ++j)
            test.col(j - n_train) = residuals.col(idx[static_cast<std::size_t>(j)]);

        const ThresholdInputs in = threshold_inputs(train);
        const Matrix s_test = symmetric_gram_rows(test) / static_cast<double>(test.cols());
        for (std::size_t g = 0; g < ng; ++g) {
            const SparseResidualCov sc = apply_threshold(in, grid[g], rule);
            loss[f][g] = (sc.matrix - s_test).squaredNorm();
            pd[f][g] = is_positive_definite(sc.matrix);
            diag[f][g] = is_diagonal(sc.matrix);
        }
    });

    ThresholdCvResult out;
    out.grid = grid;
    out.loss.assign(ng, 0.0);
    out.pd_all_folds.assign(ng, true);
    std::vector<bool> diag_all(ng, true);
    for (std::size_t g = 0; g < ng; ++g) {
        for (std::size_t f = 0; f < nf; ++f) {
            out.loss[g] += loss[f][g];
            if (!pd[f][g]) out.pd_all_folds[g] = false;
            if (!diag[f][g]) diag_all[g] = false;
        }
        out.loss[g] /= static_cast<double>(nf);
    }

    std::size_t lower = ng;
    for (std::size_t g = 0; g < ng; ++g)
        if (out.pd_all_folds[g]) {
            lower = g;
            break;
        }
    if (lower == ng) {
        std::size_t bad = 0;
        while (bad + 1 < nf && pd[bad][ng - 1]) ++bad;
        throw DataError("threshold cross-validation: no grid value gives a positive definite matrix on fold " +
                        std::to_string(bad + 1));
    }
    std::size_t upper = ng - 1;
    for (std::size_t g = 0; g < ng; ++g)
        if (diag_all[g]) {
            upper = g;
            break;
        }
    upper = std::max(upper, lower);

    std::size_t best = lower;
    for (std::size_t g = lower + 1; g <= upper; ++g)
        if (out.pd_all_folds[g] && out.loss[g] < out.loss[best]) best = g;
    out.c = grid[best];
    out.c_lower = grid[lower];
    out.c_upper = grid[upper];
    return out;
}

double cross_validate_threshold(const Matrix& residuals, Index folds, const std::vector<double>& grid,
                                std::uint64_t seed, ThresholdRule rule) {
    return cross_validate_threshold_detailed(residuals, folds, grid, seed, rule).c;
}

SparseResidualCov threshold_with_pd_repair(const Matrix& residuals, double c,
                                           const std::vector<double>& grid, ThresholdRule rule) {
    const ThresholdInputs in = threshold_inputs(residuals);
    SparseResidualCov sc = apply_threshold(in, c, rule);
    if (is_positive_definite(sc.matrix)) return sc;
    for (const double g : grid) {
        if (g <= c) continue;
        sc = apply_threshold(in, g, rule);
        if (is_positive_definite(sc.matrix)) return sc;
    }
    throw DataError("residual covariance is not positive definite for any threshold constant >= " +
                    std::to_string(c));
}

CovModel assemble_return_cov(const FactorFit& fit, const SparseResidualCov& residual_cov) {
    const Index p = fit.loadings.rows();
    const Index k = fit.loadings.cols();
    if (residual_cov.matrix.rows() != p || residual_cov.matrix.cols() != p)
        throw std::invalid_argument("residual covariance is " + std::to_string(residual_cov.matrix.rows()) +
                                    "x" + std::to_string(residual_cov.matrix.cols()) + ", loadings have " +
                                    std::to_string(p) + " rows");
    if (fit.factor_mean.size() != k) throw std::invalid_argument("factor mean length does not match loadings");

    CovModel m;
    m.loadings = fit.loadings;
    m.factor_mean = fit.factor_mean;
    m.factor_cov = Matrix::Identity(k, k) - fit.factor_mean * fit.factor_mean.transpose();
    m.factor_cov = (0.5 * (m.factor_cov + m.factor_cov.transpose())).eval();
    const Matrix low_rank = fit.loadings * m.factor_cov * fit.loadings.transpose();
    m.sigma_r = 0.5 * (low_rank + low_rank.transpose()) + residual_cov.matrix;
    m.residual_cov = residual_cov;
    m.mean = fit.loadings * fit.factor_mean;
    return m;
}

PoetEstimate estimate_poet(const Matrix& returns, const PoetOptions& options) {
    Index k;
    if (options.k) {
        k = *options.k;
    } else {
        const Index cap = std::min(options.max_k, std::min(returns.rows(), returns.cols()) - 1);
        // a zero-factor model has no home in the robust program; keep one factor
        k = std::max<Index>(1, select_num_factors_detailed(returns, cap).k);
    }
    PoetEstimate est;
    est.fit = estimate_factors(returns, k);
    double c;
    if (options.fixed_c) {
        c = *options.fixed_c;
    } else {
        est.cv = cross_validate_threshold_detailed(est.fit.residuals, options.folds, options.grid, options.seed,
                                                   options.rule);
        c = est.cv->c;
    }
    const SparseResidualCov sc = threshold_with_pd_repair(est.fit.residuals, c, options.grid, options.rule);
    est.cov = assemble_return_cov(est.fit, sc);
    return est;
}

}  // namespace drofolio
