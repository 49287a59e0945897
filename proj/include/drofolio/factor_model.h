#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "drofolio/panel.h"
#include "drofolio/types.h"

namespace drofolio {

struct FactorFit {
    Index k = 0;
    Matrix factors;        // K x T, (1/T) F F' = I
    Matrix loadings;       // p x K
    Vector factor_mean;    // K
    Matrix second_moment;  // K x K, (1/T) sum F_t F_t'
    Matrix residuals;      // p x T, R - B F
    Vector eigenvalues;    // leading min(p, T) eigenvalues of R'R, descending
};

/// Which Gram matrix gets decomposed. R'R (T x T) and RR' (p x p) share
/// their nonzero spectrum, so both give the same estimator; automatic picks
/// the smaller one.
enum class GramSide { automatic, time, asset };

/// PCA factors: sqrt(T) times the top-k eigenvectors of R'R, loadings R F'/T.
/// Signs are fixed so the largest-magnitude loading of each factor is positive.
FactorFit estimate_factors(const Matrix& returns, Index k, GramSide side = GramSide::automatic);
FactorFit estimate_factors(const ReturnPanel& panel, Index k);

struct FactorCountSelection {
    Index k = 0;
    std::vector<double> criterion;  // indexed by K1 = 0..max_k
};

/// Bai-Ng information criterion with penalty ((p+T)/(pT)) log(pT/(p+T)).
FactorCountSelection select_num_factors_detailed(const Matrix& returns, Index max_k);
Index select_num_factors(const ReturnPanel& panel, Index max_k);

enum class ThresholdRule { soft, hard };

struct SparseResidualCov {
    Matrix matrix;
    double threshold_constant = 0.0;
    ThresholdRule rule = ThresholdRule::soft;
    double zero_fraction = 0.0;  // share of off-diagonal entries set to zero
};

/// Ingredients shared by every threshold constant: the uncentred sample
/// covariance s_ij, sqrt(theta_ij) and omega_T.
struct ThresholdInputs {
    Matrix sample_cov;
    Matrix sqrt_theta;
    double omega = 0.0;
};

ThresholdInputs threshold_inputs(const Matrix& residuals);
SparseResidualCov apply_threshold(const ThresholdInputs& in, double c, ThresholdRule rule);
SparseResidualCov threshold_residual_cov(const Matrix& residuals, double c,
                                         ThresholdRule rule = ThresholdRule::soft);

/// 21 points evenly spaced on [0, 4].
std::vector<double> default_threshold_grid();

struct ThresholdCvResult {
    double c = 0.0;
    double c_lower = 0.0;
    double c_upper = 0.0;
    std::vector<double> grid;
    std::vector<double> loss;         // mean Frobenius loss per grid value
    std::vector<bool> pd_all_folds;   // training matrix PD on every fold
};

/// Random 2/3 - 1/3 splits of the time indices, one per fold, drawn from
/// `seed`. Throws DataError if no grid value is PD on all folds.
ThresholdCvResult cross_validate_threshold_detailed(const Matrix& residuals, Index folds,
                                                    const std::vector<double>& grid,
                                                    std::uint64_t seed,
                                                    ThresholdRule rule = ThresholdRule::soft);
double cross_validate_threshold(const Matrix& residuals, Index folds, const std::vector<double>& grid,
                                std::uint64_t seed, ThresholdRule rule = ThresholdRule::soft);

/// Thresholds at c, and if the full-sample matrix is not PD walks up the grid
/// values above c until it is. Throws DataError when nothing on the grid works.
SparseResidualCov threshold_with_pd_repair(const Matrix& residuals, double c,
                                           const std::vector<double>& grid, ThresholdRule rule);

struct CovModel {
    Matrix sigma_r;
    Matrix loadings;
    Matrix factor_cov;  // I - mu mu'
    SparseResidualCov residual_cov;
    Vector mean;        // B mu
    Vector factor_mean;
};

CovModel assemble_return_cov(const FactorFit& fit, const SparseResidualCov& residual_cov);

bool is_positive_definite(const Matrix& m);

/// Full POET pipeline on one panel: factor count, PCA, thresholding
/// (fixed constant or cross-validated) and covariance assembly.
struct PoetOptions {
    std::optional<Index> k;  // unset: Bai-Ng with max_k
    Index max_k = 8;
    ThresholdRule rule = ThresholdRule::soft;
    std::optional<double> fixed_c;  // unset: cross-validate
    Index folds = 5;
    std::vector<double> grid = default_threshold_grid();
    std::uint64_t seed = 0;
};

struct PoetEstimate {
    FactorFit fit;
    CovModel cov;
    std::optional<ThresholdCvResult> cv;
};

PoetEstimate estimate_poet(const Matrix& returns, const PoetOptions& options);

}  // namespace drofolio
