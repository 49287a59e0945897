#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "drofolio/factor_model.h"
#include "drofolio/longrun.h"
#include "drofolio/types.h"

namespace drofolio {

inline constexpr Index kDefaultQuantileDraws = 200000;

/// Inverse of the standard normal CDF.
double standard_normal_quantile(double p);

/// Monte Carlo quantiles of ||Z||^2 with Z ~ N(0, cov), sampled as
/// sum_i lambda_i chi2_1 over the eigenvalues of cov. One sample serves all
/// levels. Draws are split into fixed chunks with their own substreams, so
/// the result depends on (seed, draws) only.
std::vector<double> quadform_quantiles(const Matrix& cov, const std::vector<double>& levels, Index draws,
                                       std::uint64_t seed);
double quadform_quantile(const Matrix& cov, double level, Index draws, std::uint64_t seed);

/// delta = quantile / (4 T (1 - mu' S^{-1} mu)), with mu_quad = mu' S^{-1} mu.
double delta_from_moments(double quadform_q, double mu_quad, Index t);

/// Radius from a factor fit: 1/T times the level-quantile of
/// ||Z||^2 / (4 (1 - mu'mu)), Z ~ N(0, V).
double select_delta(const FactorFit& fit, const LongRunCov& longrun, double level,
                    Index draws = kDefaultQuantileDraws, std::uint64_t seed = 0);

/// Minimum-variance weights with w'1 = 1 and w'mean = target.
Vector mv_closed_form(const Vector& mean, const Matrix& cov, double target);

/// cov^{-1} 1 / (1' cov^{-1} 1).
Vector gmv_weights(const Matrix& cov);

struct UncertaintyDiagnostics {
    double l0_quantile = 0.0;  // quantile of the limit law, delta = l0_quantile / T
    double a_quantile = 0.0;   // eps-quantile of N(0, w'B V B'w)
    double q_value = 0.0;      // T^{-1/2} A / ||B'w||
    double norm_bw = 0.0;      // ||B'w||
};

struct UncertaintyParams {
    double delta = 0.0;
    double rho = 0.0;
    double delta_confidence = 0.95;
    double rho_confidence = 0.95;
    double target_return = 0.0;
    UncertaintyDiagnostics diagnostics;
};

/// rho = target - (sqrt(delta) ||B'w|| - A / sqrt(T)), A = sigma Phi^{-1}(eps),
/// sigma^2 = w'B V B'w.
UncertaintyParams rho_from_moments(double delta, const Matrix& loadings, const Matrix& longrun,
                                   const Vector& w_mv, double target, double eps, Index t);
UncertaintyParams select_rho(double delta, const FactorFit& fit, const LongRunCov& longrun, const Vector& w_mv,
                             double target, double eps);

struct FeasibilityBound {
    double g_bar = 0.0;
    bool unbounded = false;
};

/// Supremum over w'1 = 1 of w'B mu - sqrt(delta) ||B'w||: the largest rho for
/// which the robust feasible set is nonempty. Evaluated in closed form by
/// reducing to the affine set {B'w : w'1 = 1} in factor space.
FeasibilityBound max_feasible_rho(const Matrix& loadings, const Vector& factor_mean, double delta);

struct CalibrationConfig {
    double target_return = 0.0;
    double delta_level = 0.95;
    double rho_level = 0.95;  // 1 - eps
    std::optional<Index> bandwidth;
    double bandwidth_c = 5.0;
    bool iid_factors = false;
    Index draws = kDefaultQuantileDraws;
    std::uint64_t seed = 0;
};

struct Calibration {
    UncertaintyParams params;
    LongRunCov longrun;
    Vector w_mv;
    FeasibilityBound bound;
};

/// The full radius / floor recipe on an estimated model: HAC long-run
/// covariance, delta from the limit-law quantile, closed-form MV weights on
/// (B mu, Sigma_r), then rho.
Calibration calibrate_uncertainty(const FactorFit& fit, const CovModel& cov, const CalibrationConfig& config);

}  // namespace drofolio
