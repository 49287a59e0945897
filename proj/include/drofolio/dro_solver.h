#pragma once

#include <string>

#include "drofolio/types.h"

namespace drofolio {

/// Dual robust program with factor structure:
///   min (sqrt(w'B S_F B'w) + sqrt(delta) ||B'w||)^2 + w' S_e w
///   s.t. w'1 = 1,  w'B mu >= rho + sqrt(delta) ||B'w||.
struct DroProblem {
    Matrix loadings;      // p x K
    Matrix factor_cov;    // K x K
    Vector factor_mean;   // K
    Matrix residual_cov;  // p x p
    double delta = 0.0;
    double rho = 0.0;

    Index num_assets() const { return loadings.rows(); }
    /// Throws std::invalid_argument on shape or sign problems.
    void validate() const;
};

enum class SolveStatus { optimal, infeasible, max_iter };

std::string to_string(SolveStatus status);

struct PortfolioWeights {
    Vector weights;             // empty when infeasible
    double objective = 0.0;     // unsmoothed
    double budget_residual = 0.0;
    double return_slack = 0.0;  // w'B mu - rho - sqrt(delta) ||B'w||
    SolveStatus status = SolveStatus::max_iter;
    Index iterations = 0;
    double kkt_residual = 0.0;
    double multiplier = 0.0;    // return-constraint multiplier
    double g_bar = 0.0;         // feasibility bound at the problem's delta
    bool g_bar_unbounded = false;
};

struct SolverOptions {
    double tol = 1e-8;
    Index max_iter = 50000;
};

PortfolioWeights solve_hd_dro(const DroProblem& problem, const SolverOptions& options = {});

/// Robust program on the raw return vector: identity loadings, factor
/// moments replaced by the asset mean and covariance, no residual term.
PortfolioWeights solve_bcz_dro(const Vector& mean, const Matrix& cov, double delta, double rho,
                               const SolverOptions& options = {});

DroProblem bcz_problem(const Vector& mean, const Matrix& cov, double delta, double rho);

struct Feasibility {
    bool feasible = false;
    double g_bar = 0.0;
    bool unbounded = false;
};

/// feasible iff rho <= g_bar + 1e-10.
Feasibility check_feasibility(const DroProblem& problem);

/// Unsmoothed objective at w.
double hd_dro_objective(const DroProblem& problem, const Vector& w);

/// Gradient of the smoothed objective (norms replaced by sqrt(x'x + eps^2)).
Vector hd_dro_gradient(const DroProblem& problem, const Vector& w, double smoothing = 1e-10);

/// w'B mu - rho - sqrt(delta) ||B'w||.
double return_slack(const DroProblem& problem, const Vector& w);

/// Relative norm of the Lagrangian gradient with the budget and return
/// multipliers fitted by least squares (return multiplier >= 0, and only
/// when the return constraint is near-active). Zero at an optimum.
double kkt_residual(const DroProblem& problem, const Vector& w);

}  // namespace drofolio
