#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "drofolio/panel.h"
#include "drofolio/parallel.h"
#include "drofolio/report_io.h"
#include "drofolio/types.h"
#include "drofolio/uncertainty.h"

namespace drofolio {

/// Synthetic market: K independent AR(1) factors with unit second moment,
/// block-diagonal Gaussian loadings (block i loads on factor i only) and
/// Gaussian errors with covariance error_cov.
struct DgpParams {
    Index k = 0;
    Vector ar_coef;       // alpha_i
    Vector ar_intercept;  // beta_i
    std::vector<Index> block_sizes;
    Vector loading_mean;
    Vector loading_sd;
    Matrix error_cov;

    Index num_assets() const;
    void validate() const;

    Vector stationary_mean() const;      // beta / (1 - alpha)
    Vector innovation_variance() const;  // (1 - alpha^2)(1 - mean^2)
    Matrix long_run_cov() const;         // diag(innovation variance / (1 - alpha)^2)
    Matrix factor_cov() const;           // diag(1 - mean^2)

    /// Two-factor stand-in market used by the experiments (not fitted to any
    /// real data set).
    static DgpParams fixture(Index p);
    /// Copy with every AR coefficient multiplied by j.
    DgpParams with_ar_scale(double j) const;
};

struct SimulatedPanel {
    ReturnPanel panel;
    Matrix loadings;  // p x K
    Matrix factors;   // K x T
};

Matrix draw_loadings(const DgpParams& params, Engine& eng);
SimulatedPanel simulate_panel(const DgpParams& params, Index t, std::uint64_t seed);
SimulatedPanel simulate_panel(const DgpParams& params, const Matrix& loadings, Index t, std::uint64_t seed);

struct DgpCalibration {
    DgpParams params;
    std::vector<std::string> flags;  // AR fits that hit the stationarity clip
};

/// Fits DgpParams to a panel: PCA factors, AR(1) by least squares per factor
/// (alpha clipped into [-0.99, 0.99]), loading moments per contiguous block,
/// error covariance by soft thresholding at C = 0.5.
DgpCalibration calibrate_dgp(const ReturnPanel& panel, Index k);

/// Population radius: the level-quantile of ||Z||^2 / (4 (1 - mu'mu)) with
/// Z ~ N(0, V_g), divided by T.
double oracle_delta(const DgpParams& params, Index t, double level, Index draws = kDefaultQuantileDraws,
                    std::uint64_t seed = 0);

/// Population mean-variance weights on (B mu, B S_F B' + S_e).
Vector oracle_mv_weights(const DgpParams& params, const Matrix& loadings, double target);

/// Population delta, rho and Q for given loadings.
UncertaintyParams oracle_uncertainty(const DgpParams& params, const Matrix& loadings, Index t, double delta_level,
                                     double rho_level, double target, Index draws = kDefaultQuantileDraws,
                                     std::uint64_t seed = 0);

enum class ExperimentKind { delta_table, q_table, portfolio_table, feasibility_table, uncertainty_curve };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment(const std::string& name);

struct ExperimentConfig {
    std::vector<Index> p_values{30, 100};
    Index t = 200;
    Index test_t = 200;
    Index reps = 100;
    std::vector<double> levels{0.90, 0.95, 0.99};
    double target_return = 0.0005;
    double threshold_c = 0.5;
    Index draws = kDefaultQuantileDraws;
    std::vector<Index> j_values{1, 2, 3, 4, 5, 6};
    std::uint64_t seed = 0;

    void validate() const;
};

// Per-replication results, kept for acceptance checks.
struct DeltaStudy {
    Index p = 0;
    std::vector<double> oracle;               // per level
    std::vector<std::vector<double>> values;  // [level][rep]
};

struct QStudy {
    Index p = 0;
    std::vector<double> oracle;
    std::vector<std::vector<double>> values;
};

struct PortfolioStudy {
    Index p = 0;
    std::vector<double> hd_dro, bcz_dro, equal_weight, hd_dro_oracle;  // out-of-sample SD per rep
    Index hd_fallbacks = 0;
    Index bcz_fallbacks = 0;
};

struct FeasibilityStudy {
    Index p = 0;
    double delta = 0.0;
    std::vector<double> g_bar;  // +inf when unbounded
    std::vector<double> rho;
    Index estimated_unbounded = 0;  // reps where Ghat with estimated inputs is unbounded
};

struct CurveStudy {
    Index p = 0;
    std::vector<Index> j_values;
    std::vector<std::vector<double>> median_estimated;  // [j][level]
    std::vector<std::vector<double>> oracle;            // [j][level]
};

DeltaStudy delta_study(const ExperimentConfig& config, Index p);
QStudy q_study(const ExperimentConfig& config, Index p);
PortfolioStudy portfolio_study(const ExperimentConfig& config, Index p);
FeasibilityStudy feasibility_study(const ExperimentConfig& config, Index p);
CurveStudy curve_study(const ExperimentConfig& config, Index p);

struct TableRow {
    std::string group;      // e.g. "p=30" or "J=3"
    std::string statistic;  // median, mean, sd, ...
    std::vector<double> values;
};

struct Table {
    ExperimentKind kind = ExperimentKind::delta_table;
    std::vector<std::string> columns;
    std::vector<TableRow> rows;
};

Table run_experiment(ExperimentKind kind, const ExperimentConfig& config);

void write_table_csv(std::ostream& out, const Table& table, const Provenance& prov);
void write_table_sidecar(std::ostream& out, const Table& table, const ExperimentConfig& config,
                         const Provenance& prov);

/// Canonical text of a config, hashed into provenance records.
std::string canonical_config(ExperimentKind kind, const ExperimentConfig& config);

/// Order statistics helpers shared with the acceptance checks.
double median_of(std::vector<double> x);
double mean_of(const std::vector<double>& x);
double sd_of(const std::vector<double>& x);

}  // namespace drofolio
