#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "drofolio/dro_solver.h"
#include "drofolio/factor_model.h"
#include "drofolio/panel.h"
#include "drofolio/report_io.h"
#include "drofolio/uncertainty.h"

namespace drofolio {

enum class StrategyKind { hd_dro, bcz_dro, equal_weight, mv_sample, mv_poet };

std::string to_string(StrategyKind kind);
StrategyKind parse_strategy(const std::string& name);

struct FactorSelection {
    bool bai_ng = true;
    Index k = 8;  // max_k under Bai-Ng, the factor count otherwise

    static FactorSelection fixed(Index k) { return {false, k}; }
    static FactorSelection bai_ng_up_to(Index max_k) { return {true, max_k}; }
};

struct StrategySpec {
    StrategyKind kind = StrategyKind::hd_dro;
    double target_return = 0.0005;  // per period
    double delta_level = 0.95;
    double rho_level = 0.95;
    std::optional<double> fixed_delta;
    std::optional<double> fixed_rho;
    FactorSelection k_selection;

    void validate() const;
};

/// Tuning shared by every strategy that estimates a factor model.
struct EstimationConfig {
    ThresholdRule rule = ThresholdRule::soft;
    std::optional<double> threshold_c;  // unset: cross-validate
    Index folds = 5;
    std::vector<double> grid = default_threshold_grid();
    double bandwidth_c = 5.0;
    std::optional<Index> bandwidth;
    Index draws = kDefaultQuantileDraws;
    std::uint64_t seed = 0;
    SolverOptions solver;
};

struct Metrics {
    double cr = 0.0;    // cumulative excess return
    double risk = 0.0;  // sample standard deviation
    double sr = 0.0;    // cr / (n risk), signed infinity when risk == 0
    double mdd = 0.0;   // largest loss over any contiguous interval, >= 0
};

Metrics metrics(const std::vector<double>& returns);

struct WindowDiagnostics {
    Index window_index = 0;
    std::string rebalance_time;
    Index k = 0;
    double threshold_c = 0.0;
    std::optional<UncertaintyParams> uncertainty;
    double g_bar = 0.0;
    bool g_bar_unbounded = false;
    std::string solver_status;
    bool fell_back = false;
    std::string note;
};

struct WeightsResult {
    Vector weights;
    WindowDiagnostics diagnostics;
};

/// Weights from one estimation window. `seed` drives threshold
/// cross-validation and the quantile draws.
WeightsResult build_weights(const ReturnPanel& window, const StrategySpec& spec, const EstimationConfig& config);

struct Rebalance {
    Index decision = 0;  // first out-of-sample column; fit uses [decision - window, decision)
    Index end = 0;       // holding ends before this column
};

std::vector<Rebalance> rebalance_schedule(Index periods, Index window, Index holding);

struct BacktestReport {
    StrategySpec spec;
    Index window = 0;
    Index holding = 0;
    std::vector<std::string> asset_ids;
    std::vector<std::string> times;  // one per realized return
    std::vector<double> portfolio_returns;
    std::vector<std::string> rebalance_times;
    std::vector<Vector> weights_history;
    Metrics metrics;
    std::vector<WindowDiagnostics> diagnostics;
};

BacktestReport rolling_backtest(const ReturnPanel& panel, const StrategySpec& spec, Index window, Index holding,
                                const EstimationConfig& config = {});

// Report files. Every file starts with provenance comment lines.
void write_report_json(std::ostream& out, const BacktestReport& report, const Provenance& prov);
void write_equity_csv(std::ostream& out, const BacktestReport& report, const Provenance& prov);
void write_weights_csv(std::ostream& out, const BacktestReport& report, const Provenance& prov);
void write_provenance_header(std::ostream& out, const Provenance& prov);

/// Portfolio returns read back from an equity-curve CSV.
std::vector<double> read_equity_returns(std::istream& in);

}  // namespace drofolio
