#include "drofolio/cli.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "drofolio/backtest.h"
#include "drofolio/factor_model.h"
#include "drofolio/panel.h"
#include "drofolio/report_io.h"
#include "drofolio/simulation.h"
#include "drofolio/uncertainty.h"

namespace drofolio {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

Json number(double x) {
    if (std::isfinite(x)) return x;
    return format_double(x);
}

Json vec_json(const Vector& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
    return a;
}

Json prov_json(const Provenance& prov) {
    return {{"version", prov.version}, {"config_hash", prov.config_hash}, {"seed", prov.seed}};
}

// Raw option values as parsed (file or flags). Optionals stay empty unless given.
struct Options {
    std::string input;
    std::string out;
    std::string missing = "reject";
    std::uint64_t seed = 1;

    std::optional<Index> k;
    Index max_k = 8;
    std::string threshold_rule = "soft";
    std::optional<double> threshold_c;
    bool threshold_cv = false;
    Index folds = 5;
    std::vector<double> grid;

    double target_return = 0.0005;
    double delta_level = 0.95;
    double rho_level = 0.95;
    std::optional<Index> bandwidth;
    double bandwidth_c = 5.0;
    Index draws = kDefaultQuantileDraws;
    std::optional<double> delta;
    std::optional<double> rho;

    std::string strategy = "hd_dro";
    std::vector<std::string> strategies{"hd_dro", "equal_weight", "mv_poet"};
    Index window = 0;
    Index holding = 0;

    std::string kind;
    std::vector<Index> p_values{30, 100};
    Index reps = 100;
    Index t = 200;
    Index test_t = 200;
    std::vector<double> levels{0.90, 0.95, 0.99};
    double sim_threshold_c = 0.5;
    std::vector<Index> j_values{1, 2, 3, 4, 5, 6};
};

// CLI11 only reads config files attached to the root app, so the file named by
// a subcommand's --config is folded into the argument list here. Keys already
// given on the command line are skipped.
std::vector<std::string> merge_config_file(const std::vector<std::string>& args) {
    std::string file;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
    }
    if (file.empty()) return args;
    if (!fs::is_regular_file(file)) throw CLI::FileError::Missing(file);
    auto given = [&](const std::string& key) {
        for (const std::string& a : args)
            if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
        return false;
    };
    std::vector<std::string> merged = args;
    for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_file(file)) {
        if (!item.parents.empty() || item.name == "config" || given(item.name)) continue;
        if (item.inputs.size() == 1) {
            merged.push_back("--" + item.name + "=" + item.inputs.front());
        } else {
            merged.push_back("--" + item.name);
            merged.insert(merged.end(), item.inputs.begin(), item.inputs.end());
        }
    }
    return merged;
}

void check_level(const char* name, double x) {
    if (!(x > 0.0 && x < 1.0)) throw std::invalid_argument(std::string(name) + " must lie in (0, 1)");
}

void add_common(CLI::App* sub, Options& o) {
    sub->set_config("--config", "", "key = value file mirroring the flags; flags given on the command line win");
    sub->add_option("--out", o.out, "output directory, created if missing")->required();
    sub->add_option("--seed", o.seed, "random seed (integer)")->capture_default_str();
}

void add_data(CLI::App* sub, Options& o) {
    sub->add_option("--input", o.input, "return panel CSV: time column, then one column per asset; per-period excess returns as decimals")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--missing", o.missing, "missing-cell policy: reject or drop (drop removes affected assets)")
        ->check(CLI::IsMember({"reject", "drop"}))
        ->capture_default_str();
    auto* k = sub->add_option("--k", o.k, "number of factors (count); unset selects it by Bai-Ng");
    sub->add_option("--max-k", o.max_k, "largest factor count searched by Bai-Ng (count)")
        ->capture_default_str()
        ->excludes(k);
    sub->add_option("--threshold-rule", o.threshold_rule, "residual thresholding rule: soft or hard")
        ->check(CLI::IsMember({"soft", "hard"}))
        ->capture_default_str();
    auto* tc = sub->add_option("--threshold-c", o.threshold_c, "fixed threshold constant C (dimensionless, >= 0)");
    sub->add_flag("--threshold-cv", o.threshold_cv, "cross-validate C over the grid (default when --threshold-c is unset)")
        ->excludes(tc);
    sub->add_option("--folds", o.folds, "cross-validation splits (count)")->capture_default_str();
    sub->add_option("--threshold-grid", o.grid, "candidate C values (dimensionless); default 0, 0.2, ..., 4")
        ->delimiter(',');
}

void add_uncertainty(CLI::App* sub, Options& o) {
    sub->add_option("--target-return", o.target_return, "return target per period (decimal, 0.0005 = 0.05%)")
        ->capture_default_str();
    sub->add_option("--delta-level", o.delta_level, "confidence level for the radius delta, in (0, 1)")
        ->capture_default_str();
    sub->add_option("--rho-level", o.rho_level, "confidence level for the return floor rho, in (0, 1)")
        ->capture_default_str();
    sub->add_option("--bandwidth", o.bandwidth, "HAC bandwidth (periods); unset uses the default rule");
    sub->add_option("--bandwidth-c", o.bandwidth_c, "constant c of the default bandwidth rule (dimensionless)")
        ->capture_default_str();
    sub->add_option("--draws", o.draws, "Monte Carlo draws for the radius quantile (count)")->capture_default_str();
}

void add_forced(CLI::App* sub, Options& o) {
    sub->add_option("--delta", o.delta, "force the radius delta (squared return units, >= 0)");
    sub->add_option("--rho", o.rho, "force the return floor rho (per-period decimal)");
}

void validate_common(const Options& o) {
    check_level("--delta-level", o.delta_level);
    check_level("--rho-level", o.rho_level);
    if (o.k && *o.k < 1) throw std::invalid_argument("--k must be >= 1");
    if (o.max_k < 1) throw std::invalid_argument("--max-k must be >= 1");
    if (o.folds < 1) throw std::invalid_argument("--folds must be >= 1");
    if (o.draws < 100) throw std::invalid_argument("--draws must be >= 100");
    if (o.threshold_c && *o.threshold_c < 0.0) throw std::invalid_argument("--threshold-c must be >= 0");
    if (o.bandwidth && *o.bandwidth < 1) throw std::invalid_argument("--bandwidth must be >= 1");
    if (!(o.bandwidth_c > 0.0)) throw std::invalid_argument("--bandwidth-c must be positive");
    if (o.delta && !(*o.delta >= 0.0)) throw std::invalid_argument("--delta must be >= 0");
    if (o.rho && !std::isfinite(*o.rho)) throw std::invalid_argument("--rho must be finite");
    for (double c : o.grid)
        if (!(c >= 0.0)) throw std::invalid_argument("--threshold-grid values must be >= 0");
}

// Effective configuration as sorted key = value text. Output location and the
// config file path are left out, so moving a run does not change its hash.
std::string canonical_text(const CLI::App* sub) {
    std::map<std::string, std::string> kv;
    for (const CLI::Option* opt : sub->get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "config" || name == "out") continue;
        std::string value;
        if (opt->count() > 0) {
            const auto& res = opt->results();
            for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
        } else {
            value = opt->get_default_str();
        }
        kv[name] = value;
    }
    std::string text = "command = " + sub->get_name() + "\n";
    for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
    return text;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    return f;
}

fs::path prepare_dir(const std::string& out) {
    fs::path dir(out);
    fs::create_directories(dir);
    return dir;
}

void write_run_config(const fs::path& dir, const std::string& text, const Provenance& prov) {
    auto f = open_out(dir / "run_config.toml");
    write_provenance_header(f, prov);
    f << text;
}

void write_json(const fs::path& path, const Json& j) {
    auto f = open_out(path);
    f << j.dump(2) << '\n';
}

void write_matrix_csv(const fs::path& path, const Provenance& prov, const std::string& corner,
                      const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels,
                      const Matrix& m) {
    auto f = open_out(path);
    write_provenance_header(f, prov);
    f << corner;
    for (const auto& c : col_labels) f << ',' << c;
    f << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        f << row_labels[static_cast<std::size_t>(i)];
        for (Index j = 0; j < m.cols(); ++j) f << ',' << format_double(m(i, j));
        f << '\n';
    }
}

std::vector<std::string> factor_labels(Index k) {
    std::vector<std::string> out;
    for (Index j = 1; j <= k; ++j) out.push_back("F" + std::to_string(j));
    return out;
}

ReturnPanel load_panel(const Options& o) {
    return read_panel_csv(o.input, o.missing == "drop" ? MissingPolicy::drop_assets : MissingPolicy::reject);
}

ThresholdRule rule_of(const Options& o) { return o.threshold_rule == "hard" ? ThresholdRule::hard : ThresholdRule::soft; }

FactorSelection k_selection(const Options& o) {
    return o.k ? FactorSelection::fixed(*o.k) : FactorSelection::bai_ng_up_to(o.max_k);
}

// Seed layout matches build_weights: stream 1 for cross-validation, stream 2 for quantile draws.
PoetOptions poet_options(const Options& o) {
    PoetOptions po;
    po.k = o.k;
    po.max_k = o.max_k;
    po.rule = rule_of(o);
    po.fixed_c = o.threshold_c;
    po.folds = o.folds;
    if (!o.grid.empty()) po.grid = o.grid;
    po.seed = substream_seed(o.seed, 1);
    return po;
}

CalibrationConfig calibration_config(const Options& o) {
    CalibrationConfig cc;
    cc.target_return = o.target_return;
    cc.delta_level = o.delta_level;
    cc.rho_level = o.rho_level;
    cc.bandwidth = o.bandwidth;
    cc.bandwidth_c = o.bandwidth_c;
    cc.draws = o.draws;
    cc.seed = substream_seed(o.seed, 2);
    return cc;
}

EstimationConfig estimation_config(const Options& o) {
    EstimationConfig ec;
    ec.rule = rule_of(o);
    ec.threshold_c = o.threshold_c;
    ec.folds = o.folds;
    if (!o.grid.empty()) ec.grid = o.grid;
    ec.bandwidth_c = o.bandwidth_c;
    ec.bandwidth = o.bandwidth;
    ec.draws = o.draws;
    ec.seed = o.seed;
    return ec;
}

StrategySpec strategy_spec(const Options& o, StrategyKind kind) {
    StrategySpec s;
    s.kind = kind;
    s.target_return = o.target_return;
    s.delta_level = o.delta_level;
    s.rho_level = o.rho_level;
    s.fixed_delta = o.delta;
    s.fixed_rho = o.rho;
    s.k_selection = k_selection(o);
    return s;
}

Json uncertainty_json(const UncertaintyParams& u) {
    return {{"delta", number(u.delta)},
            {"rho", number(u.rho)},
            {"delta_confidence", number(u.delta_confidence)},
            {"rho_confidence", number(u.rho_confidence)},
            {"target_return", number(u.target_return)},
            {"diagnostics",
             {{"l0_quantile", number(u.diagnostics.l0_quantile)},
              {"a_quantile", number(u.diagnostics.a_quantile)},
              {"q_value", number(u.diagnostics.q_value)},
              {"norm_bw", number(u.diagnostics.norm_bw)}}}};
}

int cmd_estimate(const Options& o, const std::string& canon, std::ostream& out) {
    validate_common(o);
    const ReturnPanel panel = load_panel(o);
    panel.validate();
    const Provenance prov = make_provenance(canon, o.seed);
    const fs::path dir = prepare_dir(o.out);
    write_run_config(dir, canon, prov);

    std::optional<FactorCountSelection> sel;
    if (!o.k) sel = select_num_factors_detailed(panel.returns, o.max_k);
    const PoetEstimate est = estimate_poet(panel.returns, poet_options(o));

    Json j;
    j["provenance"] = prov_json(prov);
    j["num_assets"] = panel.num_assets();
    j["num_periods"] = panel.num_periods();
    j["k"] = est.fit.k;
    j["k_selection"] = o.k ? "fixed" : "bai_ng";
    if (sel) {
        Json crit = Json::array();
        for (double c : sel->criterion) crit.push_back(number(c));
        j["bai_ng_criterion"] = crit;
    }
    j["eigenvalues"] = vec_json(est.fit.eigenvalues);
    j["factor_mean"] = vec_json(est.fit.factor_mean);
    const SparseResidualCov& rc = est.cov.residual_cov;
    j["threshold"] = {{"rule", o.threshold_rule},
                      {"c", number(rc.threshold_constant)},
                      {"zero_fraction", number(rc.zero_fraction)}};
    if (est.cv) {
        Json grid = Json::array(), loss = Json::array(), pd = Json::array();
        for (std::size_t i = 0; i < est.cv->grid.size(); ++i) {
            grid.push_back(number(est.cv->grid[i]));
            loss.push_back(number(est.cv->loss[i]));
            pd.push_back(static_cast<bool>(est.cv->pd_all_folds[i]));
        }
        j["threshold"]["cv"] = {{"c_lower", number(est.cv->c_lower)},
                                {"c_upper", number(est.cv->c_upper)},
                                {"grid", grid},
                                {"loss", loss},
                                {"pd_all_folds", pd}};
    }
    j["files"] = {"loadings.csv", "factors.csv", "covariance.csv", "residual_cov.csv"};
    write_json(dir / "estimate.json", j);

    const auto fl = factor_labels(est.fit.k);
    write_matrix_csv(dir / "loadings.csv", prov, "asset", panel.asset_ids, fl, est.fit.loadings);
    write_matrix_csv(dir / "factors.csv", prov, "time", panel.time_index, fl, est.fit.factors.transpose());
    write_matrix_csv(dir / "covariance.csv", prov, "asset", panel.asset_ids, panel.asset_ids, est.cov.sigma_r);
    write_matrix_csv(dir / "residual_cov.csv", prov, "asset", panel.asset_ids, panel.asset_ids, rc.matrix);

    out << "estimate: k = " << est.fit.k << ", threshold C = " << format_double(rc.threshold_constant) << ", wrote "
        << dir.string() << '\n';
    return exit_ok;
}

int cmd_calibrate(const Options& o, const std::string& canon, std::ostream& out) {
    validate_common(o);
    const ReturnPanel panel = load_panel(o);
    panel.validate();
    const Provenance prov = make_provenance(canon, o.seed);
    const fs::path dir = prepare_dir(o.out);
    write_run_config(dir, canon, prov);

    const PoetEstimate est = estimate_poet(panel.returns, poet_options(o));
    const Calibration cal = calibrate_uncertainty(est.fit, est.cov, calibration_config(o));

    Json j;
    j["provenance"] = prov_json(prov);
    j["k"] = est.fit.k;
    j["threshold_c"] = number(est.cov.residual_cov.threshold_constant);
    j["uncertainty"] = uncertainty_json(cal.params);
    j["longrun"] = {{"bandwidth", cal.longrun.bandwidth}, {"kernel", "bartlett"}};
    j["g_bar"] = cal.bound.unbounded ? Json("inf") : number(cal.bound.g_bar);
    j["feasible"] = cal.bound.unbounded || cal.params.rho <= cal.bound.g_bar;
    j["mv_weights"] = vec_json(cal.w_mv);
    write_json(dir / "uncertainty.json", j);

    out << "calibrate-uncertainty: delta = " << format_double(cal.params.delta)
        << ", rho = " << format_double(cal.params.rho) << '\n';
    return exit_ok;
}

int cmd_allocate(const Options& o, const std::string& canon, std::ostream& out, std::ostream& err) {
    validate_common(o);
    const StrategySpec spec = strategy_spec(o, parse_strategy(o.strategy));
    spec.validate();
    const ReturnPanel panel = load_panel(o);
    panel.validate();
    const Provenance prov = make_provenance(canon, o.seed);
    const fs::path dir = prepare_dir(o.out);
    write_run_config(dir, canon, prov);

    const WeightsResult res = build_weights(panel, spec, estimation_config(o));
    const WindowDiagnostics& d = res.diagnostics;

    Json j;
    j["provenance"] = prov_json(prov);
    j["strategy"] = o.strategy;
    j["k"] = d.k;
    j["threshold_c"] = number(d.threshold_c);
    if (d.uncertainty) j["uncertainty"] = uncertainty_json(*d.uncertainty);
    j["g_bar"] = d.g_bar_unbounded ? Json("inf") : number(d.g_bar);
    j["solver_status"] = d.solver_status.empty() ? "closed_form" : d.solver_status;
    j["note"] = d.note;

    if (d.fell_back) {
        j["weights"] = nullptr;
        write_json(dir / "allocation.json", j);
        err << "infeasible allocation: rho = " << format_double(d.uncertainty ? d.uncertainty->rho : 0.0)
            << " exceeds the feasibility bound g_bar = " << format_double(d.g_bar) << '\n';
        return exit_infeasible;
    }
    j["weights_sum"] = number(res.weights.sum());
    write_json(dir / "allocation.json", j);

    auto f = open_out(dir / "weights.csv");
    write_provenance_header(f, prov);
    f << "asset,weight\n";
    for (Index i = 0; i < res.weights.size(); ++i)
        f << panel.asset_ids[static_cast<std::size_t>(i)] << ',' << format_double(res.weights(i)) << '\n';

    out << "allocate: " << o.strategy << ", status " << j["solver_status"].get<std::string>() << ", "
        << res.weights.size() << " weights\n";
    return exit_ok;
}

int cmd_backtest(const Options& o, const std::string& canon, std::ostream& out) {
    validate_common(o);
    if (o.window < 1 || o.holding < 1) throw std::invalid_argument("--window and --holding must be >= 1");
    std::vector<StrategySpec> specs;
    for (const auto& name : o.strategies) {
        specs.push_back(strategy_spec(o, parse_strategy(name)));
        specs.back().validate();
    }
    const ReturnPanel panel = load_panel(o);
    panel.validate();
    const Provenance prov = make_provenance(canon, o.seed);
    const fs::path dir = prepare_dir(o.out);
    write_run_config(dir, canon, prov);

    const EstimationConfig ec = estimation_config(o);
    auto summary = open_out(dir / "summary.csv");
    write_provenance_header(summary, prov);
    summary << "strategy,cr,risk,sr,mdd,windows,fallbacks\n";
    for (const auto& spec : specs) {
        const BacktestReport rep = rolling_backtest(panel, spec, o.window, o.holding, ec);
        const std::string name = to_string(spec.kind);
        {
            auto f = open_out(dir / (name + "_report.json"));
            write_report_json(f, rep, prov);
        }
        {
            auto f = open_out(dir / (name + "_equity.csv"));
            write_equity_csv(f, rep, prov);
        }
        {
            auto f = open_out(dir / (name + "_weights.csv"));
            write_weights_csv(f, rep, prov);
        }
        Index fallbacks = 0;
        for (const auto& d : rep.diagnostics) fallbacks += d.fell_back ? 1 : 0;
        summary << name << ',' << format_double(rep.metrics.cr) << ',' << format_double(rep.metrics.risk) << ','
                << format_double(rep.metrics.sr) << ',' << format_double(rep.metrics.mdd) << ','
                << rep.diagnostics.size() << ',' << fallbacks << '\n';
        out << "backtest " << name << ": CR " << format_double(rep.metrics.cr) << ", risk "
            << format_double(rep.metrics.risk) << ", SR " << format_double(rep.metrics.sr) << ", MDD "
            << format_double(rep.metrics.mdd) << '\n';
    }
    return exit_ok;
}

int cmd_simulate(const Options& o, std::ostream& out) {
    ExperimentConfig cfg;
    const ExperimentKind kind = parse_experiment(o.kind);
    cfg.p_values = o.p_values;
    cfg.t = o.t;
    cfg.test_t = o.test_t;
    cfg.reps = o.reps;
    cfg.levels = o.levels;
    cfg.target_return = o.target_return;
    cfg.threshold_c = o.sim_threshold_c;
    cfg.draws = o.draws;
    cfg.j_values = o.j_values;
    cfg.seed = o.seed;
    for (double l : cfg.levels) check_level("--levels", l);
    cfg.validate();

    const Table table = run_experiment(kind, cfg);
    const Provenance prov = make_provenance(canonical_config(kind, cfg), o.seed);
    const fs::path dir = prepare_dir(o.out);
    {
        auto f = open_out(dir / (o.kind + ".csv"));
        write_table_csv(f, table, prov);
    }
    {
        auto f = open_out(dir / (o.kind + ".json"));
        write_table_sidecar(f, table, cfg, prov);
    }
    out << "simulate " << o.kind << ": " << table.rows.size() << " rows, wrote " << dir.string() << '\n';
    return exit_ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Distributionally robust portfolios for factor-driven return panels"};
    app.set_version_flag("--version", library_version());
    app.require_subcommand(1);
    Options o;

    auto* est = app.add_subcommand("estimate", "fit the factor model and the thresholded covariance");
    add_common(est, o);
    add_data(est, o);

    auto* cal = app.add_subcommand("calibrate-uncertainty", "choose the radius delta and the return floor rho");
    add_common(cal, o);
    add_data(cal, o);
    add_uncertainty(cal, o);

    auto* alloc = app.add_subcommand("allocate", "compute portfolio weights on the full panel");
    add_common(alloc, o);
    add_data(alloc, o);
    add_uncertainty(alloc, o);
    add_forced(alloc, o);
    alloc->add_option("--strategy", o.strategy, "hd_dro, bcz_dro, equal_weight, mv_sample or mv_poet")
        ->capture_default_str();

    auto* bt = app.add_subcommand("backtest", "rolling-window out-of-sample evaluation");
    add_common(bt, o);
    add_data(bt, o);
    add_uncertainty(bt, o);
    add_forced(bt, o);
    bt->add_option("--window", o.window, "estimation window length (periods)")->required();
    bt->add_option("--holding", o.holding, "holding period between rebalances (periods)")->required();
    bt->add_option("--strategies", o.strategies, "comma-separated strategy list")
        ->delimiter(',')
        ->capture_default_str();

    auto* sim = app.add_subcommand("simulate", "Monte Carlo experiments on the synthetic factor market");
    add_common(sim, o);
    sim->add_option("--kind", o.kind, "delta_table, q_table, portfolio_table, feasibility_table or uncertainty_curve")
        ->required();
    sim->add_option("--p", o.p_values, "asset counts, comma-separated")->delimiter(',')->capture_default_str();
    sim->add_option("--reps", o.reps, "replications (count, >= 10)")->capture_default_str();
    sim->add_option("--t", o.t, "training sample length (periods)")->capture_default_str();
    sim->add_option("--test-t", o.test_t, "out-of-sample length for portfolio_table (periods)")->capture_default_str();
    sim->add_option("--levels", o.levels, "confidence levels in (0, 1), comma-separated")
        ->delimiter(',')
        ->capture_default_str();
    sim->add_option("--target-return", o.target_return, "return target per period (decimal)")->capture_default_str();
    sim->add_option("--threshold-c", o.sim_threshold_c, "threshold constant C (dimensionless)")->capture_default_str();
    sim->add_option("--draws", o.draws, "Monte Carlo draws for radius quantiles (count)")->capture_default_str();
    sim->add_option("--j", o.j_values, "AR scale multipliers J for uncertainty_curve, comma-separated")
        ->delimiter(',')
        ->capture_default_str();

    try {
        const std::vector<std::string> full = merge_config_file(args);
        std::vector<std::string> rev(full.rbegin(), full.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::CallForVersion&) {
        out << library_version() << '\n';
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        // subcommand --help arrives here too, carrying the subcommand's own text
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        err << "error: " << e.what() << '\n';
        return exit_config;
    }

    try {
        if (est->parsed()) return cmd_estimate(o, canonical_text(est), out);
        if (cal->parsed()) return cmd_calibrate(o, canonical_text(cal), out);
        if (alloc->parsed()) return cmd_allocate(o, canonical_text(alloc), out, err);
        if (bt->parsed()) return cmd_backtest(o, canonical_text(bt), out);
        if (sim->parsed()) return cmd_simulate(o, out);
        return exit_config;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return exit_internal;
    }
}

}  // namespace drofolio
