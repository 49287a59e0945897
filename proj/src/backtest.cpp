#include "drofolio/backtest.h"

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "drofolio/parallel.h"

namespace drofolio {

namespace {

using Json = nlohmann::ordered_json;

Json number(double x) {
    if (std::isfinite(x)) return x;
    return format_double(x);
}

Vector equal_weights(Index p) { return Vector::Constant(p, 1.0 / static_cast<double>(p)); }

Matrix sample_covariance(const Matrix& r) {
    const Matrix z = r.colwise() - r.rowwise().mean();
    Matrix s = z * z.transpose() / static_cast<double>(r.cols() - 1);
    return 0.5 * (s + s.transpose());
}

PoetOptions poet_options(const StrategySpec& spec, const EstimationConfig& config) {
    PoetOptions po;
    if (spec.k_selection.bai_ng) {
        po.max_k = spec.k_selection.k;
    } else {
        po.k = spec.k_selection.k;
    }
    po.rule = config.rule;
    po.fixed_c = config.threshold_c;
    po.folds = config.folds;
    po.grid = config.grid;
    po.seed = substream_seed(config.seed, 1);
    return po;
}

WeightsResult hd_dro_weights(const ReturnPanel& window, const StrategySpec& spec, const EstimationConfig& config) {
    WeightsResult out;
    const PoetEstimate est = estimate_poet(window.returns, poet_options(spec, config));
    out.diagnostics.k = est.fit.k;
    out.diagnostics.threshold_c = est.cov.residual_cov.threshold_constant;

    UncertaintyParams params;
    if (spec.fixed_delta && spec.fixed_rho) {
        params.delta = *spec.fixed_delta;
        params.rho = *spec.fixed_rho;
        params.target_return = spec.target_return;
        params.delta_confidence = spec.delta_level;
        params.rho_confidence = spec.rho_level;
    } else {
        CalibrationConfig cc;
        cc.target_return = spec.target_return;
        cc.delta_level = spec.delta_level;
        cc.rho_level = spec.rho_level;
        cc.bandwidth = config.bandwidth;
        cc.bandwidth_c = config.bandwidth_c;
        cc.draws = config.draws;
        cc.seed = substream_seed(config.seed, 2);
        const Calibration cal = calibrate_uncertainty(est.fit, est.cov, cc);
        params = cal.params;
        if (spec.fixed_delta) {
            params = select_rho(*spec.fixed_delta, est.fit, cal.longrun, cal.w_mv, spec.target_return,
                                1.0 - spec.rho_level);
            params.delta_confidence = spec.delta_level;
        }
        if (spec.fixed_rho) params.rho = *spec.fixed_rho;
    }
    out.diagnostics.uncertainty = params;

    DroProblem pr;
    pr.loadings = est.cov.loadings;
    pr.factor_cov = est.cov.factor_cov;
    pr.factor_mean = est.cov.factor_mean;
    pr.residual_cov = est.cov.residual_cov.matrix;
    pr.delta = params.delta;
    pr.rho = params.rho;
    const PortfolioWeights sol = solve_hd_dro(pr, config.solver);
    out.diagnostics.g_bar = sol.g_bar;
    out.diagnostics.g_bar_unbounded = sol.g_bar_unbounded;
    out.diagnostics.solver_status = to_string(sol.status);
    if (sol.status == SolveStatus::infeasible) {
        out.weights = gmv_weights(est.cov.sigma_r);
        out.diagnostics.fell_back = true;
        out.diagnostics.note = "infeasible: rho " + format_double(params.rho) + " > g_bar " +
                               format_double(sol.g_bar) + ", minimum-variance fallback";
    } else {
        out.weights = sol.weights;
        if (sol.status == SolveStatus::max_iter)
            out.diagnostics.note = "solver stopped at max_iter, kkt " + format_double(sol.kkt_residual);
    }
    return out;
}

WeightsResult bcz_weights(const ReturnPanel& window, const StrategySpec& spec, const EstimationConfig& config) {
    WeightsResult out;
    const Vector mean = window.returns.rowwise().mean();
    const Matrix cov = sample_covariance(window.returns);
    const PortfolioWeights sol = solve_bcz_dro(mean, cov, *spec.fixed_delta, *spec.fixed_rho, config.solver);
    UncertaintyParams params;
    params.delta = *spec.fixed_delta;
    params.rho = *spec.fixed_rho;
    params.target_return = spec.target_return;
    out.diagnostics.uncertainty = params;
    out.diagnostics.g_bar = sol.g_bar;
    out.diagnostics.g_bar_unbounded = sol.g_bar_unbounded;
    out.diagnostics.solver_status = to_string(sol.status);
    if (sol.status == SolveStatus::infeasible) {
        // same rule as hd_dro: minimum variance on the strategy's own covariance
        out.diagnostics.fell_back = true;
        out.diagnostics.note = "infeasible: rho " + format_double(params.rho) + " > g_bar " + format_double(sol.g_bar);
        if (window.num_assets() < window.num_periods()) {
            out.weights = gmv_weights(cov);
            out.diagnostics.note += ", minimum-variance fallback";
        } else {
            out.weights = equal_weights(window.num_assets());
            out.diagnostics.note += ", sample covariance singular, equal-weight fallback";
        }
    } else {
        out.weights = sol.weights;
        if (sol.status == SolveStatus::max_iter)
            out.diagnostics.note = "solver stopped at max_iter, kkt " + format_double(sol.kkt_residual);
    }
    return out;
}

}  // namespace

std::string to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::hd_dro: return "hd_dro";
        case StrategyKind::bcz_dro: return "bcz_dro";
        case StrategyKind::equal_weight: return "equal_weight";
        case StrategyKind::mv_sample: return "mv_sample";
        case StrategyKind::mv_poet: return "mv_poet";
    }
    return "unknown";
}

StrategyKind parse_strategy(const std::string& name) {
    for (const auto k : {StrategyKind::hd_dro, StrategyKind::bcz_dro, StrategyKind::equal_weight,
                         StrategyKind::mv_sample, StrategyKind::mv_poet})
        if (name == to_string(k)) return k;
    throw std::invalid_argument("unknown strategy '" + name +
                                "' (expected hd_dro, bcz_dro, equal_weight, mv_sample or mv_poet)");
}

void StrategySpec::validate() const {
    auto level_ok = [](double l) { return l > 0.0 && l < 1.0; };
    if (!level_ok(delta_level) || !level_ok(rho_level))
        throw std::invalid_argument("confidence levels must lie in (0, 1)");
    if (rho_level <= 0.5) throw std::invalid_argument("rho confidence level must exceed 0.5");
    if (!std::isfinite(target_return)) throw std::invalid_argument("target return must be finite");
    if (fixed_delta && !(*fixed_delta >= 0.0)) throw std::invalid_argument("fixed delta must be >= 0");
    if (fixed_rho && !std::isfinite(*fixed_rho)) throw std::invalid_argument("fixed rho must be finite");
    if (kind == StrategyKind::bcz_dro && !(fixed_delta && fixed_rho))
        throw std::invalid_argument("bcz_dro needs fixed delta and rho");
    if (k_selection.k < 1) throw std::invalid_argument("factor count must be >= 1");
}

Metrics metrics(const std::vector<double>& returns) {
    const std::size_t n = returns.size();
    if (n < 2) throw std::invalid_argument("metrics need at least 2 returns");
    Metrics m;
    for (const double r : returns) m.cr += r;
    const double mean = m.cr / static_cast<double>(n);
    bool constant = true;
    double ss = 0.0;
    for (const double r : returns) {
        if (r != returns.front()) constant = false;
        ss += (r - mean) * (r - mean);
    }
    m.risk = constant ? 0.0 : std::sqrt(ss / static_cast<double>(n - 1));
    m.sr = m.risk > 0.0 ? m.cr / (static_cast<double>(n) * m.risk)
                        : std::copysign(std::numeric_limits<double>::infinity(), m.cr);
    // largest sum of -r over a nonempty interval
    double run = 0.0, best = -std::numeric_limits<double>::infinity();
    for (const double r : returns) {
        run = std::max(-r, run - r);
        best = std::max(best, run);
    }
    m.mdd = std::max(0.0, best);
    return m;
}

WeightsResult build_weights(const ReturnPanel& window, const StrategySpec& spec, const EstimationConfig& config) {
    spec.validate();
    window.validate();
    const Index p = window.num_assets();
    const Index t = window.num_periods();
    WeightsResult out;
    switch (spec.kind) {
        case StrategyKind::equal_weight:
            out.weights = equal_weights(p);
            break;
        case StrategyKind::mv_sample: {
            if (p >= t)
                throw DataError("sample covariance is singular with " + std::to_string(p) + " assets and " +
                                std::to_string(t) + " periods; use mv_poet");
            out.weights =
                mv_closed_form(window.returns.rowwise().mean(), sample_covariance(window.returns), spec.target_return);
            break;
        }
        case StrategyKind::mv_poet: {
            const PoetEstimate est = estimate_poet(window.returns, poet_options(spec, config));
            out.diagnostics.k = est.fit.k;
            out.diagnostics.threshold_c = est.cov.residual_cov.threshold_constant;
            out.weights = mv_closed_form(est.cov.mean, est.cov.sigma_r, spec.target_return);
            break;
        }
        case StrategyKind::hd_dro:
            out = hd_dro_weights(window, spec, config);
            break;
        case StrategyKind::bcz_dro:
            out = bcz_weights(window, spec, config);
            break;
    }
    if (!out.weights.allFinite()) throw DataError("strategy produced non-finite weights");
    return out;
}

std::vector<Rebalance> rebalance_schedule(Index periods, Index window, Index holding) {
    if (window < 1 || holding < 1) throw std::invalid_argument("window and holding must be >= 1");
    if (window + holding > periods)
        throw std::invalid_argument("window + holding (" + std::to_string(window + holding) +
                                    ") exceeds the panel length " + std::to_string(periods));
    std::vector<Rebalance> out;
    for (Index tc = window; tc < periods; tc += holding) out.push_back({tc, std::min(tc + holding, periods)});
    return out;
}

BacktestReport rolling_backtest(const ReturnPanel& panel, const StrategySpec& spec, Index window, Index holding,
                                const EstimationConfig& config) {
    spec.validate();
    panel.validate();
    const std::vector<Rebalance> schedule = rebalance_schedule(panel.num_periods(), window, holding);

    std::vector<WeightsResult> results(schedule.size());
    parallel_for(schedule.size(), [&](std::size_t i) {
        const Rebalance& rb = schedule[i];
        EstimationConfig cfg = config;
        cfg.seed = substream_seed(config.seed, i);
        try {
            results[i] = build_weights(panel.slice_periods(rb.decision - window, rb.decision), spec, cfg);
        } catch (const DataError& e) {
            throw DataError("window " + std::to_string(i) + ": " + e.what());
        }
    });

    BacktestReport rep;
    rep.spec = spec;
    rep.window = window;
    rep.holding = holding;
    rep.asset_ids = panel.asset_ids;
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        const Rebalance& rb = schedule[i];
        const std::string& when = panel.time_index[static_cast<std::size_t>(rb.decision)];
        WeightsResult& res = results[i];
        res.diagnostics.window_index = static_cast<Index>(i);
        res.diagnostics.rebalance_time = when;
        for (Index t = rb.decision; t < rb.end; ++t) {
            rep.times.push_back(panel.time_index[static_cast<std::size_t>(t)]);
            rep.portfolio_returns.push_back(res.weights.dot(panel.returns.col(t)));
        }
        rep.rebalance_times.push_back(when);
        rep.weights_history.push_back(res.weights);
        rep.diagnostics.push_back(std::move(res.diagnostics));
    }
    rep.metrics = metrics(rep.portfolio_returns);
    return rep;
}

void write_provenance_header(std::ostream& out, const Provenance& prov) {
    out << "# drofolio " << prov.version << "\n# config_hash " << prov.config_hash << "\n# seed " << prov.seed
        << '\n';
}

void write_report_json(std::ostream& out, const BacktestReport& report, const Provenance& prov) {
    Json j;
    j["provenance"] = {{"version", prov.version}, {"config_hash", prov.config_hash}, {"seed", prov.seed}};
    const StrategySpec& s = report.spec;
    Json spec = {{"kind", to_string(s.kind)},
                 {"target_return", number(s.target_return)},
                 {"delta_level", number(s.delta_level)},
                 {"rho_level", number(s.rho_level)},
                 {"k_selection", s.k_selection.bai_ng ? "bai_ng" : "fixed"},
                 {"k", s.k_selection.k}};
    spec["fixed_delta"] = s.fixed_delta ? number(*s.fixed_delta) : Json(nullptr);
    spec["fixed_rho"] = s.fixed_rho ? number(*s.fixed_rho) : Json(nullptr);
    j["spec"] = spec;
    j["window"] = report.window;
    j["holding"] = report.holding;
    j["metrics"] = {{"cr", number(report.metrics.cr)},
                    {"risk", number(report.metrics.risk)},
                    {"sr", number(report.metrics.sr)},
                    {"mdd", number(report.metrics.mdd)}};
    j["asset_ids"] = report.asset_ids;
    Json rets = Json::array();
    for (std::size_t i = 0; i < report.portfolio_returns.size(); ++i)
        rets.push_back({{"time", report.times[i]}, {"return", number(report.portfolio_returns[i])}});
    j["portfolio_returns"] = rets;
    Json hist = Json::array();
    for (std::size_t i = 0; i < report.weights_history.size(); ++i) {
        Json w = Json::array();
        for (Index a = 0; a < report.weights_history[i].size(); ++a) w.push_back(number(report.weights_history[i](a)));
        hist.push_back({{"rebalance_time", report.rebalance_times[i]}, {"weights", w}});
    }
    j["weights_history"] = hist;
    Json diags = Json::array();
    for (const WindowDiagnostics& d : report.diagnostics) {
        Json dj = {{"window_index", d.window_index}, {"rebalance_time", d.rebalance_time}, {"k", d.k},
                   {"threshold_c", number(d.threshold_c)}};
        if (d.uncertainty) {
            const UncertaintyParams& u = *d.uncertainty;
            dj["delta"] = number(u.delta);
            dj["rho"] = number(u.rho);
            dj["l0_quantile"] = number(u.diagnostics.l0_quantile);
            dj["a_quantile"] = number(u.diagnostics.a_quantile);
            dj["q_value"] = number(u.diagnostics.q_value);
            dj["norm_bw"] = number(u.diagnostics.norm_bw);
            dj["g_bar"] = d.g_bar_unbounded ? Json("unbounded") : number(d.g_bar);
            dj["solver_status"] = d.solver_status;
        }
        dj["fell_back"] = d.fell_back;
        if (!d.note.empty()) dj["note"] = d.note;
        diags.push_back(dj);
    }
    j["diagnostics"] = diags;
    out << j.dump(2) << '\n';
}

void write_equity_csv(std::ostream& out, const BacktestReport& report, const Provenance& prov) {
    write_provenance_header(out, prov);
    out << "time,portfolio_return,cumulative_return\n";
    double cum = 0.0;
    for (std::size_t i = 0; i < report.portfolio_returns.size(); ++i) {
        cum += report.portfolio_returns[i];
        out << report.times[i] << ',' << format_double(report.portfolio_returns[i]) << ',' << format_double(cum)
            << '\n';
    }
}

void write_weights_csv(std::ostream& out, const BacktestReport& report, const Provenance& prov) {
    write_provenance_header(out, prov);
    out << "rebalance_time,asset_id,weight\n";
    for (std::size_t i = 0; i < report.weights_history.size(); ++i)
        for (std::size_t a = 0; a < report.asset_ids.size(); ++a)
            out << report.rebalance_times[i] << ',' << report.asset_ids[a] << ','
                << format_double(report.weights_history[i](static_cast<Index>(a))) << '\n';
}

std::vector<double> read_equity_returns(std::istream& in) {
    std::vector<double> out;
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) throw DataError("equity CSV line " + std::to_string(line_no) + ": too few fields");
        double v = 0.0;
        const char* b = line.data() + c1 + 1;
        const char* e = line.data() + c2;
        const auto [ptr, ec] = std::from_chars(b, e, v);
        if (ec != std::errc() || ptr != e)
            throw DataError("equity CSV line " + std::to_string(line_no) + ": bad return value");
        out.push_back(v);
    }
    return out;
}

}  // namespace drofolio
