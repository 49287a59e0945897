#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "drofolio/backtest.h"
#include "drofolio/simulation.h"
#include "oracles.h"

using namespace drofolio;

namespace {

EstimationConfig fast_config(std::uint64_t seed = 3) {
    EstimationConfig c;
    c.threshold_c = 0.5;
    c.draws = 20000;
    c.seed = seed;
    return c;
}

StrategySpec spec_of(StrategyKind kind) {
    StrategySpec s;
    s.kind = kind;
    s.k_selection = FactorSelection::fixed(2);
    return s;
}

}  // namespace

TEST(Metrics, ConstantSeries) {
    const Metrics m = metrics({0.01, 0.01, 0.01, 0.01});
    EXPECT_NEAR(m.cr, 0.04, 1e-15);
    EXPECT_EQ(m.risk, 0.0);
    EXPECT_EQ(m.mdd, 0.0);
    EXPECT_TRUE(std::isinf(m.sr) && m.sr > 0);
}

TEST(Metrics, HandExample) {
    const std::vector<double> r{0.02, -0.03, 0.01, -0.02};
    const Metrics m = metrics(r);
    EXPECT_NEAR(m.cr, -0.02, 1e-15);
    EXPECT_NEAR(m.mdd, 0.04, 1e-15);
    EXPECT_NEAR(m.mdd, oracle::mdd_scan(r), 1e-15);
    EXPECT_NEAR(m.risk, oracle::sample_sd(r), 1e-15);
    EXPECT_NEAR(m.sr, m.cr / (4 * m.risk), 1e-15);
}

TEST(Metrics, RandomSeriesAgainstScan) {
    Engine eng(4);
    std::normal_distribution<double> n(0.001, 0.02);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> r(60);
        for (double& x : r) x = n(eng);
        const Metrics m = metrics(r);
        EXPECT_NEAR(m.mdd, oracle::mdd_scan(r), 1e-14);
        EXPECT_NEAR(m.risk, oracle::sample_sd(r), 1e-14);
    }
}

TEST(Metrics, Homogeneity) {
    const std::vector<double> r{0.02, -0.03, 0.01, -0.02, 0.015};
    std::vector<double> r2;
    for (double x : r) r2.push_back(2 * x);
    const Metrics a = metrics(r), b = metrics(r2);
    EXPECT_NEAR(b.cr, 2 * a.cr, 1e-15);
    EXPECT_NEAR(b.risk, 2 * a.risk, 1e-15);
    EXPECT_NEAR(b.sr, a.sr, 1e-12);
    EXPECT_NEAR(b.mdd, 2 * a.mdd, 1e-15);
}

TEST(Metrics, MonotoneCurveHasNoDrawdown) { EXPECT_EQ(metrics({0.01, 0.02, 0.005}).mdd, 0.0); }

TEST(Schedule, FourHundredPeriods) {
    const auto s = rebalance_schedule(400, 125, 21);
    ASSERT_EQ(s.size(), 14u);
    EXPECT_EQ(s.front().decision, 125);
    EXPECT_EQ(s.back().decision, 125 + 13 * 21);
    EXPECT_EQ(s.back().end, 400);  // truncated final block
    EXPECT_THROW(rebalance_schedule(100, 90, 20), std::invalid_argument);
}

TEST(Strategies, EqualWeight) {
    const ReturnPanel p = make_panel(Matrix::Random(4, 30) * 0.02);
    const WeightsResult w = build_weights(p, spec_of(StrategyKind::equal_weight), fast_config());
    EXPECT_EQ(w.weights, Vector::Constant(4, 0.25));
    const BacktestReport rep = rolling_backtest(p, spec_of(StrategyKind::equal_weight), 10, 5, fast_config());
    for (std::size_t i = 0; i < rep.portfolio_returns.size(); ++i)
        EXPECT_NEAR(rep.portfolio_returns[i], p.returns.col(static_cast<Index>(10 + i)).mean(), 1e-17);
}

TEST(Strategies, MvPoetHitsTarget) {
    const SimulatedPanel sim = simulate_panel(DgpParams::fixture(30), 120, 5);
    StrategySpec s = spec_of(StrategyKind::mv_poet);
    s.target_return = 0.001;
    const WeightsResult w = build_weights(sim.panel, s, fast_config());
    const PoetEstimate est = estimate_poet(sim.panel.returns, PoetOptions{.k = 2, .fixed_c = 0.5});
    EXPECT_NEAR(w.weights.dot(est.cov.mean), 0.001, 1e-8);
    EXPECT_NEAR(w.weights.sum(), 1.0, 1e-8);
}

TEST(Strategies, MvSampleNeedsMorePeriodsThanAssets) {
    const ReturnPanel p = make_panel(Matrix::Random(20, 15) * 0.02);
    try {
        build_weights(p, spec_of(StrategyKind::mv_sample), fast_config());
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("mv_poet"), std::string::npos);
    }
}

TEST(Strategies, BczNeedsFixedRadiusAndFloor) {
    EXPECT_THROW(spec_of(StrategyKind::bcz_dro).validate(), std::invalid_argument);
    StrategySpec s = spec_of(StrategyKind::bcz_dro);
    s.fixed_delta = 0.01;
    s.fixed_rho = -0.01;
    EXPECT_NO_THROW(s.validate());
}

TEST(Strategies, HdDroRadiusNearOracle) {
    const DgpParams d = DgpParams::fixture(30);
    const SimulatedPanel sim = simulate_panel(d, 200, 31);
    const WeightsResult w = build_weights(sim.panel, spec_of(StrategyKind::hd_dro), fast_config());
    ASSERT_TRUE(w.diagnostics.uncertainty.has_value());
    const double od = oracle_delta(d, 200, 0.95, 50000, 2);
    EXPECT_GT(w.diagnostics.uncertainty->delta, 0.5 * od);
    EXPECT_LT(w.diagnostics.uncertainty->delta, 2.0 * od);
    EXPECT_NEAR(w.weights.sum(), 1.0, 1e-8);
}

TEST(Backtest, HdDroBeatsEqualWeightOutOfSample) {
    const SimulatedPanel sim = simulate_panel(DgpParams::fixture(100), 400, 77);
    const BacktestReport hd = rolling_backtest(sim.panel, spec_of(StrategyKind::hd_dro), 200, 200, fast_config());
    const BacktestReport ew =
        rolling_backtest(sim.panel, spec_of(StrategyKind::equal_weight), 200, 200, fast_config());
    EXPECT_LT(hd.metrics.risk, ew.metrics.risk);
}

TEST(Backtest, NoLookAhead) {
    const SimulatedPanel sim = simulate_panel(DgpParams::fixture(20), 160, 8);
    ReturnPanel changed = sim.panel;
    const Index cut = 100;  // decision points 60, 80, 100 see only columns < cut
    changed.returns.rightCols(160 - cut).setRandom();
    const StrategySpec s = spec_of(StrategyKind::hd_dro);
    const BacktestReport a = rolling_backtest(sim.panel, s, 60, 20, fast_config());
    const BacktestReport b = rolling_backtest(changed, s, 60, 20, fast_config());
    ASSERT_EQ(a.weights_history.size(), 5u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.weights_history[i], b.weights_history[i]) << i;
    EXPECT_NE(a.weights_history[3], b.weights_history[3]);
}

TEST(Backtest, MetricsRecomputableAndWeightsSumToOne) {
    const SimulatedPanel sim = simulate_panel(DgpParams::fixture(20), 150, 9);
    for (StrategyKind k : {StrategyKind::hd_dro, StrategyKind::mv_poet, StrategyKind::mv_sample}) {
        const BacktestReport rep = rolling_backtest(sim.panel, spec_of(k), 60, 25, fast_config());
        const Metrics m = metrics(rep.portfolio_returns);
        EXPECT_EQ(m.cr, rep.metrics.cr);
        EXPECT_EQ(m.risk, rep.metrics.risk);
        EXPECT_EQ(m.mdd, rep.metrics.mdd);
        EXPECT_EQ(rep.portfolio_returns.size(), 90u);
        for (const Vector& w : rep.weights_history) EXPECT_NEAR(w.sum(), 1.0, 1e-8);
    }
}

TEST(Backtest, ByteIdenticalReportsAndCsvRoundTrip) {
    const SimulatedPanel sim = simulate_panel(DgpParams::fixture(20), 120, 10);
    EstimationConfig cfg = fast_config();
    cfg.threshold_c.reset();  // exercise the seeded cross-validation path
    const StrategySpec s = spec_of(StrategyKind::hd_dro);
    const Provenance prov = make_provenance("test", 3);
    std::string texts[2];
    for (auto& t : texts) {
        const BacktestReport rep = rolling_backtest(sim.panel, s, 60, 20, cfg);
        std::ostringstream os;
        write_report_json(os, rep, prov);
        write_weights_csv(os, rep, prov);
        t = os.str();
    }
    EXPECT_EQ(texts[0], texts[1]);

    const BacktestReport rep = rolling_backtest(sim.panel, s, 60, 20, cfg);
    std::stringstream eq;
    write_equity_csv(eq, rep, prov);
    EXPECT_EQ(eq.str().rfind("# drofolio ", 0), 0u);
    const std::vector<double> back = read_equity_returns(eq);
    EXPECT_EQ(back, rep.portfolio_returns);
    const Metrics m = metrics(back);
    EXPECT_EQ(m.sr, rep.metrics.sr);
    EXPECT_EQ(m.mdd, rep.metrics.mdd);
}

TEST(Backtest, BczRunsWithFixedParameters) {
    const SimulatedPanel sim = simulate_panel(DgpParams::fixture(20), 150, 12);
    StrategySpec s = spec_of(StrategyKind::bcz_dro);
    s.fixed_delta = 1e-3;
    s.fixed_rho = -0.05;
    const BacktestReport rep = rolling_backtest(sim.panel, s, 60, 30, fast_config());
    for (const auto& d : rep.diagnostics) EXPECT_FALSE(d.fell_back);
    for (const Vector& w : rep.weights_history) EXPECT_NEAR(w.sum(), 1.0, 1e-8);
}

TEST(Backtest, InfeasibleWindowFallsBack) {
    const SimulatedPanel sim = simulate_panel(DgpParams::fixture(20), 100, 13);
    StrategySpec s = spec_of(StrategyKind::hd_dro);
    s.fixed_delta = 4.0;  // exceeds any normalized factor mean, so the bound stays finite
    s.fixed_rho = 10.0;
    const BacktestReport rep = rolling_backtest(sim.panel, s, 60, 20, fast_config());
    for (const auto& d : rep.diagnostics) {
        EXPECT_TRUE(d.fell_back);
        EXPECT_EQ(d.solver_status, "infeasible");
    }
}
