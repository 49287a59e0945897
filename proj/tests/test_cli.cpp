#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "drofolio/backtest.h"
#include "drofolio/cli.h"
#include "drofolio/simulation.h"

using namespace drofolio;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string out, err;
};

CliRun run(std::vector<std::string> args) {
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

class CliTest : public ::testing::Test {
protected:
    fs::path dir;
    fs::path panel;

    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("drofolio_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        panel = dir / "panel.csv";
        const SimulatedPanel sim = simulate_panel(DgpParams::fixture(20), 160, 4);
        std::ofstream f(panel);
        write_panel_csv(f, sim.panel);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::vector<std::string> base(const std::string& cmd, const std::string& out) const {
        return {cmd, "--input", panel.string(), "--out", (dir / out).string(), "--draws", "20000"};
    }
};

}  // namespace

TEST_F(CliTest, HelpListsFlagsWithUnits) {
    const CliRun r = run({"backtest", "--help"});
    EXPECT_EQ(r.code, 0);
    for (const char* flag : {"--input", "--out", "--target-return", "--delta-level", "--rho-level", "--window",
                             "--holding", "--k", "--max-k", "--seed", "--strategies", "--threshold-rule",
                             "--threshold-c", "--threshold-cv", "--config"})
        EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
    EXPECT_NE(r.out.find("(periods)"), std::string::npos);
    EXPECT_NE(r.out.find("per period (decimal"), std::string::npos);
    for (const char* cmd : {"estimate", "calibrate-uncertainty", "allocate", "simulate"})
        EXPECT_EQ(run({cmd, "--help"}).code, 0) << cmd;
}

TEST_F(CliTest, EstimateWritesProvenancedArtifacts) {
    const CliRun r = run({"estimate", "--input", panel.string(), "--out", (dir / "est").string(), "--seed", "5"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(slurp(dir / "est" / "estimate.json"));
    EXPECT_EQ(j["k"], 2);
    EXPECT_EQ(j["provenance"]["seed"], 5);
    EXPECT_TRUE(j["threshold"].contains("cv"));
    for (const char* f : {"loadings.csv", "factors.csv", "covariance.csv", "residual_cov.csv", "run_config.toml"}) {
        const std::string text = slurp(dir / "est" / f);
        EXPECT_EQ(text.rfind("# drofolio ", 0), 0u) << f;
        EXPECT_NE(text.find("# config_hash " + j["provenance"]["config_hash"].get<std::string>()), std::string::npos);
        EXPECT_NE(text.find("# seed 5"), std::string::npos) << f;
    }
}

TEST_F(CliTest, CalibrateWritesDiagnostics) {
    const CliRun r = run(base("calibrate-uncertainty", "cal"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(slurp(dir / "cal" / "uncertainty.json"));
    const auto& u = j["uncertainty"];
    EXPECT_GT(u["delta"].get<double>(), 0.0);
    EXPECT_LT(u["rho"].get<double>(), 0.0005);
    EXPECT_TRUE(u["diagnostics"].contains("q_value"));
    EXPECT_TRUE(u["diagnostics"].contains("l0_quantile"));
}

TEST_F(CliTest, AllocateFeasible) {
    const CliRun r = run(base("allocate", "alloc"));
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream f(dir / "alloc" / "weights.csv");
    std::string line;
    double sum = 0.0;
    int rows = 0;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("asset,", 0) == 0) continue;
        sum += std::stod(line.substr(line.find(',') + 1));
        ++rows;
    }
    EXPECT_EQ(rows, 20);
    EXPECT_NEAR(sum, 1.0, 1e-8);
    const auto j = nlohmann::json::parse(slurp(dir / "alloc" / "allocation.json"));
    EXPECT_EQ(j["solver_status"], "optimal");
}

TEST_F(CliTest, AllocateForcedFloorAboveBoundExitsFour) {
    auto args = base("allocate", "inf");
    args.insert(args.end(), {"--rho", "5"});
    const CliRun r = run(args);
    EXPECT_EQ(r.code, exit_infeasible);
    EXPECT_NE(r.err.find("rho = 5"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("g_bar = "), std::string::npos) << r.err;
}

TEST_F(CliTest, BinaryExitCode) {
    const std::string cmd = std::string(DROFOLIO_BIN) + " allocate --input " + panel.string() + " --out " +
                            (dir / "bin").string() + " --draws 20000 --rho 5 > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    ASSERT_TRUE(WIFEXITED(status));
    EXPECT_EQ(WEXITSTATUS(status), 4);
}

TEST_F(CliTest, BacktestWritesReports) {
    auto args = base("backtest", "bt");
    args.insert(args.end(), {"--window", "100", "--holding", "20", "--strategies", "hd_dro,equal_weight",
                             "--threshold-c", "0.5"});
    const CliRun r = run(args);
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"hd_dro_report.json", "hd_dro_equity.csv", "hd_dro_weights.csv", "equal_weight_equity.csv",
                          "summary.csv"})
        EXPECT_TRUE(fs::exists(dir / "bt" / f)) << f;
    std::ifstream eq(dir / "bt" / "hd_dro_equity.csv");
    const std::vector<double> back = read_equity_returns(eq);
    EXPECT_EQ(back.size(), 60u);
    const auto j = nlohmann::json::parse(slurp(dir / "bt" / "hd_dro_report.json"));
    const Metrics m = metrics(back);
    EXPECT_EQ(j["metrics"]["risk"].get<double>(), m.risk);
}

TEST_F(CliTest, ConfigFileWithFlagOverride) {
    const fs::path cfg = dir / "run.toml";
    {
        std::ofstream f(cfg);
        f << "input = \"" << panel.string() << "\"\nout = \"" << (dir / "cfg").string()
          << "\"\ndraws = 20000\ntarget-return = 0.001\nseed = 11\n";
    }
    const CliRun a = run({"calibrate-uncertainty", "--config", cfg.string()});
    ASSERT_EQ(a.code, 0) << a.err;
    auto j = nlohmann::json::parse(slurp(dir / "cfg" / "uncertainty.json"));
    EXPECT_EQ(j["uncertainty"]["target_return"].get<double>(), 0.001);
    EXPECT_EQ(j["provenance"]["seed"], 11);

    const CliRun b = run({"calibrate-uncertainty", "--config", cfg.string(), "--target-return", "0.002"});
    ASSERT_EQ(b.code, 0) << b.err;
    j = nlohmann::json::parse(slurp(dir / "cfg" / "uncertainty.json"));
    EXPECT_EQ(j["uncertainty"]["target_return"].get<double>(), 0.002);
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
    auto args = base("calibrate-uncertainty", "bad");
    args.insert(args.end(), {"--delta-level", "1.5"});
    EXPECT_EQ(run(args).code, exit_config);
    EXPECT_EQ(run({"estimate", "--input", (dir / "nope.csv").string(), "--out", dir.string()}).code, exit_config);
    EXPECT_EQ(run({"frobnicate"}).code, exit_config);
    auto bcz = base("backtest", "bcz");
    bcz.insert(bcz.end(), {"--window", "100", "--holding", "20", "--strategies", "bcz_dro"});
    EXPECT_EQ(run(bcz).code, exit_config);
}

TEST_F(CliTest, DataErrorsExitThree) {
    const fs::path broken = dir / "broken.csv";
    {
        std::ofstream f(broken);
        f << "t,A,B,C\n1,0.1,0.2,0.1\n2,NA,0.1,0.3\n3,0.1,0.1,0.2\n4,0.2,0.1,0.0\n5,0.1,0.0,0.1\n";
    }
    const CliRun r = run({"estimate", "--input", broken.string(), "--out", (dir / "x").string()});
    EXPECT_EQ(r.code, exit_data);
    EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
    // mv_sample needs more periods than assets
    auto args = base("backtest", "mvs");
    args.insert(args.end(), {"--window", "15", "--holding", "20", "--strategies", "mv_sample"});
    EXPECT_EQ(run(args).code, exit_data);
}

TEST_F(CliTest, SimulateIsByteIdentical) {
    std::string texts[2];
    for (int i = 0; i < 2; ++i) {
        const fs::path out = dir / ("sim" + std::to_string(i));
        const CliRun r = run({"simulate", "--kind", "delta_table", "--p", "30", "--reps", "100", "--seed", "7", "--out",
                           out.string()});
        ASSERT_EQ(r.code, 0) << r.err;
        texts[i] = slurp(out / "delta_table.csv") + slurp(out / "delta_table.json");
    }
    EXPECT_EQ(texts[0], texts[1]);
    EXPECT_EQ(texts[0].rfind("# drofolio ", 0), 0u);
}
