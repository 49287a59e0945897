#include "drofolio/simulation.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "drofolio/backtest.h"
#include "drofolio/dro_solver.h"
#include "drofolio/factor_model.h"
#include "drofolio/longrun.h"

namespace drofolio {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

Matrix error_factor(const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    // singular but PSD: symmetric square root
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

// Seeds: stream 0 of the per-(experiment, p) seed draws the fixed loadings,
// replication r uses stream r + 1.
std::uint64_t experiment_seed(const ExperimentConfig& c, ExperimentKind kind, Index p) {
    return substream_seed(substream_seed(c.seed, static_cast<std::uint64_t>(kind)), static_cast<std::uint64_t>(p));
}

std::uint64_t rep_seed(std::uint64_t base, Index rep) { return substream_seed(base, static_cast<std::uint64_t>(rep) + 1); }

Matrix fixed_loadings(const DgpParams& params, std::uint64_t base) {
    Engine eng = make_engine(base, 0);
    return draw_loadings(params, eng);
}

std::vector<double> estimated_deltas(const ReturnPanel& panel, Index k, const std::vector<double>& levels,
                                     Index draws, std::uint64_t seed) {
    const FactorFit fit = estimate_factors(panel.returns, k);
    const LongRunCov v = hac_long_run_cov(fit.factors, fit.factor_mean,
                                          default_bandwidth(panel.num_periods(), panel.num_assets()));
    const std::vector<double> q = quadform_quantiles(v.matrix, levels, draws, seed);
    std::vector<double> out;
    for (const double qi : q) out.push_back(delta_from_moments(qi, fit.factor_mean.squaredNorm(), panel.num_periods()));
    return out;
}

std::vector<double> oracle_deltas(const DgpParams& params, Index t, const std::vector<double>& levels, Index draws,
                                  std::uint64_t seed) {
    const std::vector<double> q = quadform_quantiles(params.long_run_cov(), levels, draws, seed);
    std::vector<double> out;
    const double mu2 = params.stationary_mean().squaredNorm();
    for (const double qi : q) out.push_back(delta_from_moments(qi, mu2, t));
    return out;
}

std::string level_label(double level) {
    std::ostringstream os;
    os << level;
    return os.str();
}

void summary_rows(Table& table, const std::string& group, const std::vector<double>& oracle,
                  const std::vector<std::vector<double>>& values) {
    const std::size_t n = values.size();
    std::vector<double> med(n), mean(n), sd(n), mx(n), med_r(n), mean_r(n), sd_m(n), mx_m(n);
    for (std::size_t l = 0; l < n; ++l) {
        med[l] = median_of(values[l]);
        mean[l] = mean_of(values[l]);
        sd[l] = sd_of(values[l]);
        mx[l] = *std::max_element(values[l].begin(), values[l].end());
        med_r[l] = med[l] / oracle[l];
        mean_r[l] = mean[l] / oracle[l];
        sd_m[l] = sd[l] / std::abs(med[l]);
        mx_m[l] = mx[l] / med[l];
    }
    table.rows.push_back({group, "oracle", oracle});
    table.rows.push_back({group, "median", med});
    table.rows.push_back({group, "mean", mean});
    table.rows.push_back({group, "sd", sd});
    table.rows.push_back({group, "max", mx});
    table.rows.push_back({group, "median_ratio", med_r});
    table.rows.push_back({group, "mean_ratio", mean_r});
    table.rows.push_back({group, "sd_over_median", sd_m});
    table.rows.push_back({group, "max_over_median", mx_m});
}

}  // namespace

double median_of(std::vector<double> x) {
    if (x.empty()) return kNan;
    std::sort(x.begin(), x.end());
    const std::size_t n = x.size();
    return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

double mean_of(const std::vector<double>& x) {
    if (x.empty()) return kNan;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sd_of(const std::vector<double>& x) {
    if (x.size() < 2) return kNan;
    const double m = mean_of(x);
    double ss = 0.0;
    for (const double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

Index DgpParams::num_assets() const {
    return std::accumulate(block_sizes.begin(), block_sizes.end(), Index{0});
}

void DgpParams::validate() const {
    if (k < 1) throw std::invalid_argument("DGP needs at least one factor");
    if (ar_coef.size() != k || ar_intercept.size() != k || loading_mean.size() != k || loading_sd.size() != k ||
        static_cast<Index>(block_sizes.size()) != k)
        throw std::invalid_argument("DGP parameter vectors must all have length K");
    for (Index i = 0; i < k; ++i) {
        if (!(std::abs(ar_coef(i)) < 1.0))
            throw std::invalid_argument("AR coefficient " + std::to_string(ar_coef(i)) + " is not stationary");
        if (block_sizes[static_cast<std::size_t>(i)] < 1) throw std::invalid_argument("empty loading block");
        if (!(loading_sd(i) >= 0.0)) throw std::invalid_argument("loading sd must be >= 0");
    }
    if (!((innovation_variance().array() > 0.0).all()))
        throw std::invalid_argument("innovation variance must be positive (|beta / (1 - alpha)| < 1)");
    const Index p = num_assets();
    if (error_cov.rows() != p || error_cov.cols() != p)
        throw std::invalid_argument("error covariance must be p x p with p = sum of block sizes");
    Eigen::SelfAdjointEigenSolver<Matrix> es(error_cov, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, error_cov.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("error covariance is not positive semidefinite");
}

Vector DgpParams::stationary_mean() const {
    return ar_intercept.array() / (1.0 - ar_coef.array());
}

Vector DgpParams::innovation_variance() const {
    const Vector mu = stationary_mean();
    return (1.0 - ar_coef.array().square()) * (1.0 - mu.array().square());
}

Matrix DgpParams::long_run_cov() const {
    const Vector v = innovation_variance().array() / (1.0 - ar_coef.array()).square();
    return v.asDiagonal();
}

Matrix DgpParams::factor_cov() const {
    const Vector v = 1.0 - stationary_mean().array().square();
    return v.asDiagonal();
}

DgpParams DgpParams::fixture(Index p) {
    if (p < 2) throw std::invalid_argument("fixture needs p >= 2");
    DgpParams d;
    d.k = 2;
    d.ar_coef = Vector{{0.15, 0.10}};
    d.ar_intercept = Vector{{0.02, 0.01}};
    d.block_sizes = {p / 2, p - p / 2};
    d.loading_mean = Vector{{1.0, 0.9}};
    d.loading_sd = Vector{{0.3, 0.3}};
    d.error_cov = Matrix::Zero(p, p);
    for (Index i = 0; i < p; ++i) {
        d.error_cov(i, i) = 1e-4;
        if (i + 1 < p) {
            d.error_cov(i, i + 1) = 2e-5;
            d.error_cov(i + 1, i) = 2e-5;
        }
    }
    return d;
}

DgpParams DgpParams::with_ar_scale(double j) const {
    DgpParams d = *this;
    d.ar_coef *= j;
    d.validate();
    return d;
}

Matrix draw_loadings(const DgpParams& params, Engine& eng) {
    params.validate();
    std::normal_distribution<double> normal;
    Matrix b = Matrix::Zero(params.num_assets(), params.k);
    Index row = 0;
    for (Index i = 0; i < params.k; ++i) {
        for (Index r = 0; r < params.block_sizes[static_cast<std::size_t>(i)]; ++r, ++row)
            b(row, i) = params.loading_mean(i) + params.loading_sd(i) * normal(eng);
    }
    return b;
}

SimulatedPanel simulate_panel(const DgpParams& params, const Matrix& loadings, Index t, std::uint64_t seed) {
    params.validate();
    if (t < 2) throw std::invalid_argument("simulation needs t >= 2");
    const Index p = params.num_assets();
    const Index k = params.k;
    if (loadings.rows() != p || loadings.cols() != k) throw std::invalid_argument("loadings must be p x K");

    const Vector mu = params.stationary_mean();
    const Vector sv = params.innovation_variance().cwiseSqrt();
    std::normal_distribution<double> normal;

    Matrix f(k, t);
    Engine ef = make_engine(seed, 1);
    for (Index i = 0; i < k; ++i) f(i, 0) = mu(i) + std::sqrt(1.0 - mu(i) * mu(i)) * normal(ef);
    for (Index s = 1; s < t; ++s)
        for (Index i = 0; i < k; ++i)
            f(i, s) = params.ar_intercept(i) + params.ar_coef(i) * f(i, s - 1) + sv(i) * normal(ef);

    Matrix z(p, t);
    Engine ee = make_engine(seed, 2);
    for (Index s = 0; s < t; ++s)
        for (Index i = 0; i < p; ++i) z(i, s) = normal(ee);

    SimulatedPanel out;
    out.panel = make_panel(loadings * f + error_factor(params.error_cov) * z);
    out.loadings = loadings;
    out.factors = std::move(f);
    return out;
}

SimulatedPanel simulate_panel(const DgpParams& params, Index t, std::uint64_t seed) {
    Engine eng = make_engine(seed, 0);
    return simulate_panel(params, draw_loadings(params, eng), t, seed);
}

DgpCalibration calibrate_dgp(const ReturnPanel& panel, Index k) {
    panel.validate();
    const Index p = panel.num_assets();
    const Index t = panel.num_periods();
    if (k < 1 || k > p) throw std::invalid_argument("factor count outside [1, p]");
    if (t <= 10 * k) throw DataError("panel too short to calibrate " + std::to_string(k) + " AR(1) factors");

    const FactorFit fit = estimate_factors(panel.returns, k);
    DgpCalibration out;
    DgpParams& d = out.params;
    d.k = k;
    d.ar_coef.resize(k);
    d.ar_intercept.resize(k);
    for (Index i = 0; i < k; ++i) {
        const Vector x = fit.factors.row(i).head(t - 1).transpose();
        const Vector y = fit.factors.row(i).tail(t - 1).transpose();
        const double mx = x.mean(), my = y.mean();
        const double sxx = (x.array() - mx).square().sum();
        double a = sxx > 0.0 ? ((x.array() - mx) * (y.array() - my)).sum() / sxx : 0.0;
        if (std::abs(a) > 0.99) {
            out.flags.push_back("factor " + std::to_string(i + 1) + ": AR coefficient " + format_double(a) +
                                " clipped to +-0.99");
            a = std::copysign(0.99, a);
        }
        double b = my - a * mx;
        if (std::abs(b / (1.0 - a)) >= 0.99) {
            out.flags.push_back("factor " + std::to_string(i + 1) + ": stationary mean shrunk below 0.99");
            b = std::copysign(0.99 * (1.0 - a), b);
        }
        d.ar_coef(i) = a;
        d.ar_intercept(i) = b;
    }

    d.block_sizes.clear();
    d.loading_mean.resize(k);
    d.loading_sd.resize(k);
    Index row = 0;
    for (Index i = 0; i < k; ++i) {
        const Index n = p / k + (i < p % k ? 1 : 0);
        d.block_sizes.push_back(n);
        const Vector col = fit.loadings.col(i).segment(row, n);
        d.loading_mean(i) = col.mean();
        d.loading_sd(i) = n > 1 ? std::sqrt((col.array() - col.mean()).square().sum() / static_cast<double>(n - 1)) : 0.0;
        row += n;
    }
    d.error_cov = threshold_with_pd_repair(fit.residuals, 0.5, default_threshold_grid(), ThresholdRule::soft).matrix;
    d.validate();
    return out;
}

double oracle_delta(const DgpParams& params, Index t, double level, Index draws, std::uint64_t seed) {
    params.validate();
    return oracle_deltas(params, t, {level}, draws, seed).front();
}

Vector oracle_mv_weights(const DgpParams& params, const Matrix& loadings, double target) {
    Matrix sigma = loadings * params.factor_cov() * loadings.transpose() + params.error_cov;
    sigma = (0.5 * (sigma + sigma.transpose())).eval();
    return mv_closed_form(loadings * params.stationary_mean(), sigma, target);
}

UncertaintyParams oracle_uncertainty(const DgpParams& params, const Matrix& loadings, Index t, double delta_level,
                                     double rho_level, double target, Index draws, std::uint64_t seed) {
    const double delta = oracle_delta(params, t, delta_level, draws, seed);
    const Vector w = oracle_mv_weights(params, loadings, target);
    UncertaintyParams u = rho_from_moments(delta, loadings, params.long_run_cov(), w, target, 1.0 - rho_level, t);
    u.delta_confidence = delta_level;
    return u;
}

std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::delta_table: return "delta_table";
        case ExperimentKind::q_table: return "q_table";
        case ExperimentKind::portfolio_table: return "portfolio_table";
        case ExperimentKind::feasibility_table: return "feasibility_table";
        case ExperimentKind::uncertainty_curve: return "uncertainty_curve";
    }
    return "unknown";
}

ExperimentKind parse_experiment(const std::string& name) {
    for (const auto k : {ExperimentKind::delta_table, ExperimentKind::q_table, ExperimentKind::portfolio_table,
                         ExperimentKind::feasibility_table, ExperimentKind::uncertainty_curve})
        if (name == to_string(k)) return k;
    throw std::invalid_argument("unknown experiment kind '" + name + "'");
}

void ExperimentConfig::validate() const {
    if (p_values.empty()) throw std::invalid_argument("experiment needs at least one p");
    for (const Index p : p_values)
        if (p < 4) throw std::invalid_argument("experiment p must be >= 4");
    if (t < 20 || test_t < 2) throw std::invalid_argument("experiment needs t >= 20 and test_t >= 2");
    if (reps < 10) throw std::invalid_argument("experiment needs at least 10 replications");
    if (levels.empty()) throw std::invalid_argument("experiment needs at least one level");
    for (const double l : levels)
        if (!(l > 0.5 && l < 1.0)) throw std::invalid_argument("experiment levels must lie in (0.5, 1)");
    if (!(threshold_c >= 0.0)) throw std::invalid_argument("threshold constant must be >= 0");
    if (draws < 1000) throw std::invalid_argument("draws must be >= 1000");
    for (const Index j : j_values)
        if (j < 1) throw std::invalid_argument("J values must be >= 1");
}

DeltaStudy delta_study(const ExperimentConfig& config, Index p) {
    config.validate();
    const DgpParams params = DgpParams::fixture(p);
    const std::uint64_t base = experiment_seed(config, ExperimentKind::delta_table, p);
    const Matrix b = fixed_loadings(params, base);

    DeltaStudy out;
    out.p = p;
    out.oracle = oracle_deltas(params, config.t, config.levels, config.draws, substream_seed(base, 0));
    std::vector<std::vector<double>> per_rep(static_cast<std::size_t>(config.reps));
    parallel_for(per_rep.size(), [&](std::size_t r) {
        const std::uint64_t s = rep_seed(base, static_cast<Index>(r));
        const SimulatedPanel sim = simulate_panel(params, b, config.t, s);
        per_rep[r] = estimated_deltas(sim.panel, params.k, config.levels, config.draws, substream_seed(s, 7));
    });
    out.values.assign(config.levels.size(), std::vector<double>(per_rep.size()));
    for (std::size_t r = 0; r < per_rep.size(); ++r)
        for (std::size_t l = 0; l < config.levels.size(); ++l) out.values[l][r] = per_rep[r][l];
    return out;
}

QStudy q_study(const ExperimentConfig& config, Index p) {
    config.validate();
    const DgpParams params = DgpParams::fixture(p);
    const std::uint64_t base = experiment_seed(config, ExperimentKind::q_table, p);
    const Matrix b = fixed_loadings(params, base);

    QStudy out;
    out.p = p;
    const Vector w_star = oracle_mv_weights(params, b, config.target_return);
    for (const double l : config.levels)
        out.oracle.push_back(
            rho_from_moments(0.0, b, params.long_run_cov(), w_star, config.target_return, 1.0 - l, config.t)
                .diagnostics.q_value);

    std::vector<std::vector<double>> per_rep(static_cast<std::size_t>(config.reps));
    parallel_for(per_rep.size(), [&](std::size_t r) {
        const SimulatedPanel sim = simulate_panel(params, b, config.t, rep_seed(base, static_cast<Index>(r)));
        const FactorFit fit = estimate_factors(sim.panel.returns, params.k);
        const SparseResidualCov sc =
            threshold_with_pd_repair(fit.residuals, config.threshold_c, default_threshold_grid(), ThresholdRule::soft);
        const CovModel cov = assemble_return_cov(fit, sc);
        const Vector w = mv_closed_form(cov.mean, cov.sigma_r, config.target_return);
        const LongRunCov v =
            hac_long_run_cov(fit.factors, fit.factor_mean, default_bandwidth(config.t, p));
        for (const double l : config.levels)
            per_rep[r].push_back(
                rho_from_moments(0.0, fit.loadings, v.matrix, w, config.target_return, 1.0 - l, config.t)
                    .diagnostics.q_value);
    });
    out.values.assign(config.levels.size(), std::vector<double>(per_rep.size()));
    for (std::size_t r = 0; r < per_rep.size(); ++r)
        for (std::size_t l = 0; l < config.levels.size(); ++l) out.values[l][r] = per_rep[r][l];
    return out;
}

PortfolioStudy portfolio_study(const ExperimentConfig& config, Index p) {
    config.validate();
    const DgpParams params = DgpParams::fixture(p);
    const std::uint64_t base = experiment_seed(config, ExperimentKind::portfolio_table, p);
    const Matrix b = fixed_loadings(params, base);
    const UncertaintyParams oracle =
        oracle_uncertainty(params, b, config.t, 0.95, 0.95, config.target_return, config.draws, substream_seed(base, 0));

    DroProblem pop;
    pop.loadings = b;
    pop.factor_cov = params.factor_cov();
    pop.factor_mean = params.stationary_mean();
    pop.residual_cov = params.error_cov;
    pop.delta = oracle.delta;
    pop.rho = oracle.rho;
    const PortfolioWeights pop_sol = solve_hd_dro(pop);
    if (pop_sol.status == SolveStatus::infeasible)
        throw std::runtime_error("population robust problem is infeasible for p = " + std::to_string(p));

    StrategySpec hd;
    hd.kind = StrategyKind::hd_dro;
    hd.target_return = config.target_return;
    hd.k_selection = FactorSelection::fixed(params.k);
    StrategySpec bcz = hd;
    bcz.kind = StrategyKind::bcz_dro;
    bcz.fixed_delta = oracle.delta;
    bcz.fixed_rho = oracle.rho;

    const auto n = static_cast<std::size_t>(config.reps);
    PortfolioStudy out;
    out.p = p;
    out.hd_dro.resize(n);
    out.bcz_dro.resize(n);
    out.equal_weight.resize(n);
    out.hd_dro_oracle.resize(n);
    std::vector<char> hd_fb(n), bcz_fb(n);
    parallel_for(n, [&](std::size_t r) {
        const std::uint64_t s = rep_seed(base, static_cast<Index>(r));
        const SimulatedPanel sim = simulate_panel(params, b, config.t + config.test_t, s);
        const ReturnPanel train = sim.panel.slice_periods(0, config.t);
        const Matrix test = sim.panel.returns.rightCols(config.test_t);
        EstimationConfig ec;
        ec.threshold_c = config.threshold_c;
        ec.draws = config.draws;
        ec.seed = substream_seed(s, 7);
        const WeightsResult wh = build_weights(train, hd, ec);
        const WeightsResult wb = build_weights(train, bcz, ec);
        auto oos_sd = [&](const Vector& w) {
            const Vector r_p = test.transpose() * w;
            return metrics(std::vector<double>(r_p.data(), r_p.data() + r_p.size())).risk;
        };
        out.hd_dro[r] = oos_sd(wh.weights);
        out.bcz_dro[r] = oos_sd(wb.weights);
        out.equal_weight[r] = oos_sd(Vector::Constant(p, 1.0 / static_cast<double>(p)));
        out.hd_dro_oracle[r] = oos_sd(pop_sol.weights);
        hd_fb[r] = wh.diagnostics.fell_back;
        bcz_fb[r] = wb.diagnostics.fell_back;
    });
    out.hd_fallbacks = std::count(hd_fb.begin(), hd_fb.end(), 1);
    out.bcz_fallbacks = std::count(bcz_fb.begin(), bcz_fb.end(), 1);
    return out;
}

FeasibilityStudy feasibility_study(const ExperimentConfig& config, Index p) {
    config.validate();
    const DgpParams params = DgpParams::fixture(p);
    const std::uint64_t base = experiment_seed(config, ExperimentKind::feasibility_table, p);
    const Vector mu = params.stationary_mean();

    FeasibilityStudy out;
    out.p = p;
    out.delta = oracle_delta(params, config.t, 0.95, config.draws, substream_seed(base, 0));
    const auto n = static_cast<std::size_t>(config.reps);
    out.g_bar.resize(n);
    out.rho.resize(n);
    std::vector<char> est_unbounded(n);
    parallel_for(n, [&](std::size_t r) {
        const std::uint64_t s = rep_seed(base, static_cast<Index>(r));
        Engine eng = make_engine(s, 0);
        const Matrix b = draw_loadings(params, eng);
        const FeasibilityBound bound = max_feasible_rho(b, mu, out.delta);
        out.g_bar[r] = bound.unbounded ? std::numeric_limits<double>::infinity() : bound.g_bar;
        const Vector w = oracle_mv_weights(params, b, config.target_return);
        out.rho[r] =
            rho_from_moments(out.delta, b, params.long_run_cov(), w, config.target_return, 0.05, config.t).rho;

        // the same bound with estimated loadings, factor mean and radius
        const SimulatedPanel sim = simulate_panel(params, b, config.t, s);
        const FactorFit fit = estimate_factors(sim.panel.returns, params.k);
        const double d_hat = estimated_deltas(sim.panel, params.k, {0.95}, config.draws, substream_seed(s, 7)).front();
        est_unbounded[r] = max_feasible_rho(fit.loadings, fit.factor_mean, d_hat).unbounded;
    });
    out.estimated_unbounded = std::count(est_unbounded.begin(), est_unbounded.end(), 1);
    return out;
}

CurveStudy curve_study(const ExperimentConfig& config, Index p) {
    config.validate();
    const DgpParams base_params = DgpParams::fixture(p);
    const std::uint64_t base = experiment_seed(config, ExperimentKind::uncertainty_curve, p);
    const Matrix b = fixed_loadings(base_params, base);

    CurveStudy out;
    out.p = p;
    out.j_values = config.j_values;
    for (const Index j : config.j_values) {
        const DgpParams params = base_params.with_ar_scale(static_cast<double>(j));
        const std::uint64_t jb = substream_seed(base, 1000 + static_cast<std::uint64_t>(j));
        out.oracle.push_back(oracle_deltas(params, config.t, config.levels, config.draws, substream_seed(jb, 0)));
        std::vector<std::vector<double>> per_rep(static_cast<std::size_t>(config.reps));
        parallel_for(per_rep.size(), [&](std::size_t r) {
            const std::uint64_t s = rep_seed(jb, static_cast<Index>(r));
            const SimulatedPanel sim = simulate_panel(params, b, config.t, s);
            per_rep[r] = estimated_deltas(sim.panel, params.k, config.levels, config.draws, substream_seed(s, 7));
        });
        std::vector<double> med;
        for (std::size_t l = 0; l < config.levels.size(); ++l) {
            std::vector<double> col;
            for (const auto& v : per_rep) col.push_back(v[l]);
            med.push_back(median_of(col));
        }
        out.median_estimated.push_back(med);
    }
    return out;
}

Table run_experiment(ExperimentKind kind, const ExperimentConfig& config) {
    config.validate();
    Table table;
    table.kind = kind;
    switch (kind) {
        case ExperimentKind::delta_table:
        case ExperimentKind::q_table: {
            for (const double l : config.levels) table.columns.push_back(level_label(l));
            for (const Index p : config.p_values) {
                const std::string g = "p=" + std::to_string(p);
                if (kind == ExperimentKind::delta_table) {
                    const DeltaStudy s = delta_study(config, p);
                    summary_rows(table, g, s.oracle, s.values);
                } else {
                    const QStudy s = q_study(config, p);
                    summary_rows(table, g, s.oracle, s.values);
                }
            }
            break;
        }
        case ExperimentKind::portfolio_table: {
            table.columns = {"hd_dro", "bcz_dro", "equal_weight", "hd_dro_oracle"};
            for (const Index p : config.p_values) {
                const std::string g = "p=" + std::to_string(p);
                const PortfolioStudy s = portfolio_study(config, p);
                const std::vector<const std::vector<double>*> cols{&s.hd_dro, &s.bcz_dro, &s.equal_weight,
                                                                   &s.hd_dro_oracle};
                TableRow mean{g, "mean_sd", {}}, med{g, "median_sd", {}}, ratio{g, "ratio_to_oracle", {}};
                const double oracle_mean = mean_of(s.hd_dro_oracle);
                for (const auto* c : cols) {
                    mean.values.push_back(mean_of(*c));
                    med.values.push_back(median_of(*c));
                    ratio.values.push_back(mean_of(*c) / oracle_mean);
                }
                std::size_t ordered = 0;
                for (std::size_t r = 0; r < s.hd_dro.size(); ++r)
                    if (s.hd_dro[r] < s.bcz_dro[r] && s.bcz_dro[r] < s.equal_weight[r]) ++ordered;
                const double frac = static_cast<double>(ordered) / static_cast<double>(s.hd_dro.size());
                table.rows.push_back(mean);
                table.rows.push_back(med);
                table.rows.push_back(ratio);
                table.rows.push_back({g, "ordering_fraction", {frac, kNan, kNan, kNan}});
                table.rows.push_back({g, "fallbacks",
                                      {static_cast<double>(s.hd_fallbacks), static_cast<double>(s.bcz_fallbacks), 0.0,
                                       0.0}});
            }
            break;
        }
        case ExperimentKind::feasibility_table: {
            table.columns = {"g_bar", "rho"};
            for (const Index p : config.p_values) {
                const std::string g = "p=" + std::to_string(p);
                const FeasibilityStudy s = feasibility_study(config, p);
                std::size_t below = 0;
                for (std::size_t r = 0; r < s.rho.size(); ++r)
                    if (s.rho[r] < s.g_bar[r]) ++below;
                auto [gmin, gmax] = std::minmax_element(s.g_bar.begin(), s.g_bar.end());
                auto [rmin, rmax] = std::minmax_element(s.rho.begin(), s.rho.end());
                table.rows.push_back({g, "delta", {s.delta, s.delta}});
                table.rows.push_back({g, "median", {median_of(s.g_bar), median_of(s.rho)}});
                table.rows.push_back({g, "mean", {mean_of(s.g_bar), mean_of(s.rho)}});
                table.rows.push_back({g, "min", {*gmin, *rmin}});
                table.rows.push_back({g, "max", {*gmax, *rmax}});
                const double frac = static_cast<double>(below) / static_cast<double>(s.rho.size());
                table.rows.push_back({g, "fraction_rho_below_g_bar", {frac, frac}});
                const double est = static_cast<double>(s.estimated_unbounded) / static_cast<double>(s.rho.size());
                table.rows.push_back({g, "estimated_unbounded_fraction", {est, kNan}});
            }
            break;
        }
        case ExperimentKind::uncertainty_curve: {
            for (const double l : config.levels) table.columns.push_back(level_label(l));
            for (const Index p : config.p_values) {
                const CurveStudy s = curve_study(config, p);
                for (std::size_t j = 0; j < s.j_values.size(); ++j) {
                    const std::string g = "p=" + std::to_string(p) + " J=" + std::to_string(s.j_values[j]);
                    table.rows.push_back({g, "median_delta_hat", s.median_estimated[j]});
                    table.rows.push_back({g, "oracle_delta", s.oracle[j]});
                }
            }
            break;
        }
    }
    return table;
}

void write_table_csv(std::ostream& out, const Table& table, const Provenance& prov) {
    out << "# drofolio " << prov.version << "\n# config_hash " << prov.config_hash << "\n# seed " << prov.seed
        << "\n# experiment " << to_string(table.kind) << '\n';
    out << "group,statistic";
    for (const auto& c : table.columns) out << ',' << c;
    out << '\n';
    for (const TableRow& row : table.rows) {
        out << row.group << ',' << row.statistic;
        for (const double v : row.values) out << ',' << format_double(v);
        out << '\n';
    }
}

std::string canonical_config(ExperimentKind kind, const ExperimentConfig& c) {
    std::ostringstream os;
    os << "kind=" << to_string(kind) << ";p=";
    for (std::size_t i = 0; i < c.p_values.size(); ++i) os << (i ? "," : "") << c.p_values[i];
    os << ";t=" << c.t << ";test_t=" << c.test_t << ";reps=" << c.reps << ";levels=";
    for (std::size_t i = 0; i < c.levels.size(); ++i) os << (i ? "," : "") << format_double(c.levels[i]);
    os << ";target=" << format_double(c.target_return) << ";threshold_c=" << format_double(c.threshold_c)
       << ";draws=" << c.draws << ";j=";
    for (std::size_t i = 0; i < c.j_values.size(); ++i) os << (i ? "," : "") << c.j_values[i];
    os << ";seed=" << c.seed;
    return os.str();
}

void write_table_sidecar(std::ostream& out, const Table& table, const ExperimentConfig& c, const Provenance& prov) {
    nlohmann::ordered_json j;
    j["provenance"] = {{"version", prov.version}, {"config_hash", prov.config_hash}, {"seed", prov.seed}};
    j["experiment"] = to_string(table.kind);
    j["config"] = {{"p", c.p_values},           {"t", c.t},
                   {"test_t", c.test_t},         {"reps", c.reps},
                   {"levels", c.levels},         {"target_return", c.target_return},
                   {"threshold_c", c.threshold_c}, {"draws", c.draws},
                   {"j_values", c.j_values},     {"seed", c.seed}};
    j["columns"] = table.columns;
    j["rows"] = table.rows.size();
    out << j.dump(2) << '\n';
}

}  // namespace drofolio
