#include "drofolio/dro_solver.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "drofolio/uncertainty.h"

namespace drofolio {

namespace {

constexpr double kSmooth = 1e-10;
constexpr double kTiny = 1e-300;

void check_symmetric_psd(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw std::invalid_argument(std::string(what) + " contains non-finite values");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw std::invalid_argument(std::string(what) + " is not symmetric");
    if (m.rows() == 0) return;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10 * scale)
        throw std::invalid_argument(std::string(what) + " is not positive semidefinite");
}

// Smoothed objective f and return constraint c = rho + s b(u) - u'mu <= 0,
// with u = B'w, a = sqrt(u'S_F u + eps^2), b = sqrt(u'u + eps^2), f = (a + s b)^2 + w'S_e w.
class SmoothModel {
public:
    SmoothModel(const DroProblem& pr, double eps)
        : pr_(pr), s_(std::sqrt(pr.delta)), eps2_(eps * eps) {}

    struct Point {
        Vector u, su;
        double a = 0.0, b = 0.0, n = 0.0;
        double f = 0.0, c = 0.0;
    };

    Point at(const Vector& w) const {
        Point pt;
        pt.u = pr_.loadings.transpose() * w;
        pt.su = pr_.factor_cov * pt.u;
        pt.a = std::sqrt(std::max(pt.u.dot(pt.su), 0.0) + eps2_);
        pt.b = std::sqrt(pt.u.squaredNorm() + eps2_);
        pt.n = pt.a + s_ * pt.b;
        pt.f = pt.n * pt.n + w.dot(pr_.residual_cov * w);
        pt.c = pr_.rho + s_ * pt.b - pt.u.dot(pr_.factor_mean);
        return pt;
    }

    Vector grad_n_u(const Point& pt) const { return pt.su / pt.a + (s_ / pt.b) * pt.u; }

    Vector grad_f(const Vector& w, const Point& pt) const {
        return pr_.loadings * (2.0 * pt.n * grad_n_u(pt)) + 2.0 * (pr_.residual_cov * w);
    }

    Vector grad_c(const Point& pt) const {
        return pr_.loadings * ((s_ / pt.b) * pt.u - pr_.factor_mean);
    }

    // Hessian of f + lambda c in w.
    Matrix hessian(const Point& pt, double lambda) const {
        const Index k = pt.u.size();
        const Vector gn = grad_n_u(pt);
        const Matrix eye = Matrix::Identity(k, k);
        const Matrix hb = eye / pt.b - pt.u * pt.u.transpose() / (pt.b * pt.b * pt.b);
        const Matrix ha = pr_.factor_cov / pt.a - pt.su * pt.su.transpose() / (pt.a * pt.a * pt.a);
        Matrix hu = 2.0 * gn * gn.transpose() + 2.0 * pt.n * (ha + s_ * hb) + (lambda * s_) * hb;
        hu = (0.5 * (hu + hu.transpose())).eval();
        Matrix h = pr_.loadings * hu * pr_.loadings.transpose() + 2.0 * pr_.residual_cov;
        return 0.5 * (h + h.transpose());
    }

    double constraint_scale(const Point& pt) const {
        return std::abs(pr_.rho) + s_ * pt.b + std::abs(pt.u.dot(pr_.factor_mean));
    }

private:
    const DroProblem& pr_;
    double s_;
    double eps2_;
};

struct InnerResult {
    Vector w;
    SmoothModel::Point pt;
    Index iterations = 0;
};

// Newton's method for f + lambda c on the budget hyperplane.
InnerResult minimize_on_budget(const SmoothModel& model, Vector w, double lambda, double tol, Index budget) {
    const Index p = w.size();
    const Vector ones = Vector::Ones(p);
    InnerResult out;
    SmoothModel::Point pt = model.at(w);
    Index it = 0;
    for (; it < budget; ++it) {
        const Vector gf = model.grad_f(w, pt);
        const Vector g = gf + lambda * model.grad_c(pt);
        const Vector pg = g.array() - g.mean();
        const double scale = std::max({gf.norm(), lambda * model.grad_c(pt).norm(), kTiny});
        if (pg.norm() <= 0.1 * tol * scale) break;

        const Matrix h = model.hessian(pt, lambda);
        const double diag_scale = std::max(h.diagonal().cwiseAbs().maxCoeff(), kTiny);
        Vector d;
        double decrement = 0.0;
        double tau = 0.0;
        bool ok = false;
        for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
            Eigen::LDLT<Matrix> ldlt(tau > 0.0 ? Matrix(h + tau * Matrix::Identity(p, p)) : h);
            if (ldlt.info() == Eigen::Success) {
                const Vector y = ldlt.solve(g);
                const Vector x = ldlt.solve(ones);
                const double sx = x.sum();
                if (y.allFinite() && x.allFinite() && sx > 0.0) {
                    d = -y + (y.sum() / sx) * x;
                    d.array() -= d.mean();  // keep the step on the hyperplane
                    decrement = -g.dot(d);
                    ok = decrement > 0.0 && d.allFinite();
                }
            }
            tau = tau == 0.0 ? 1e-14 * diag_scale : tau * 10.0;
        }
        if (!ok) break;

        const double f0 = pt.f + lambda * pt.c;
        bool accepted = false;
        if (decrement <= 1e-10 * std::max(std::abs(f0), kTiny)) {
            // Function values no longer resolve the remaining decrease; inside
            // the quadratic region take the full step while it shrinks the
            // projected gradient.
            const Vector trial = w + d;
            const SmoothModel::Point tp = model.at(trial);
            const Vector g1 = model.grad_f(trial, tp) + lambda * model.grad_c(tp);
            const Vector pg1 = g1.array() - g1.mean();
            if (pg1.allFinite() && pg1.norm() < pg.norm()) {
                w = trial;
                pt = tp;
                accepted = true;
            }
        } else {
            double step = 1.0;
            for (int ls = 0; ls < 60; ++ls) {
                const Vector trial = w + step * d;
                const SmoothModel::Point tp = model.at(trial);
                const double f1 = tp.f + lambda * tp.c;
                if (std::isfinite(f1) && f1 < f0 && f1 <= f0 - 1e-4 * step * decrement) {
                    w = trial;
                    pt = tp;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
        }
        if (!accepted) break;
        const double drift = w.sum() - 1.0;
        if (drift != 0.0) {
            w.array() -= drift / static_cast<double>(p);
            pt = model.at(w);
        }
    }
    out.w = std::move(w);
    out.pt = std::move(pt);
    out.iterations = it + 1;
    return out;
}

}  // namespace

void DroProblem::validate() const {
    const Index p = loadings.rows();
    const Index k = loadings.cols();
    if (p < 1 || k < 1) throw std::invalid_argument("problem needs at least one asset and one factor");
    if (factor_cov.rows() != k || factor_cov.cols() != k)
        throw std::invalid_argument("factor covariance must be K x K");
    if (factor_mean.size() != k) throw std::invalid_argument("factor mean must have length K");
    if (residual_cov.rows() != p || residual_cov.cols() != p)
        throw std::invalid_argument("residual covariance must be p x p");
    if (!(delta >= 0.0) || !std::isfinite(delta)) throw std::invalid_argument("delta must be finite and >= 0");
    if (!std::isfinite(rho)) throw std::invalid_argument("rho must be finite");
    if (!loadings.allFinite() || !factor_mean.allFinite())
        throw std::invalid_argument("loadings and factor mean must be finite");
    check_symmetric_psd(factor_cov, "factor covariance");
    check_symmetric_psd(residual_cov, "residual covariance");
}

std::string to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::max_iter: return "max_iter";
    }
    return "unknown";
}

double hd_dro_objective(const DroProblem& problem, const Vector& w) {
    const Vector u = problem.loadings.transpose() * w;
    const double risk = std::sqrt(std::max(u.dot(problem.factor_cov * u), 0.0));
    const double n = risk + std::sqrt(problem.delta) * u.norm();
    return n * n + w.dot(problem.residual_cov * w);
}

Vector hd_dro_gradient(const DroProblem& problem, const Vector& w, double smoothing) {
    const SmoothModel model(problem, smoothing);
    return model.grad_f(w, model.at(w));
}

double return_slack(const DroProblem& problem, const Vector& w) {
    const Vector u = problem.loadings.transpose() * w;
    return u.dot(problem.factor_mean) - problem.rho - std::sqrt(problem.delta) * u.norm();
}

Feasibility check_feasibility(const DroProblem& problem) {
    const FeasibilityBound bound = max_feasible_rho(problem.loadings, problem.factor_mean, problem.delta);
    Feasibility out;
    out.g_bar = bound.g_bar;
    out.unbounded = bound.unbounded;
    out.feasible = bound.unbounded || problem.rho <= bound.g_bar + 1e-10;
    return out;
}

double kkt_residual(const DroProblem& problem, const Vector& w) {
    const SmoothModel model(problem, kSmooth);
    const SmoothModel::Point pt = model.at(w);
    const Vector g = model.grad_f(w, pt);
    const Vector h = model.grad_c(pt);
    const Index p = w.size();
    const Vector ones = Vector::Ones(p);

    // least squares over nu alone, then over (lambda, nu) with lambda >= 0
    Vector r = g.array() - g.mean();
    const double act_tol = 1e-6 * std::max(model.constraint_scale(pt), kTiny);
    if (-return_slack(problem, w) > -act_tol) {
        const Vector hc = h.array() - h.mean();
        const double hh = hc.squaredNorm();
        if (hh > 0.0) {
            const double lambda = -r.dot(hc) / hh;
            if (lambda > 0.0) r += lambda * hc;
        }
    }
    return r.norm() / std::max(g.norm(), kTiny);
}

PortfolioWeights solve_hd_dro(const DroProblem& problem, const SolverOptions& options) {
    problem.validate();
    if (!(options.tol > 0.0) || options.max_iter < 1) throw std::invalid_argument("solver needs tol > 0 and max_iter >= 1");

    PortfolioWeights out;
    const Feasibility feas = check_feasibility(problem);
    out.g_bar = feas.g_bar;
    out.g_bar_unbounded = feas.unbounded;
    if (!feas.feasible) {
        out.status = SolveStatus::infeasible;
        return out;
    }

    const Index p = problem.num_assets();
    const SmoothModel model(problem, kSmooth);
    Index used = 0;
    auto inner = [&](const Vector& start, double lambda) {
        InnerResult r = minimize_on_budget(model, start, lambda, options.tol, std::max<Index>(1, options.max_iter - used));
        used += r.iterations;
        return r;
    };

    InnerResult cur = inner(Vector::Constant(p, 1.0 / static_cast<double>(p)), 0.0);
    Vector best = cur.w;
    double lambda_best = 0.0;

    if (cur.pt.c > 0.0) {
        double lam_lo = 0.0, c_lo = cur.pt.c;
        Vector w_lo = cur.w;
        const double gf = model.grad_f(cur.w, cur.pt).norm();
        const double gc = model.grad_c(cur.pt).norm();
        double lam_hi = gc > 0.0 ? std::max(gf / gc, kTiny) : 1.0;
        double c_hi = 0.0;
        Vector w_hi;
        bool bracketed = false;
        for (int grow = 0; grow < 200 && used < options.max_iter; ++grow) {
            InnerResult r = inner(w_lo, lam_hi);
            if (r.pt.c <= 0.0) {
                c_hi = r.pt.c;
                w_hi = r.w;
                cur = std::move(r);
                bracketed = true;
                break;
            }
            lam_lo = lam_hi;
            c_lo = r.pt.c;
            w_lo = r.w;
            lam_hi *= 4.0;
        }
        if (!bracketed) {
            out.weights = w_lo;
            out.multiplier = lam_lo;
            out.iterations = used;
            out.objective = hd_dro_objective(problem, w_lo);
            out.budget_residual = w_lo.sum() - 1.0;
            out.return_slack = return_slack(problem, w_lo);
            out.kkt_residual = kkt_residual(problem, w_lo);
            out.status = SolveStatus::max_iter;
            return out;
        }

        int side = 0;
        for (int it = 0; it < 300 && used < options.max_iter; ++it) {
            const double tol_c = options.tol * model.constraint_scale(cur.pt);
            if (c_hi >= -tol_c) break;
            double lam = (lam_lo * c_hi - lam_hi * c_lo) / (c_hi - c_lo);
            if (!(lam > lam_lo && lam < lam_hi)) lam = 0.5 * (lam_lo + lam_hi);
            InnerResult r = inner(w_hi, lam);
            if (r.pt.c > 0.0) {
                lam_lo = lam;
                c_lo = r.pt.c;
                if (side == -1) c_hi *= 0.5;
                side = -1;
            } else {
                lam_hi = lam;
                c_hi = r.pt.c;
                w_hi = r.w;
                cur = std::move(r);
                if (side == 1) c_lo *= 0.5;
                side = 1;
            }
            if (lam_hi - lam_lo <= 1e-15 * lam_hi) break;
        }
        best = w_hi;
        lambda_best = lam_hi;
    }

    out.weights = best;
    out.multiplier = lambda_best;
    out.iterations = used;
    out.objective = hd_dro_objective(problem, best);
    out.budget_residual = best.sum() - 1.0;
    out.return_slack = return_slack(problem, best);
    out.kkt_residual = kkt_residual(problem, best);
    const bool ok = out.kkt_residual <= 10.0 * options.tol && std::abs(out.budget_residual) <= 1e-8 &&
                    out.return_slack >= -1e-8;
    out.status = ok && used <= options.max_iter ? SolveStatus::optimal : SolveStatus::max_iter;
    return out;
}

DroProblem bcz_problem(const Vector& mean, const Matrix& cov, double delta, double rho) {
    const Index p = mean.size();
    if (cov.rows() != p || cov.cols() != p) throw std::invalid_argument("mean and covariance dimensions differ");
    DroProblem pr;
    pr.loadings = Matrix::Identity(p, p);
    pr.factor_cov = cov;
    pr.factor_mean = mean;
    pr.residual_cov = Matrix::Zero(p, p);
    pr.delta = delta;
    pr.rho = rho;
    return pr;
}

PortfolioWeights solve_bcz_dro(const Vector& mean, const Matrix& cov, double delta, double rho,
                               const SolverOptions& options) {
    return solve_hd_dro(bcz_problem(mean, cov, delta, rho), options);
}

}  // namespace drofolio
