#pragma once

// Per-node binomial mixed model and region-total intensity models.
//
// All fits share one core: a single-covariate GLM with optional per-sample
// random intercept u_i ~ N(0, tau2), fitted by penalized IRLS (joint Newton
// over fixed effects and the modes of u, with block elimination of u and
// step halving) inside a 1-D profile search for tau2 on the log scale. The
// marginal likelihood over u is approximated by Laplace, or by adaptive
// Gauss-Hermite quadrature when laplace_quadrature_points > 1; the integral
// factorizes per sample because each sample carries one observation.
//
// Estimates are reported in Wakefield-centered coordinates
// mu* = mu + c beta, c = information-weighted covariate mean, which makes
// the observed information for (mu*, beta) diagonal at the fit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "msdiff/numerics.hpp"
#include "msdiff/types.hpp"

namespace msdiff {

struct NodeEstimate {
    double mu_star_hat = 0.0;
    double se_mu_star = kInf;
    double beta_hat = 0.0;
    double se_beta = kInf;
    double centering_constant = 0.0;
    bool informative = false;
    double tau2_hat = 0.0;
    // false when the fit was abandoned (separation, non-convergence) rather
    // than skipped for lack of data
    bool converged = true;
};

struct TotalEffectEstimate {
    double log_fc_hat = 0.0;
    double se_log_fc = kInf;
    double loglik_alt = 0.0;
    double loglik_null = 0.0;
    TotalModel method = TotalModel::poisson_regression;
};

// c = (sum_i w_i x_i) / (sum_i w_i)
inline double wakefield_center(std::span<const double> x, std::span<const double> weights) {
    if (x.size() != weights.size())
        throw data_error("wakefield_center: length mismatch");
    double sw = 0.0, swx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (weights[i] < 0.0) throw data_error("wakefield_center: negative weight");
        sw += weights[i];
        swx += weights[i] * x[i];
    }
    if (!(sw > 0.0)) throw data_error("wakefield_center: all weights zero");
    return swx / sw;
}

inline double wakefield_center(const Covariate& x, std::span<const double> weights) {
    return wakefield_center(std::span<const double>(x.values), weights);
}

namespace glmm_detail {

// beyond this magnitude on the logit scale a node fit is treated as separated
inline constexpr double kLogitClamp = 15.0;

enum class Family { binomial, poisson };

struct Obs {
    double y = 0.0;      // successes (binomial) or count (poisson)
    double t = 0.0;      // trials (binomial only; may be non-integer)
    double x = 0.0;      // covariate
    double offset = 0.0; // log exposure (poisson total model)
};

// log-likelihood, first and negated second derivative w.r.t. eta,
// excluding observation constants
inline void family_terms(Family fam, const Obs& o, double eta,
                         double& ll, double& dl, double& w) {
    if (fam == Family::binomial) {
        if (o.t <= 0.0) { ll = 0.0; dl = 0.0; w = 0.0; return; }
        const double p = logistic(eta);
        ll = o.y * eta - o.t * log1pexp(eta);
        dl = o.y - o.t * p;
        w = std::max(o.t * p * (1.0 - p), 0.0);
    } else {
        const double m = std::exp(eta);
        ll = o.y * eta - m;
        dl = o.y - m;
        w = m;
    }
}

// per-observation constant completing the exact log pmf
inline double family_constant(Family fam, const Obs& o) {
    if (fam == Family::binomial) {
        if (o.t <= 0.0) return 0.0;
        return std::lgamma(o.t + 1.0) - std::lgamma(o.y + 1.0) - std::lgamma(o.t - o.y + 1.0);
    }
    return -std::lgamma(o.y + 1.0);
}

struct FitState {
    double mu = 0.0;
    double beta = 0.0;
    std::vector<double> u;
    double tau2 = 0.0;
    // filled after convergence
    double objective = kNegInf;  // marginal log-likelihood (Laplace or AGHQ)
    double sum_w = 0.0, sum_wx = 0.0, sum_wxx = 0.0;  // weights w/(1+tau2 w)
    bool converged = false;
    bool separated = false;
};

inline double joint_penalized_loglik(Family fam, std::span<const Obs> obs,
                                     const FitState& s) {
    double f = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const double eta = obs[i].offset + s.mu + s.beta * obs[i].x +
                           (s.u.empty() ? 0.0 : s.u[i]);
        double ll, dl, w;
        family_terms(fam, obs[i], eta, ll, dl, w);
        f += ll;
    }
    if (!s.u.empty())
        for (double ui : s.u) f -= ui * ui / (2.0 * s.tau2);
    return f;
}

// Nodes and weights of n-point Gauss-Hermite quadrature (weight e^{-z^2}),
// by Newton iteration on the orthonormal Hermite recurrence.
inline void gauss_hermite(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    const int m = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < m; ++i) {
        if (i == 0)
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
        else if (i == 1)
            z -= 1.14 * std::pow(n, 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * x[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * x[1];
        else
            z = 2.0 * z - x[i - 2];
        double pp = 1.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p1 = 0.7511255444649425;  // pi^{-1/4}
            double p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double dz = p1 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-14) break;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
}

// Marginal log-likelihood at the current mode. Laplace for Q=1, adaptive
// Gauss-Hermite centered at the per-sample modes for Q>1; the sqrt(2)-scaled
// substitution makes the two coincide at Q=1.
inline double marginal_loglik_at_mode(Family fam, std::span<const Obs> obs,
                                      const FitState& s, int quad_points) {
    double obj = 0.0;
    if (s.u.empty()) {
        for (std::size_t i = 0; i < obs.size(); ++i) {
            double ll, dl, w;
            family_terms(fam, obs[i], obs[i].offset + s.mu + s.beta * obs[i].x, ll, dl, w);
            obj += ll + family_constant(fam, obs[i]);
        }
        return obj;
    }
    std::vector<double> zq, wq;
    const bool quad = quad_points > 1;
    if (quad) gauss_hermite(quad_points, zq, wq);
    std::vector<double> terms(quad ? zq.size() : 0);
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const double fixed = obs[i].offset + s.mu + s.beta * obs[i].x;
        double ll, dl, w;
        family_terms(fam, obs[i], fixed + s.u[i], ll, dl, w);
        if (!quad) {
            obj += ll - s.u[i] * s.u[i] / (2.0 * s.tau2) - 0.5 * std::log1p(s.tau2 * w);
        } else {
            const double sigma = 1.0 / std::sqrt(w + 1.0 / s.tau2);
            for (std::size_t q = 0; q < zq.size(); ++q) {
                const double uq = s.u[i] + std::sqrt(2.0) * sigma * zq[q];
                double llq, dlq, wq2;
                family_terms(fam, obs[i], fixed + uq, llq, dlq, wq2);
                terms[q] = std::log(wq[q]) + zq[q] * zq[q] + llq -
                           uq * uq / (2.0 * s.tau2);
            }
            obj += 0.5 * std::log(2.0) + std::log(sigma) + log_sum_exp(terms) -
                   0.5 * (kLogTwoPi + std::log(s.tau2));
        }
        obj += family_constant(fam, obs[i]);
    }
    return obj;
}

// Penalized IRLS for fixed tau2: joint Newton over (mu, beta, u) with block
// elimination of u and step halving on the joint penalized log-likelihood.
// with_slope=false drops beta (null models). Returns false on separation or
// a degenerate design.
inline bool pirls(Family fam, std::span<const Obs> obs, bool with_slope,
                  bool clamp_logit, const GlmmOptions& opts, FitState& s) {
    const std::size_t n = obs.size();
    const bool ranef = s.tau2 > 0.0;
    if (ranef && s.u.size() != n) s.u.assign(n, 0.0);
    if (!ranef) s.u.clear();

    double f = joint_penalized_loglik(fam, obs, s);
    s.converged = false;
    std::vector<double> g_u(ranef ? n : 0), d(ranef ? n : 0), wv(n);
    FitState trial = s;
    for (int iter = 0; iter < opts.max_iter; ++iter) {
        double g_mu = 0.0, g_beta = 0.0;
        double a11 = 0.0, a12 = 0.0, a22 = 0.0;  // Schur complement onto (mu, beta)
        for (std::size_t i = 0; i < n; ++i) {
            const double eta = obs[i].offset + s.mu + s.beta * obs[i].x +
                               (ranef ? s.u[i] : 0.0);
            double ll, dl, w;
            family_terms(fam, obs[i], eta, ll, dl, w);
            wv[i] = w;
            double gm = dl, gb = dl * obs[i].x;
            double weff = w;
            if (ranef) {
                d[i] = w + 1.0 / s.tau2;
                g_u[i] = dl - s.u[i] / s.tau2;
                weff = w - w * w / d[i];
                gm -= w * g_u[i] / d[i];
                gb -= w * g_u[i] / d[i] * obs[i].x;
            }
            g_mu += gm;
            g_beta += gb;
            a11 += weff;
            a12 += weff * obs[i].x;
            a22 += weff * obs[i].x * obs[i].x;
        }

        double dmu = 0.0, dbeta = 0.0;
        if (with_slope) {
            const double det = a11 * a22 - a12 * a12;
            const double scale = std::max(a11 * a22, a12 * a12);
            if (!(a11 > 0.0) || !(det > scale * 1e-14)) return false;
            dmu = (a22 * g_mu - a12 * g_beta) / det;
            dbeta = (a11 * g_beta - a12 * g_mu) / det;
        } else {
            if (!(a11 > 0.0)) return false;
            dmu = g_mu / a11;
        }

        double step = 1.0;
        double f_new = f;
        for (int h = 0; h < 30; ++h) {
            trial.mu = s.mu + step * dmu;
            trial.beta = s.beta + step * dbeta;
            if (ranef) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double du = (g_u[i] - wv[i] * (dmu + dbeta * obs[i].x)) / d[i];
                    trial.u[i] = s.u[i] + step * du;
                }
            }
            trial.tau2 = s.tau2;
            f_new = joint_penalized_loglik(fam, obs, trial);
            if (f_new >= f - 1e-12) break;
            step *= 0.5;
        }
        const double improve = f_new - f;
        s.mu = trial.mu;
        s.beta = trial.beta;
        if (ranef) s.u = trial.u;
        f = f_new;

        if (clamp_logit &&
            (std::abs(s.mu) > kLogitClamp || std::abs(s.beta) > kLogitClamp)) {
            s.mu = std::clamp(s.mu, -kLogitClamp, kLogitClamp);
            s.beta = std::clamp(s.beta, -kLogitClamp, kLogitClamp);
            s.separated = true;
            return false;
        }

        const double gtol = 1e-8 * std::max(1.0, a11);
        const double gnorm = std::max(std::abs(g_mu), with_slope ? std::abs(g_beta) : 0.0);
        if (std::abs(improve) < opts.convergence_tol && gnorm < gtol) {
            s.converged = true;
            break;
        }
    }

    s.sum_w = s.sum_wx = s.sum_wxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double eta = obs[i].offset + s.mu + s.beta * obs[i].x +
                           (ranef ? s.u[i] : 0.0);
        double ll, dl, w;
        family_terms(fam, obs[i], eta, ll, dl, w);
        const double weff = ranef ? w / (1.0 + s.tau2 * w) : w;
        s.sum_w += weff;
        s.sum_wx += weff * obs[i].x;
        s.sum_wxx += weff * obs[i].x * obs[i].x;
    }
    return true;
}

struct ProfileResult {
    FitState fit;
    bool ok = false;
    bool separated = false;
};

// Profile the marginal log-likelihood over tau2: a coarse log-scale grid
// (always containing tau2 = 0) followed by golden-section refinement, each
// candidate fitted by warm-started PIRLS. Candidates that separate or fail
// are discarded. `trace`, when given, records the incumbent best objective
// after every outer evaluation.
inline ProfileResult profile_fit(Family fam, std::span<const Obs> obs, bool with_slope,
                                 bool clamp_logit, const GlmmOptions& opts,
                                 const FitState* warm_start = nullptr,
                                 std::vector<double>* trace = nullptr) {
    ProfileResult best;
    FitState warm;
    if (warm_start) {
        warm.mu = warm_start->mu;
        warm.beta = with_slope ? warm_start->beta : 0.0;
    }

    // evaluates one tau2 candidate; returns its own objective or -inf
    auto evaluate = [&](double tau2) -> double {
        FitState s;
        s.mu = warm.mu;
        s.beta = warm.beta;
        s.tau2 = tau2;
        if (!pirls(fam, obs, with_slope, clamp_logit, opts, s)) {
            if (s.separated) best.separated = true;
            if (trace && best.ok) trace->push_back(best.fit.objective);
            return kNegInf;
        }
        s.objective = marginal_loglik_at_mode(fam, obs, s, opts.laplace_quadrature_points);
        if (!std::isfinite(s.objective)) return kNegInf;
        warm.mu = s.mu;
        warm.beta = s.beta;
        const double o = s.objective;
        if (!best.ok || o > best.fit.objective) {
            best.fit = std::move(s);
            best.ok = true;
        }
        if (trace) trace->push_back(best.fit.objective);
        return o;
    };

    if (!opts.random_effect) {
        evaluate(0.0);
        return best;
    }

    std::vector<double> grid{0.0};
    for (double t2 = 1e-3; t2 <= 30.0; t2 *= 4.0) grid.push_back(t2);
    std::vector<double> obj(grid.size(), kNegInf);
    std::size_t best_idx = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        obj[i] = evaluate(grid[i]);
        if (std::isfinite(obj[i]) && obj[i] >= obj[best_idx]) best_idx = i;
    }
    if (!best.ok) return best;

    // golden-section refinement on log tau2 between the grid neighbors
    if (best_idx > 0 && best_idx + 1 < grid.size() &&
        std::isfinite(obj[best_idx + 1])) {
        double lo = std::log(std::max(grid[best_idx - 1], 1e-6));
        double hi = std::log(grid[best_idx + 1]);
        const double phi = 0.6180339887498949;
        double x1 = hi - phi * (hi - lo);
        double x2 = lo + phi * (hi - lo);
        double o1 = evaluate(std::exp(x1));
        double o2 = evaluate(std::exp(x2));
        for (int it = 0; it < 14 && hi - lo > 1e-3; ++it) {
            if (o1 < o2) {
                lo = x1;
                x1 = x2;
                x2 = lo + phi * (hi - lo);
                o1 = o2;
                o2 = evaluate(std::exp(x2));
            } else {
                hi = x2;
                x2 = x1;
                x1 = hi - phi * (hi - lo);
                o2 = o1;
                o1 = evaluate(std::exp(x1));
            }
        }
    }
    return best;
}

}  // namespace glmm_detail

// Binomial mixed-model fit of one node: logit Pr(success) = mu + beta x + u.
// Returns Wakefield-centered estimates; nodes with insufficient data or a
// degenerate fit come back informative=false (beta 0, infinite SEs) so that
// downstream shrinkage treats them as prior-only.
inline NodeEstimate fit_binomial_node(std::span<const std::int64_t> successes,
                                      std::span<const std::int64_t> trials,
                                      const Covariate& x, const GlmmOptions& opts,
                                      std::vector<double>* profile_trace = nullptr) {
    const std::size_t n = x.values.size();
    if (successes.size() != n || trials.size() != n)
        throw data_error("fit_binomial_node: length mismatch");
    std::int64_t total_trials = 0, total_succ = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (successes[i] < 0 || trials[i] < 0 || successes[i] > trials[i])
            throw data_error("fit_binomial_node: successes must lie in [0, trials]");
        total_trials += trials[i];
        total_succ += successes[i];
    }

    NodeEstimate est;
    if (total_trials < std::max<std::int64_t>(opts.min_total_trials, 1)) return est;
    // all mass on one side: the intercept MLE diverges, no usable contrast
    if (total_succ == 0 || total_succ == total_trials) {
        est.converged = false;
        return est;
    }

    std::vector<glmm_detail::Obs> obs(n);
    for (std::size_t i = 0; i < n; ++i)
        obs[i] = {static_cast<double>(successes[i]), static_cast<double>(trials[i]),
                  x.values[i], 0.0};

    auto res = glmm_detail::profile_fit(glmm_detail::Family::binomial, obs,
                                        /*with_slope=*/true, /*clamp_logit=*/true,
                                        opts, nullptr, profile_trace);
    if (!res.ok || !res.fit.converged) {
        est.converged = false;
        return est;
    }
    const auto& f = res.fit;
    const double sxx = f.sum_wxx - f.sum_wx * f.sum_wx / f.sum_w;
    if (!(f.sum_w > 0.0) || !(sxx > f.sum_w * 1e-12)) {
        est.converged = f.converged;
        return est;
    }
    est.centering_constant = f.sum_wx / f.sum_w;
    est.mu_star_hat = f.mu + est.centering_constant * f.beta;
    est.beta_hat = f.beta;
    est.se_mu_star = 1.0 / std::sqrt(f.sum_w);
    est.se_beta = 1.0 / std::sqrt(sxx);
    est.tau2_hat = f.tau2;
    est.informative = true;
    est.converged = f.converged;
    return est;
}

namespace glmm_detail {

inline TotalEffectEstimate fit_total_impl(Family fam, std::span<const Obs> obs,
                                          const GlmmOptions& opts, TotalModel method) {
    TotalEffectEstimate est;
    est.method = method;

    auto null_res = profile_fit(fam, obs, /*with_slope=*/false, /*clamp_logit=*/false, opts);
    if (!null_res.ok) throw numeric_error("total-intensity null fit failed");
    est.loglik_null = null_res.fit.objective;

    auto alt_res = profile_fit(fam, obs, /*with_slope=*/true, /*clamp_logit=*/false,
                               opts, &null_res.fit);
    if (!alt_res.ok || alt_res.fit.objective < est.loglik_null) {
        // keep the null solution, a feasible point of the alternative model
        est.log_fc_hat = 0.0;
        est.se_log_fc = kInf;
        est.loglik_alt = est.loglik_null;
        return est;
    }
    const auto& f = alt_res.fit;
    est.loglik_alt = f.objective;
    est.log_fc_hat = f.beta;
    const double sxx = f.sum_wxx - f.sum_wx * f.sum_wx / f.sum_w;
    est.se_log_fc = sxx > 0.0 ? 1.0 / std::sqrt(sxx) : kInf;
    return est;
}

}  // namespace glmm_detail

// log E[total_i] = log(library_size_i) + a + b x_i + u_i
inline TotalEffectEstimate fit_total_poisson(std::span<const std::int64_t> region_totals,
                                             const Covariate& x, const GlmmOptions& opts) {
    const std::size_t n = x.values.size();
    if (region_totals.size() != n) throw data_error("fit_total_poisson: length mismatch");
    std::int64_t grand = 0;
    for (auto t : region_totals) {
        if (t < 0) throw data_error("fit_total_poisson: negative total");
        grand += t;
    }
    if (grand == 0) {
        TotalEffectEstimate est;
        est.method = TotalModel::poisson_regression;
        return est;  // no reads: null-equivalent, log-lik 0 in the rate->0 limit
    }
    std::vector<glmm_detail::Obs> obs(n);
    for (std::size_t i = 0; i < n; ++i)
        obs[i] = {static_cast<double>(region_totals[i]), 0.0, x.values[i],
                  std::log(x.library_sizes[i])};
    return glmm_detail::fit_total_impl(glmm_detail::Family::poisson, obs, opts,
                                       TotalModel::poisson_regression);
}

// logit Pr(read falls in region) = a + b x_i + u_i with library_size_i trials
inline TotalEffectEstimate fit_total_binomial(std::span<const std::int64_t> region_totals,
                                              const Covariate& x, const GlmmOptions& opts) {
    const std::size_t n = x.values.size();
    if (region_totals.size() != n) throw data_error("fit_total_binomial: length mismatch");
    std::int64_t grand = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (region_totals[i] < 0) throw data_error("fit_total_binomial: negative total");
        if (static_cast<double>(region_totals[i]) > x.library_sizes[i])
            throw data_error("fit_total_binomial: region total exceeds library size");
        grand += region_totals[i];
    }
    if (grand == 0) {
        TotalEffectEstimate est;
        est.method = TotalModel::binomial_regression;
        return est;
    }
    std::vector<glmm_detail::Obs> obs(n);
    for (std::size_t i = 0; i < n; ++i)
        obs[i] = {static_cast<double>(region_totals[i]), x.library_sizes[i],
                  x.values[i], 0.0};
    return glmm_detail::fit_total_impl(glmm_detail::Family::binomial, obs, opts,
                                       TotalModel::binomial_regression);
}

// Wrap overall-expression statistics computed by an external tool.
inline TotalEffectEstimate ingest_external_total(double log_fc, double se,
                                                 double loglik_ratio) {
    if (!(se > 0.0)) throw data_error("ingest_external_total: se must be positive");
    if (loglik_ratio < -1e-8)
        throw data_error("ingest_external_total: negative likelihood ratio");
    TotalEffectEstimate est;
    est.log_fc_hat = log_fc;
    est.se_log_fc = se;
    est.loglik_alt = loglik_ratio;
    est.loglik_null = 0.0;
    est.method = TotalModel::external;
    return est;
}

}  // namespace msdiff
