#pragma once

// Empirical-Bayes shrinkage of normal-approximated node estimates under a
// spike-and-slab mixture-normal prior: sigma-grid construction, EM for the
// mixture proportions, closed-form posterior moments, marginal likelihoods,
// and moment-matched averaging across translations.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "msdiff/numerics.hpp"
#include "msdiff/types.hpp"

namespace msdiff {

// pi[0] belongs to the point mass at zero; pi[k] to N(0, sigma_grid[k-1]^2).
struct MixturePrior {
    std::vector<double> sigma_grid;
    std::vector<double> pi;

    static MixturePrior point_mass(std::vector<double> grid = {}) {
        MixturePrior p;
        p.sigma_grid = std::move(grid);
        p.pi.assign(p.sigma_grid.size() + 1, 0.0);
        p.pi[0] = 1.0;
        return p;
    }

    void check() const {
        if (pi.size() != sigma_grid.size() + 1)
            throw data_error("MixturePrior: pi length must be grid length + 1");
        double s = 0.0;
        for (double v : pi) {
            if (v < 0.0) throw data_error("MixturePrior: negative mixture weight");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-10)
            throw data_error("MixturePrior: weights must sum to 1");
        for (std::size_t k = 1; k < sigma_grid.size(); ++k)
            if (!(sigma_grid[k] > sigma_grid[k - 1]))
                throw data_error("MixturePrior: sigma grid must be strictly increasing");
        for (double s2 : sigma_grid)
            if (!(s2 > 0.0)) throw data_error("MixturePrior: sigma grid must be positive");
    }

    double prior_variance() const {
        double v = 0.0;
        for (std::size_t k = 0; k < sigma_grid.size(); ++k)
            v += pi[k + 1] * sigma_grid[k] * sigma_grid[k];
        return v;
    }
};

// One normal-approximated estimate entering shrinkage. `scale` selects the
// scale-specific prior; `shift` records the translation of origin.
struct NormalObservation {
    double estimate = 0.0;
    double se = kInf;
    int scale = 1;
    std::size_t shift = 0;
};

struct PosteriorSummary {
    double mean = 0.0;
    double variance = 0.0;
    double prob_zero = 1.0;
};

// Geometric grid from (min finite se)/se_divisor up to
// spread_multiplier * max sqrt(max(est^2 - se^2, 0)), the upper endpoint
// floored at floor_multiplier times the lower one.
inline std::vector<double> build_sigma_grid(std::span<const NormalObservation> obs,
                                            const SigmaGridPolicy& policy = {}) {
    double min_se = kInf;
    double max_spread2 = 0.0;
    for (const auto& o : obs) {
        if (!std::isfinite(o.se)) continue;
        if (!(o.se > 0.0)) throw data_error("build_sigma_grid: se must be positive");
        min_se = std::min(min_se, o.se);
        max_spread2 = std::max(max_spread2, o.estimate * o.estimate - o.se * o.se);
    }
    if (!std::isfinite(min_se))
        throw data_error("build_sigma_grid: no finite-se observations");
    const double sigma_min = min_se / policy.se_divisor;
    double sigma_max = policy.spread_multiplier * std::sqrt(std::max(max_spread2, 0.0));
    sigma_max = std::max(sigma_max, policy.floor_multiplier * sigma_min);
    std::vector<double> grid{sigma_min};
    while (grid.back() < sigma_max * (1.0 - 1e-9)) grid.push_back(grid.back() * policy.ratio);
    return grid;
}

namespace eb_detail {

// log marginal density of one observation under component k
// (k = 0 is the point mass)
inline double log_component_density(const NormalObservation& o,
                                    std::span<const double> grid, std::size_t k) {
    const double comp_var = k == 0 ? 0.0 : grid[k - 1] * grid[k - 1];
    return log_normal_pdf(o.estimate, 0.0, comp_var + o.se * o.se);
}

}  // namespace eb_detail

// Marginal log-likelihood of observations under a fixed prior;
// infinite-se observations contribute zero.
inline double marginal_loglik(std::span<const NormalObservation> obs,
                              const MixturePrior& prior) {
    prior.check();
    const std::size_t K = prior.sigma_grid.size();
    std::vector<double> terms;
    terms.reserve(K + 1);
    double ll = 0.0;
    for (const auto& o : obs) {
        if (!std::isfinite(o.se)) continue;
        terms.clear();
        for (std::size_t k = 0; k <= K; ++k) {
            if (prior.pi[k] <= 0.0) continue;
            terms.push_back(std::log(prior.pi[k]) +
                            eb_detail::log_component_density(o, prior.sigma_grid, k));
        }
        ll += log_sum_exp(terms);
    }
    return ll;
}

struct EmFit {
    MixturePrior prior;
    // marginal log-likelihood of the fitted prior (no penalty term)
    double loglik = 0.0;
    // EM objective (penalized marginal log-likelihood) after each
    // iteration; non-decreasing
    std::vector<double> trace;
};

// Mixture proportions by EM on the convolved marginal
// N(estimate; 0, sigma_k^2 + se^2), with squared-extrapolation acceleration
// (plain EM crawls along the near-flat ridge between the point mass and the
// smallest slab components). Extrapolated iterates are kept only when they
// beat the plain double EM step, so the recorded objective is
// non-decreasing.
//
// `pi0_penalty` adds pi0_penalty pseudo-observations to the point mass per
// real observation (0 = plain maximum likelihood). The point mass and slab
// components with sigma well below the smallest se are essentially
// unidentifiable; the penalty breaks that tie toward the null while staying
// far too small to override real evidence. The penalized optimum always
// satisfies loglik(fit) >= loglik(pi0 = 1); a final polish additionally
// replaces the answer with the all-point-mass prior whenever that scores at
// least as high, so the fitted prior never loses to the null.
inline EmFit fit_mixture_em(std::span<const NormalObservation> obs,
                            std::span<const double> sigma_grid,
                            double tol = 1e-7, int max_iter = 500,
                            double pi0_penalty = 0.005) {
    if (!(tol > 0.0) || max_iter < 1 || !(pi0_penalty >= 0.0))
        throw data_error("fit_mixture_em: invalid tolerance, iteration cap or penalty");
    for (std::size_t k = 1; k < sigma_grid.size(); ++k)
        if (!(sigma_grid[k] > sigma_grid[k - 1]))
            throw data_error("fit_mixture_em: sigma grid must be strictly increasing");

    EmFit out;
    out.prior.sigma_grid.assign(sigma_grid.begin(), sigma_grid.end());
    const std::size_t K = sigma_grid.size();

    std::vector<const NormalObservation*> finite;
    for (const auto& o : obs) {
        if (!(o.se > 0.0)) throw data_error("fit_mixture_em: se must be positive");
        if (std::isfinite(o.se)) finite.push_back(&o);
    }
    if (finite.empty() || K == 0) {
        out.prior = MixturePrior::point_mass(out.prior.sigma_grid);
        out.loglik = marginal_loglik(obs, out.prior);
        return out;
    }

    const std::size_t m = finite.size();
    // cache component log densities: m x (K+1)
    std::vector<double> logf(m * (K + 1));
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k <= K; ++k)
            logf[j * (K + 1) + k] =
                eb_detail::log_component_density(*finite[j], sigma_grid, k);

    const double pseudo = pi0_penalty * static_cast<double>(m);
    std::vector<double> logpost(K + 1);
    auto objective_at = [&](const std::vector<double>& pi) {
        double ll = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t k = 0; k <= K; ++k)
                logpost[k] = (pi[k] > 0.0 ? std::log(pi[k]) : kNegInf) +
                             logf[j * (K + 1) + k];
            ll += log_sum_exp(logpost);
        }
        if (pseudo > 0.0) ll += pseudo * (pi[0] > 0.0 ? std::log(pi[0]) : kNegInf);
        return ll;
    };
    auto em_step = [&](const std::vector<double>& pi) {
        std::vector<double> acc(K + 1, 0.0);
        acc[0] = pseudo;
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t k = 0; k <= K; ++k)
                logpost[k] = (pi[k] > 0.0 ? std::log(pi[k]) : kNegInf) +
                             logf[j * (K + 1) + k];
            const double lse = log_sum_exp(logpost);
            for (std::size_t k = 0; k <= K; ++k)
                acc[k] += std::exp(logpost[k] - lse);
        }
        for (auto& v : acc) v /= static_cast<double>(m) + pseudo;
        return acc;
    };

    std::vector<double> pi(K + 1, 0.5 / static_cast<double>(K));
    pi[0] = 0.5;
    double cur = objective_at(pi);
    out.trace.push_back(cur);
    for (int steps = 0; steps < max_iter;) {
        const auto p1 = em_step(pi);
        const auto p2 = em_step(p1);
        steps += 2;
        // squared extrapolation through (pi, p1, p2)
        double rr = 0.0, vv = 0.0;
        std::vector<double> cand(K + 1);
        for (std::size_t k = 0; k <= K; ++k) {
            const double r = p1[k] - pi[k];
            const double v = p2[k] - p1[k] - r;
            rr += r * r;
            vv += v * v;
        }
        double next_ll = objective_at(p2);
        std::vector<double> next = p2;
        if (vv > 0.0) {
            const double alpha = std::min(-1.0, -std::sqrt(rr / vv));
            double sum = 0.0;
            for (std::size_t k = 0; k <= K; ++k) {
                const double r = p1[k] - pi[k];
                const double v = p2[k] - p1[k] - r;
                cand[k] = std::max(0.0, pi[k] - 2.0 * alpha * r + alpha * alpha * v);
                sum += cand[k];
            }
            if (sum > 0.0) {
                for (auto& v : cand) v /= sum;
                const double cand_ll = objective_at(cand);
                if (cand_ll > next_ll) {
                    next = cand;
                    next_ll = cand_ll;
                }
            }
        }
        const double gain = next_ll - cur;
        pi = std::move(next);
        cur = next_ll;
        out.trace.push_back(cur);
        if (gain < tol) break;
    }
    out.prior.pi = pi;
    out.loglik = marginal_loglik(obs, out.prior);

    const auto null_prior = MixturePrior::point_mass(out.prior.sigma_grid);
    const double null_ll = marginal_loglik(obs, null_prior);
    if (null_ll >= out.loglik) {
        out.prior = null_prior;
        out.loglik = null_ll;
        out.trace.push_back(null_ll);
    }
    return out;
}

// Closed-form posterior moments of one estimate under the mixture prior.
inline PosteriorSummary posterior_moments(const NormalObservation& o,
                                          const MixturePrior& prior) {
    prior.check();
    PosteriorSummary s;
    const std::size_t K = prior.sigma_grid.size();
    if (!std::isfinite(o.se)) {
        s.mean = 0.0;
        s.variance = prior.prior_variance();
        s.prob_zero = prior.pi[0];
        return s;
    }
    if (!(o.se > 0.0)) throw data_error("posterior_moments: se must be positive");
    const double se2 = o.se * o.se;
    std::vector<double> logw(K + 1, kNegInf);
    for (std::size_t k = 0; k <= K; ++k)
        if (prior.pi[k] > 0.0)
            logw[k] = std::log(prior.pi[k]) +
                      eb_detail::log_component_density(o, prior.sigma_grid, k);
    const double lse = log_sum_exp(logw);
    double mean = 0.0, second = 0.0;
    for (std::size_t k = 0; k <= K; ++k) {
        const double w = std::exp(logw[k] - lse);
        if (k == 0) {
            s.prob_zero = w;
            continue;
        }
        const double s2 = prior.sigma_grid[k - 1] * prior.sigma_grid[k - 1];
        const double mk = o.estimate * s2 / (s2 + se2);
        const double vk = s2 * se2 / (s2 + se2);
        mean += w * mk;
        second += w * (vk + mk * mk);
    }
    s.mean = mean;
    s.variance = std::max(0.0, second - mean * mean);
    return s;
}

// Moment-matched average of posterior summaries (a uniform mixture): the
// variance is E[var + mean^2] - (E mean)^2.
inline PosteriorSummary ti_average(std::span<const PosteriorSummary> parts) {
    if (parts.empty()) throw data_error("ti_average: empty collection");
    PosteriorSummary out;
    double mean = 0.0, second = 0.0, pz = 0.0;
    for (const auto& p : parts) {
        mean += p.mean;
        second += p.variance + p.mean * p.mean;
        pz += p.prob_zero;
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    out.mean = mean * inv;
    out.variance = std::max(0.0, second * inv - out.mean * out.mean);
    out.prob_zero = pz * inv;
    return out;
}

}  // namespace msdiff
