#pragma once

// Reconstruction of the observation-space effect curve, the per-bin log
// ratio of group intensities, from multiscale node posteriors.
//
// Path decomposition: log lambda_b = log lambda_tot + sum over the nodes on
// the dyadic path to bin b of log h(alpha), where h is logistic(alpha) on
// the left half and 1 - logistic(alpha) on the right. The group contrast at
// bin b is then the total log fold change plus sum of
// log h(mu + beta) - log h(mu) along the path.
//
// The Taylor route approximates the posterior mean by a Taylor expansion
// (curvature plus Gaussian fourth- and sixth-moment terms, which keeps the
// truncation bias below Monte Carlo resolution at moderate posterior
// spreads) and the variance to first order, treating node posteriors as
// independent across nodes and mu independent of beta within a node. The
// Monte Carlo route pushes posterior draws through the exact path formula
// and serves as the accuracy oracle for the Taylor route.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "msdiff/ebshrink.hpp"
#include "msdiff/mstransform.hpp"
#include "msdiff/numerics.hpp"
#include "msdiff/rng.hpp"
#include "msdiff/types.hpp"

namespace msdiff {

struct EffectCurve {
    std::vector<double> mean;
    std::vector<double> sd;
    std::vector<double> baseline_mean;  // posterior mean of log lambda^(0)_b
    std::size_t bins() const { return mean.size(); }
};

struct SignificantInterval {
    std::size_t start = 0;  // 1-based, inclusive
    std::size_t end = 0;
    int direction = 0;  // +1 or -1
};

struct SignificantIntervals {
    std::vector<SignificantInterval> intervals;
    double z_threshold = 2.0;
};

// Node posteriors for one dyadic frame, scale-major flat layout of length
// B-1 (same indexing as MultiscaleTable).
struct NodePosteriors {
    std::size_t bins = 0;
    int levels = 0;
    std::vector<PosteriorSummary> mu;
    std::vector<PosteriorSummary> beta;

    void check() const {
        if (!is_power_of_two(bins) || mu.size() != bins - 1 || beta.size() != bins - 1)
            throw data_error("NodePosteriors: missing node posterior");
    }
};

namespace effects_detail {

// log h and derivatives; plus = left half. The second derivative is the
// same for both halves: -sigma(a) sigma(-a).
inline double log_h(double a, bool plus) { return plus ? log_logistic(a) : log_logistic_c(a); }
inline double log_h_d1(double a, bool plus) {
    const double s = logistic(a);
    return plus ? 1.0 - s : -s;
}
inline double log_h_d2(double a) {
    const double s = logistic(a);
    return -s * (1.0 - s);
}
// higher derivatives; orders >= 2 agree for both halves because
// log h+ - log h- is linear in a
inline double log_h_d4(double a) {
    const double s = logistic(a);
    const double w = s * (1.0 - s);
    const double u = 1.0 - 2.0 * s;
    return -w * (u * u - 2.0 * w);
}
inline double log_h_d6(double a) {
    const double s = logistic(a);
    const double w = s * (1.0 - s);
    const double u = 1.0 - 2.0 * s;
    return -w * ((u * u - 2.0 * w) * (u * u - 8.0 * w) - 12.0 * u * u * w);
}

// conditional slab moments of a spike-and-slab summary
inline void slab_moments(const PosteriorSummary& p, double& pz, double& mean,
                         double& var) {
    pz = std::min(std::max(p.prob_zero, 0.0), 1.0);
    if (pz >= 1.0 - 1e-15) {
        pz = 1.0;
        mean = 0.0;
        var = 0.0;
        return;
    }
    const double denom = 1.0 - pz;
    mean = p.mean / denom;
    var = std::max(0.0, (p.variance + p.mean * p.mean) / denom - mean * mean);
}

}  // namespace effects_detail

// Taylor propagation of node posteriors through the path decomposition
// (fourth-order mean, first-order variance), conditioning exactly on the
// point mass of beta (a zero beta contributes a zero path term, so only the
// slab branch is expanded). `total_log_fc` is the posterior of the total
// log fold change; `baseline_log_total` anchors the reported baseline curve.
inline EffectCurve effect_posterior_taylor(const NodePosteriors& post,
                                           const PosteriorSummary& total_log_fc,
                                           double baseline_log_total = 0.0) {
    post.check();
    const std::size_t B = post.bins;
    EffectCurve curve;
    const double tot_var = std::isfinite(total_log_fc.variance) ? total_log_fc.variance : 0.0;
    curve.mean.assign(B, total_log_fc.mean);
    curve.sd.assign(B, tot_var);  // accumulate variances, then sqrt
    curve.baseline_mean.assign(B, baseline_log_total);

    for (int s = 1; s <= post.levels; ++s) {
        const std::size_t len = B >> (s - 1);
        const std::size_t half = len >> 1;
        const std::size_t nodes = std::size_t{1} << (s - 1);
        for (std::size_t l = 0; l < nodes; ++l) {
            const std::size_t idx = node_flat_index(s, static_cast<std::int64_t>(l + 1));
            const auto& pm = post.mu[idx];
            const double a0 = pm.mean;
            const double vmu = pm.variance;
            double pz, b_slab, v_slab;
            effects_detail::slab_moments(post.beta[idx], pz, b_slab, v_slab);
            const double slab_w = 1.0 - pz;
            const double a1 = a0 + b_slab;
            const double d2_a0 = effects_detail::log_h_d2(a0);
            const double d2_a1 = effects_detail::log_h_d2(a1);
            // Gaussian moment terms: E[(X-m)^4] = 3 var^2, E[(X-m)^6] = 15 var^3
            const double v1 = vmu + v_slab;
            const double hi_corr =
                0.125 * (effects_detail::log_h_d4(a1) * v1 * v1 -
                         effects_detail::log_h_d4(a0) * vmu * vmu) +
                (1.0 / 48.0) * (effects_detail::log_h_d6(a1) * v1 * v1 * v1 -
                                effects_detail::log_h_d6(a0) * vmu * vmu * vmu);
            for (int side = 0; side < 2; ++side) {
                const bool plus = side == 0;
                // slab-conditional term moments
                const double m_slab =
                    effects_detail::log_h(a1, plus) - effects_detail::log_h(a0, plus) +
                    0.5 * (d2_a1 * v1 - d2_a0 * vmu) + hi_corr;
                const double g_mu = effects_detail::log_h_d1(a1, plus) -
                                    effects_detail::log_h_d1(a0, plus);
                const double g_beta = effects_detail::log_h_d1(a1, plus);
                const double v_term = g_mu * g_mu * vmu + g_beta * g_beta * v_slab;
                // mix with the exact zero of the spike branch
                const double mean_term = slab_w * m_slab;
                const double var_term =
                    std::max(0.0, slab_w * (v_term + m_slab * m_slab) -
                                      mean_term * mean_term);
                const double base_term =
                    effects_detail::log_h(a0, plus) + 0.5 * d2_a0 * vmu;
                const std::size_t begin = l * len + (plus ? 0 : half);
                for (std::size_t b = begin; b < begin + half; ++b) {
                    curve.mean[b] += mean_term;
                    curve.sd[b] += var_term;
                    curve.baseline_mean[b] += base_term;
                }
            }
        }
    }
    for (double& v : curve.sd) v = std::sqrt(std::max(v, 0.0));
    return curve;
}

namespace effects_detail {

// Draw from a spike-and-slab posterior summary preserving its overall
// mean/variance: exact zero with probability prob_zero, otherwise a normal
// with the conditional slab moments.
inline double sample_posterior(const PosteriorSummary& p, std::mt19937_64& eng) {
    double p0, slab_mean, slab_var;
    slab_moments(p, p0, slab_mean, slab_var);
    if (p0 >= 1.0) return 0.0;
    if (p0 > 0.0) {
        std::bernoulli_distribution spike(p0);
        if (spike(eng)) return 0.0;
    }
    if (slab_var <= 0.0) return slab_mean;
    std::normal_distribution<double> slab(slab_mean, std::sqrt(slab_var));
    return slab(eng);
}

}  // namespace effects_detail

// Monte Carlo version of the reconstruction: posterior draws pushed through
// the exact path formula. Deterministic given the seed. With a single draw
// the sd is zero by convention (low confidence).
inline EffectCurve effect_posterior_mc(const NodePosteriors& post,
                                       const PosteriorSummary& total_log_fc,
                                       std::size_t n_samples, std::uint64_t seed,
                                       double baseline_log_total = 0.0) {
    post.check();
    if (n_samples < 1) throw data_error("effect_posterior_mc: n_samples must be >= 1");
    const std::size_t B = post.bins;
    // deviations from the first draw avoid cancellation when the posterior
    // is (near-)degenerate
    std::vector<double> ref(B, 0.0);
    std::vector<double> acc(B, 0.0), acc2(B, 0.0), base_acc(B, 0.0);
    std::vector<double> draw_mu(B - 1), draw_beta(B - 1);
    std::vector<double> bin_eff(B), bin_base(B);
    auto eng = make_engine(seed);
    const double tot_var = std::isfinite(total_log_fc.variance) ? total_log_fc.variance : 0.0;
    std::normal_distribution<double> total_draw(0.0, 1.0);

    for (std::size_t it = 0; it < n_samples; ++it) {
        for (std::size_t i = 0; i + 1 < B; ++i) {
            draw_mu[i] = effects_detail::sample_posterior(post.mu[i], eng);
            draw_beta[i] = effects_detail::sample_posterior(post.beta[i], eng);
        }
        const double tot = total_log_fc.mean +
                           (tot_var > 0.0 ? std::sqrt(tot_var) * total_draw(eng) : 0.0);
        std::fill(bin_eff.begin(), bin_eff.end(), tot);
        std::fill(bin_base.begin(), bin_base.end(), baseline_log_total);
        for (int s = 1; s <= post.levels; ++s) {
            const std::size_t len = B >> (s - 1);
            const std::size_t half = len >> 1;
            const std::size_t nodes = std::size_t{1} << (s - 1);
            for (std::size_t l = 0; l < nodes; ++l) {
                const std::size_t idx = node_flat_index(s, static_cast<std::int64_t>(l + 1));
                const double a0 = draw_mu[idx];
                const double a1 = a0 + draw_beta[idx];
                for (int side = 0; side < 2; ++side) {
                    const bool plus = side == 0;
                    const double eff = effects_detail::log_h(a1, plus) -
                                       effects_detail::log_h(a0, plus);
                    const double base = effects_detail::log_h(a0, plus);
                    const std::size_t begin = l * len + (plus ? 0 : half);
                    for (std::size_t b = begin; b < begin + half; ++b) {
                        bin_eff[b] += eff;
                        bin_base[b] += base;
                    }
                }
            }
        }
        if (it == 0) ref = bin_eff;
        for (std::size_t b = 0; b < B; ++b) {
            const double d = bin_eff[b] - ref[b];
            acc[b] += d;
            acc2[b] += d * d;
            base_acc[b] += bin_base[b];
        }
    }

    EffectCurve curve;
    curve.mean.resize(B);
    curve.sd.resize(B);
    curve.baseline_mean.resize(B);
    const double inv = 1.0 / static_cast<double>(n_samples);
    for (std::size_t b = 0; b < B; ++b) {
        const double dm = acc[b] * inv;
        curve.mean[b] = ref[b] + dm;
        curve.sd[b] = std::sqrt(std::max(0.0, acc2[b] * inv - dm * dm));
        curve.baseline_mean[b] = base_acc[b] * inv;
    }
    return curve;
}

// Maximal runs of same-direction bins with |mean| > z sd (and sd > 0).
inline SignificantIntervals flag_significant_bins(const EffectCurve& curve, double z) {
    if (!(z > 0.0)) throw data_error("flag_significant_bins: z must be positive");
    SignificantIntervals out;
    out.z_threshold = z;
    const std::size_t B = curve.bins();
    std::size_t run_start = 0;
    int run_dir = 0;
    for (std::size_t b = 0; b <= B; ++b) {
        int dir = 0;
        if (b < B && curve.sd[b] > 0.0 && std::abs(curve.mean[b]) > z * curve.sd[b])
            dir = curve.mean[b] > 0.0 ? 1 : -1;
        if (dir != run_dir) {
            if (run_dir != 0)
                out.intervals.push_back({run_start + 1, b, run_dir});
            run_start = b;
            run_dir = dir;
        }
    }
    return out;
}

// Average per-shift curves back in the unshifted frame: curves[j] was
// computed on the series shifted by shifts[j], so its bin b describes
// original bin (b + shifts[j]) mod B.
inline EffectCurve average_shifted_curves(std::span<const EffectCurve> curves,
                                          std::span<const std::size_t> shifts) {
    if (curves.empty() || curves.size() != shifts.size())
        throw data_error("average_shifted_curves: inconsistent shift sets");
    const std::size_t B = curves.front().bins();
    for (const auto& c : curves)
        if (c.bins() != B) throw data_error("average_shifted_curves: inconsistent shift sets");
    EffectCurve out;
    out.mean.assign(B, 0.0);
    out.sd.assign(B, 0.0);
    out.baseline_mean.assign(B, 0.0);
    std::vector<PosteriorSummary> parts(curves.size());
    for (std::size_t b = 0; b < B; ++b) {
        double base = 0.0;
        for (std::size_t j = 0; j < curves.size(); ++j) {
            const std::size_t src = (b + B - shifts[j] % B) % B;
            // original bin b sits at shifted position src in frame j
            parts[j] = {curves[j].mean[src], curves[j].sd[src] * curves[j].sd[src], 0.0};
            base += curves[j].baseline_mean[src];
        }
        const auto avg = ti_average(parts);
        out.mean[b] = avg.mean;
        out.sd[b] = std::sqrt(avg.variance);
        out.baseline_mean[b] = base / static_cast<double>(curves.size());
    }
    return out;
}

}  // namespace msdiff
