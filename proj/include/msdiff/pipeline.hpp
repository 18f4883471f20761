#pragma once

// Per-region analysis pipeline: half-sum tables (one per circular shift, via
// the shared sum pool), node mixed-model fits, Wakefield coordinates,
// per-scale empirical-Bayes priors, the likelihood-ratio statistic, and the
// translation-averaged effect curve.
//
// Translation invariance exploits the fact that across all B shifts the
// trees at scale s visit only B distinct circular nodes (scale, offset),
// each appearing in 2^(s-1) shifts. Fitting and shrinking the distinct
// nodes once is equivalent to pooling every shifted tree: within a scale
// the multiplicities are uniform, so mixture fits on the distinct set match
// fits on the pooled instances, and per-shift trees are reassembled from the
// shared posteriors only for effect-curve reconstruction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msdiff/ebshrink.hpp"
#include "msdiff/effects.hpp"
#include "msdiff/glm.hpp"
#include "msdiff/inference.hpp"
#include "msdiff/mstransform.hpp"
#include "msdiff/numerics.hpp"
#include "msdiff/types.hpp"

namespace msdiff {

// One distinct circular node: interval of length B/2^(scale-1) starting at
// `offset` in the unshifted frame.
struct TiNodeKey {
    int scale = 1;
    std::size_t offset = 0;
    auto operator<=>(const TiNodeKey&) const = default;
};

struct RegionAnalysis {
    std::string region_id;
    double log_lambda = 0.0;
    TotalEffectEstimate total;
    // node estimates of the unshifted tree, scale-major (B-1 entries)
    std::vector<NodeEstimate> node_estimates;
    // effect curve over the original (pre-padding) bins; empty when effects
    // were not requested
    EffectCurve curve;
    SignificantIntervals significant;
    std::vector<std::size_t> shifts;
};

namespace pipeline_detail {

inline std::vector<std::size_t> shift_set(std::size_t bins, const AnalysisConfig& config) {
    std::vector<std::size_t> shifts;
    if (!config.ti_enabled) return {0};
    for (std::size_t k = 0; k < bins; k += static_cast<std::size_t>(config.ti_stride))
        shifts.push_back(k);
    return shifts;
}

// distinct (scale, offset) keys visited by the given shifts, in a fixed
// deterministic order (scale-major, offset-minor)
inline std::vector<TiNodeKey> distinct_nodes(std::size_t bins, int levels,
                                             std::span<const std::size_t> shifts) {
    std::vector<TiNodeKey> keys;
    std::vector<char> seen(bins);
    for (int s = 1; s <= levels; ++s) {
        std::fill(seen.begin(), seen.end(), 0);
        const std::size_t len = bins >> (s - 1);
        const std::size_t nodes = std::size_t{1} << (s - 1);
        for (std::size_t k : shifts)
            for (std::size_t l = 0; l < nodes; ++l) seen[(l * len + k) % bins] = 1;
        for (std::size_t o = 0; o < bins; ++o)
            if (seen[o]) keys.push_back({s, o});
    }
    return keys;
}

}  // namespace pipeline_detail

// Full analysis of one region. Deterministic given the configuration.
// `external_total` overrides the internally fitted total-intensity model
// (TotalModel::external workflows).
inline RegionAnalysis run_region(const CountsMatrix& counts, const Covariate& cov,
                                 const AnalysisConfig& config,
                                 const TotalEffectEstimate* external_total = nullptr) {
    config.check();
    validate(counts, cov);
    const std::size_t B = counts.bins;
    const int levels = log2_exact(B);
    const std::size_t n = counts.n_samples;

    RegionAnalysis out;
    out.region_id = counts.region_id;
    out.shifts = pipeline_detail::shift_set(B, config);

    // region totals and the overall-intensity model
    std::vector<std::int64_t> totals(n);
    for (std::size_t i = 0; i < n; ++i) totals[i] = counts.row_total(i);
    if (external_total) {
        out.total = *external_total;
    } else {
        switch (config.total_model) {
            case TotalModel::poisson_regression:
                out.total = fit_total_poisson(totals, cov, config.glmm);
                break;
            case TotalModel::binomial_regression:
                out.total = fit_total_binomial(totals, cov, config.glmm);
                break;
            case TotalModel::external:
                throw data_error("run_region: external total model needs external statistics");
            case TotalModel::none:
                out.total = TotalEffectEstimate{};
                out.total.method = TotalModel::none;
                out.total.se_log_fc = kInf;
                break;
        }
    }

    // shared circular sums per sample
    std::vector<TiSumPool> pools;
    pools.reserve(n);
    for (std::size_t i = 0; i < n; ++i) pools.emplace_back(counts.row(i));

    const auto keys = pipeline_detail::distinct_nodes(B, levels, out.shifts);
    std::vector<NodeEstimate> fits(keys.size());
    std::vector<std::int64_t> succ(n), trials(n);
    for (std::size_t j = 0; j < keys.size(); ++j) {
        const auto [s, o] = keys[j];
        const std::size_t half = (B >> (s - 1)) / 2;
        for (std::size_t i = 0; i < n; ++i) {
            succ[i] = pools[i].half_sum(s, o);
            trials[i] = succ[i] + pools[i].half_sum(s, (o + half) % B);
        }
        fits[j] = fit_binomial_node(succ, trials, cov, config.glmm);
    }

    // scale-grouped observations in (mu*, beta) coordinates
    std::vector<NormalObservation> beta_obs(keys.size()), mu_obs(keys.size());
    for (std::size_t j = 0; j < keys.size(); ++j) {
        beta_obs[j] = {fits[j].beta_hat, fits[j].se_beta, keys[j].scale, keys[j].offset};
        mu_obs[j] = {fits[j].mu_star_hat, fits[j].se_mu_star, keys[j].scale, keys[j].offset};
    }

    bool any_informative = false;
    for (const auto& f : fits) any_informative = any_informative || f.informative;

    std::vector<ScaleGroup> beta_groups;
    std::vector<MixturePrior> mu_priors(levels + 1);
    if (any_informative) {
        const auto beta_grid = build_sigma_grid(beta_obs, config.sigma_grid);
        std::vector<double> mu_grid;
        if (config.compute_effects) mu_grid = build_sigma_grid(mu_obs, config.sigma_grid);
        for (int s = 1; s <= levels; ++s) {
            ScaleGroup g;
            g.scale = s;
            for (std::size_t j = 0; j < keys.size(); ++j)
                if (keys[j].scale == s) g.observations.push_back(beta_obs[j]);
            auto em = fit_mixture_em(g.observations, beta_grid, config.em_tolerance,
                                     config.em_max_iter, config.em_pi0_penalty);
            g.prior = std::move(em.prior);
            beta_groups.push_back(std::move(g));
            if (config.compute_effects) {
                std::vector<NormalObservation> mu_scale;
                for (std::size_t j = 0; j < keys.size(); ++j)
                    if (keys[j].scale == s) mu_scale.push_back(mu_obs[j]);
                mu_priors[s] = fit_mixture_em(mu_scale, mu_grid, config.em_tolerance,
                                              config.em_max_iter, config.em_pi0_penalty)
                                   .prior;
            }
        }
        out.log_lambda = lr_statistic(beta_groups, out.total,
                                      config.include_total &&
                                          config.total_model != TotalModel::none);
    } else {
        // no informative node anywhere: the multiscale part carries no
        // evidence and the statistic reduces to the total contribution
        out.log_lambda = config.include_total && config.total_model != TotalModel::none
                             ? out.total.loglik_alt - out.total.loglik_null
                             : 0.0;
    }

    // unshifted-tree node estimates for reporting
    out.node_estimates.resize(B - 1);
    {
        std::map<TiNodeKey, std::size_t> key_index;
        for (std::size_t j = 0; j < keys.size(); ++j) key_index[keys[j]] = j;
        for (int s = 1; s <= levels; ++s) {
            const std::size_t len = B >> (s - 1);
            const std::size_t nodes = std::size_t{1} << (s - 1);
            for (std::size_t l = 0; l < nodes; ++l) {
                const auto it = key_index.find({s, (l * len) % B});
                if (it != key_index.end())
                    out.node_estimates[node_flat_index(s, static_cast<std::int64_t>(l + 1))] =
                        fits[it->second];
            }
        }

        if (config.compute_effects) {
            // posterior summaries per distinct node, then per-shift curves
            std::vector<PosteriorSummary> post_mu(keys.size()), post_beta(keys.size());
            for (std::size_t j = 0; j < keys.size(); ++j) {
                const int s = keys[j].scale;
                const MixturePrior beta_prior =
                    any_informative ? beta_groups[s - 1].prior : MixturePrior::point_mass();
                const MixturePrior mu_prior =
                    any_informative ? mu_priors[s] : MixturePrior::point_mass();
                const auto pb = posterior_moments(beta_obs[j], beta_prior);
                const auto pm_star = posterior_moments(mu_obs[j], mu_prior);
                // back to (mu, beta): mu = mu* - c beta, with mu* and beta
                // independent a posteriori
                const double c = fits[j].centering_constant;
                PosteriorSummary pm;
                pm.mean = pm_star.mean - c * pb.mean;
                pm.variance = pm_star.variance + c * c * pb.variance;
                pm.prob_zero = pm_star.prob_zero * pb.prob_zero;
                post_mu[j] = pm;
                post_beta[j] = pb;
            }

            PosteriorSummary total_post;
            total_post.mean = out.total.log_fc_hat;
            total_post.variance = std::isfinite(out.total.se_log_fc)
                                      ? out.total.se_log_fc * out.total.se_log_fc
                                      : 0.0;
            total_post.prob_zero = 0.0;

            // baseline: depth-normalized total intensity of the reference
            // (lowest-covariate) samples
            const double x_min = *std::min_element(cov.values.begin(), cov.values.end());
            double ref_reads = 0.0, ref_lib = 0.0, mean_lib = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                mean_lib += cov.library_sizes[i];
                if (cov.values[i] == x_min) {
                    ref_reads += static_cast<double>(totals[i]);
                    ref_lib += cov.library_sizes[i];
                }
            }
            mean_lib /= static_cast<double>(n);
            const double baseline_log_total =
                ref_reads > 0.0 ? std::log(ref_reads / ref_lib * mean_lib) : 0.0;

            std::vector<EffectCurve> shift_curves;
            shift_curves.reserve(out.shifts.size());
            NodePosteriors frame;
            frame.bins = B;
            frame.levels = levels;
            frame.mu.resize(B - 1);
            frame.beta.resize(B - 1);
            for (std::size_t k : out.shifts) {
                for (int s = 1; s <= levels; ++s) {
                    const std::size_t len = B >> (s - 1);
                    const std::size_t nodes = std::size_t{1} << (s - 1);
                    for (std::size_t l = 0; l < nodes; ++l) {
                        const std::size_t j = key_index.at({s, (l * len + k) % B});
                        const std::size_t idx =
                            node_flat_index(s, static_cast<std::int64_t>(l + 1));
                        frame.mu[idx] = post_mu[j];
                        frame.beta[idx] = post_beta[j];
                    }
                }
                shift_curves.push_back(
                    effect_posterior_taylor(frame, total_post, baseline_log_total));
            }
            out.curve = shift_curves.size() == 1
                            ? std::move(shift_curves.front())
                            : average_shifted_curves(shift_curves, out.shifts);

            // report only the original (pre-padding) bins
            const std::size_t keep =
                counts.original_bins > 0 ? std::min(counts.original_bins, B) : B;
            out.curve.mean.resize(keep);
            out.curve.sd.resize(keep);
            out.curve.baseline_mean.resize(keep);
            out.significant = flag_significant_bins(out.curve, config.z_threshold);
        }
    }
    return out;
}

// Permutation null: rerun the pipeline (without effect curves) under seeded
// relabelings of the covariate. Duplicate assignments (which arise when the
// distinct relabelings are fewer than n_perms) are computed once.
inline NullReference permutation_null(const CountsMatrix& counts, const Covariate& cov,
                                      const AnalysisConfig& config, int n_perms,
                                      std::uint64_t seed) {
    NullReference ref;
    ref.source = NullSource::permutation;
    const auto assignments =
        permutation_assignments(cov.values, n_perms, seed, &ref.exhausted);
    AnalysisConfig perm_config = config;
    perm_config.compute_effects = false;
    std::map<std::vector<double>, double> cache;
    ref.statistics.reserve(assignments.size());
    for (const auto& relabeled : assignments) {
        auto it = cache.find(relabeled);
        if (it == cache.end()) {
            Covariate perm_cov;
            perm_cov.values = relabeled;
            perm_cov.library_sizes = cov.library_sizes;
            it = cache.emplace(relabeled,
                               run_region(counts, perm_cov, perm_config).log_lambda)
                     .first;
        }
        ref.statistics.push_back(it->second);
    }
    return ref;
}

}  // namespace msdiff
