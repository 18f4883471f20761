#pragma once

// Region-level likelihood-ratio statistic, permutation label plans,
// empirical p-values against a null reference, and Storey q-values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "msdiff/ebshrink.hpp"
#include "msdiff/glm.hpp"
#include "msdiff/numerics.hpp"
#include "msdiff/rng.hpp"
#include "msdiff/types.hpp"

namespace msdiff {

struct RegionTestResult {
    double log_lambda = 0.0;
    double p_value = 1.0;
    double q_value = 1.0;
    std::size_t n_null = 0;
};

enum class NullSource { permutation, control_vs_control };

struct NullReference {
    std::vector<double> statistics;
    NullSource source = NullSource::permutation;
    // set when the group sizes admit fewer distinct relabelings than asked for
    bool exhausted = false;
};

// One scale's beta observations with its fitted prior.
struct ScaleGroup {
    int scale = 1;
    std::vector<NormalObservation> observations;
    MixturePrior prior;
};

// log Lambda: fitted-prior marginal log-likelihood minus the all-point-mass
// null, summed over scales, plus the total-intensity contribution.
inline double lr_statistic(std::span<const ScaleGroup> groups,
                           const TotalEffectEstimate& total, bool include_total) {
    double log_lambda = 0.0;
    for (const auto& g : groups) {
        const auto null_prior = MixturePrior::point_mass(g.prior.sigma_grid);
        log_lambda += marginal_loglik(g.observations, g.prior) -
                      marginal_loglik(g.observations, null_prior);
    }
    if (include_total) log_lambda += total.loglik_alt - total.loglik_null;
    return log_lambda;
}

namespace perm_detail {

inline double log_distinct_assignments(std::span<const double> x) {
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    double log_count = std::lgamma(static_cast<double>(x.size()) + 1.0);
    std::size_t run = 1;
    for (std::size_t i = 1; i <= sorted.size(); ++i) {
        if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
            ++run;
        } else {
            log_count -= std::lgamma(static_cast<double>(run) + 1.0);
            run = 1;
        }
    }
    return log_count;
}

}  // namespace perm_detail

namespace perm_detail {

// For a two-valued covariate the statistic depends on the labeling only
// through the induced partition of samples (swapping the two values is a
// group renaming), so the partition twin of the identity must be excluded
// from the null alongside the identity itself; otherwise the observed
// statistic reappears in the null and floors every p-value.
inline bool matches_identity_partition(std::span<const double> a,
                                       std::span<const double> x, bool two_valued,
                                       double v1, double v2) {
    if (std::equal(a.begin(), a.end(), x.begin())) return true;
    if (!two_valued) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double swapped = x[i] == v1 ? v2 : v1;
        if (a[i] != swapped) return false;
    }
    return true;
}

}  // namespace perm_detail

// Relabelings of the covariate for the permutation null; the identity (and,
// for two-valued covariates, its group-renamed twin) is excluded. When the
// distinct assignments are enumerable (count below 4 n_perms) they are
// listed exactly: a seeded subset without replacement when more than
// n_perms exist, all of them when the count matches, and a seeded
// with-replacement sample when fewer exist (marking `exhausted`), so the
// null always reaches the requested resolution. Beyond enumeration, label
// orderings are shuffled with replacement. Deterministic given the seed.
inline std::vector<std::vector<double>> permutation_assignments(
    std::span<const double> x, int n_perms, std::uint64_t seed,
    bool* exhausted = nullptr) {
    if (n_perms < 1) throw data_error("permutation_assignments: n_perms must be >= 1");
    if (exhausted) *exhausted = false;
    const double log_distinct = perm_detail::log_distinct_assignments(x);
    const double log_budget = std::log(4.0 * n_perms + 1.0);
    std::vector<std::vector<double>> out;
    auto engine = make_engine(seed);

    double v1 = x.front(), v2 = x.front();
    bool two_valued = true;
    for (double v : x) {
        if (v == v1) continue;
        if (v2 == v1) v2 = v;
        else if (v != v2) two_valued = false;
    }
    two_valued = two_valued && v2 != v1;
    auto is_identity = [&](std::span<const double> a) {
        return perm_detail::matches_identity_partition(a, x, two_valued, v1, v2);
    };

    if (log_distinct <= log_budget + 1e-9) {
        std::vector<double> sorted(x.begin(), x.end());
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::vector<double>> all;
        do {
            if (!is_identity(sorted)) all.push_back(sorted);
        } while (std::next_permutation(sorted.begin(), sorted.end()));
        if (all.empty()) throw data_error("permutation_assignments: no relabeling exists");
        if (static_cast<int>(all.size()) == n_perms) return all;
        out.reserve(n_perms);
        if (static_cast<int>(all.size()) < n_perms) {
            if (exhausted) *exhausted = true;
            std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
            for (int i = 0; i < n_perms; ++i) out.push_back(all[pick(engine)]);
            return out;
        }
        std::vector<std::size_t> idx(all.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), engine);
        for (int i = 0; i < n_perms; ++i) out.push_back(all[idx[i]]);
        return out;
    }

    std::vector<double> work(x.begin(), x.end());
    out.reserve(n_perms);
    while (static_cast<int>(out.size()) < n_perms) {
        std::shuffle(work.begin(), work.end(), engine);
        if (is_identity(work)) continue;
        out.push_back(work);
    }
    return out;
}

// Add-one estimator: p = (1 + #{null >= stat}) / (1 + n_null); never zero.
inline double empirical_pvalue(double stat, const NullReference& null_ref) {
    if (null_ref.statistics.empty())
        throw data_error("empirical_pvalue: empty null reference");
    std::size_t ge = 0;
    for (double v : null_ref.statistics)
        if (v >= stat) ++ge;
    return static_cast<double>(1 + ge) /
           static_cast<double>(1 + null_ref.statistics.size());
}

// Storey q-values: pi0 estimated by #{p > lambda} / (m (1 - lambda)),
// clamped into (0, 1], then q_i = pi0 * min over thresholds t >= p_i of
// m t / #{p <= t}, capped at 1. `pi0_override` forces pi0 (1 gives
// Benjamini-Hochberg adjusted p-values).
inline std::vector<double> qvalues(std::span<const double> pvals,
                                   double pi0_lambda = 0.5,
                                   std::optional<double> pi0_override = std::nullopt) {
    const std::size_t m = pvals.size();
    if (m == 0) return {};
    for (double p : pvals)
        if (!(p > 0.0) || p > 1.0 || !std::isfinite(p))
            throw data_error("qvalues: p-values must lie in (0, 1]");
    if (!(pi0_lambda > 0.0) || !(pi0_lambda < 1.0))
        throw data_error("qvalues: pi0 lambda must lie in (0, 1)");

    double pi0;
    if (pi0_override) {
        pi0 = *pi0_override;
        if (!(pi0 > 0.0) || pi0 > 1.0) throw data_error("qvalues: pi0 must lie in (0, 1]");
    } else {
        std::size_t above = 0;
        for (double p : pvals)
            if (p > pi0_lambda) ++above;
        pi0 = static_cast<double>(above) /
              (static_cast<double>(m) * (1.0 - pi0_lambda));
        pi0 = std::min(pi0, 1.0);
        if (!(pi0 > 0.0)) pi0 = 1.0 / static_cast<double>(m);
    }

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
    std::vector<double> q(m);
    double running = kInf;
    for (std::size_t r = m; r-- > 0;) {
        const double cand = pi0 * static_cast<double>(m) * pvals[order[r]] /
                            static_cast<double>(r + 1);
        running = std::min(running, cand);
        q[order[r]] = std::min(running, 1.0);
    }
    return q;
}

}  // namespace msdiff
