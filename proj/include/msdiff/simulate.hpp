#pragma once

// Synthetic two-group count data over a design grid of sample sizes and
// sequencing depths, plus AUC scoring of method statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "msdiff/rng.hpp"
#include "msdiff/types.hpp"

namespace msdiff {

struct SimulationSpec {
    std::vector<double> base_intensity;  // unnormalized shape, length B
    std::vector<double> effect;          // per-bin log fold change; all zero = null
    int n_per_group = 3;
    double depth_multiplier = 1.0;
    // sd of optional per-sample log-normal intensity jitter
    double dispersion = 0.1;
    std::uint64_t seed = 0;
    std::string name;

    void check() const {
        if (base_intensity.empty()) throw data_error("SimulationSpec: empty base intensity");
        for (double v : base_intensity)
            if (!(v > 0.0)) throw data_error("SimulationSpec: base intensity must be > 0");
        if (effect.size() != base_intensity.size())
            throw data_error("SimulationSpec: effect length mismatch");
        if (n_per_group < 1) throw data_error("SimulationSpec: n_per_group must be >= 1");
        if (!(depth_multiplier > 0.0))
            throw data_error("SimulationSpec: depth multiplier must be > 0");
        if (dispersion < 0.0) throw data_error("SimulationSpec: negative dispersion");
    }

    bool is_null() const {
        return std::all_of(effect.begin(), effect.end(), [](double e) { return e == 0.0; });
    }
};

struct ScoredDataset {
    double score = 0.0;
    bool label = false;  // true = non-null
};

// Sample i of group g draws counts from Pois(depth * base_b * exp(g
// effect_b) * exp(eps_i)) with eps_i ~ N(0, dispersion^2). Library sizes are
// the expected per-sample totals without the group effect or jitter (the
// sequencing-depth analog), so depth normalization is exercised
// independently of sampling noise.
inline std::pair<CountsMatrix, Covariate> simulate_dataset(const SimulationSpec& spec) {
    spec.check();
    const std::size_t B = spec.base_intensity.size();
    const std::size_t n = 2 * static_cast<std::size_t>(spec.n_per_group);
    CountsMatrix counts(n, B, spec.name.empty() ? "sim" : spec.name);
    Covariate cov;
    cov.values.resize(n);
    cov.library_sizes.resize(n);
    const double base_total = std::accumulate(spec.base_intensity.begin(),
                                              spec.base_intensity.end(), 0.0);
    auto eng = make_engine(spec.seed);
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = i < static_cast<std::size_t>(spec.n_per_group) ? 0.0 : 1.0;
        cov.values[i] = g;
        cov.library_sizes[i] = spec.depth_multiplier * base_total;
        const double eps =
            spec.dispersion > 0.0 ? spec.dispersion * jitter(eng) : 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double lambda = spec.depth_multiplier * spec.base_intensity[b] *
                                  std::exp(g * spec.effect[b] + eps);
            std::poisson_distribution<std::int64_t> pois(lambda);
            counts.at(i, b) = lambda > 0.0 ? pois(eng) : 0;
        }
    }
    return {std::move(counts), std::move(cov)};
}

// Null/non-null spec pairs over the Cartesian product templates x sizes x
// depths (x replicates), with deterministic per-cell seeds derived from the
// master seed.
inline std::vector<std::pair<SimulationSpec, SimulationSpec>> paired_design(
    std::span<const SimulationSpec> templates, std::span<const int> sample_sizes,
    std::span<const double> depths, std::uint64_t master_seed, int replicates = 1) {
    if (templates.empty() || sample_sizes.empty() || depths.empty() || replicates < 1)
        throw data_error("paired_design: empty design axis");
    std::vector<std::pair<SimulationSpec, SimulationSpec>> out;
    out.reserve(templates.size() * sample_sizes.size() * depths.size() *
                static_cast<std::size_t>(replicates));
    std::uint64_t cell = 0;
    for (std::size_t t = 0; t < templates.size(); ++t) {
        for (int n : sample_sizes) {
            for (double depth : depths) {
                for (int r = 0; r < replicates; ++r, ++cell) {
                    SimulationSpec non_null = templates[t];
                    non_null.n_per_group = n;
                    non_null.depth_multiplier = depth;
                    non_null.seed = derive_seed(master_seed, cell, 1);
                    SimulationSpec null_spec = non_null;
                    std::fill(null_spec.effect.begin(), null_spec.effect.end(), 0.0);
                    null_spec.seed = derive_seed(master_seed, cell, 0);
                    out.emplace_back(std::move(null_spec), std::move(non_null));
                }
            }
        }
    }
    return out;
}

// Mann-Whitney AUC with ties counted half.
inline double auc(std::span<const ScoredDataset> scored) {
    std::vector<double> pos, neg;
    for (const auto& s : scored) (s.label ? pos : neg).push_back(s.score);
    if (pos.empty() || neg.empty())
        throw data_error("auc: need at least one positive and one negative label");
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    // sweep negatives in order, counting positives below/equal
    double wins = 0.0;
    std::size_t lo = 0, hi = 0;
    for (double nv : neg) {
        while (lo < pos.size() && pos[lo] < nv) ++lo;
        while (hi < pos.size() && pos[hi] <= nv) ++hi;
        wins += static_cast<double>(pos.size() - hi) + 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace msdiff
