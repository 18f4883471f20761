#pragma once

// Shared data model: binned count matrices, sample covariates, and the
// analysis configuration. All types are immutable after construction and
// safe to share across concurrent region analyses.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace msdiff {

// Input/schema problems: malformed files, inconsistent dimensions, invalid
// parameter values supplied by the caller.
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failures that are not the caller's fault (non-finite results,
// optimizer breakdowns that cannot be recovered).
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Per-sample binned read counts over one region, row-major n x bins.
struct CountsMatrix {
    std::vector<std::int64_t> counts;
    std::size_t n_samples = 0;
    std::size_t bins = 0;
    std::int64_t bin_width = 1;
    std::string region_id;
    // bins the region had before zero-padding to a power of two
    std::size_t original_bins = 0;

    CountsMatrix() = default;
    CountsMatrix(std::size_t n, std::size_t b, std::string id = {},
                 std::int64_t width = 1)
        : counts(n * b, 0), n_samples(n), bins(b), bin_width(width),
          region_id(std::move(id)), original_bins(b) {}

    std::int64_t& at(std::size_t i, std::size_t b) { return counts[i * bins + b]; }
    std::int64_t at(std::size_t i, std::size_t b) const { return counts[i * bins + b]; }
    std::span<const std::int64_t> row(std::size_t i) const {
        return {counts.data() + i * bins, bins};
    }
    std::int64_t row_total(std::size_t i) const {
        std::int64_t t = 0;
        for (std::int64_t c : row(i)) t += c;
        return t;
    }
};

// Sample-level covariate (binary group membership is the primary case, but
// any real-valued contrast works) plus sequencing depths.
struct Covariate {
    std::vector<double> values;
    std::vector<double> library_sizes;

    std::size_t size() const { return values.size(); }
};

inline bool is_power_of_two(std::size_t b) { return b >= 2 && (b & (b - 1)) == 0; }

inline int log2_exact(std::size_t b) {
    int j = 0;
    while ((std::size_t{1} << j) < b) ++j;
    return j;
}

// Checks all invariants of a (counts, covariate) pair, returning it
// unchanged. Idempotent by construction.
inline std::pair<CountsMatrix, Covariate> validate(CountsMatrix counts, Covariate x) {
    if (x.values.size() != counts.n_samples)
        throw data_error("covariate length " + std::to_string(x.values.size()) +
                         " does not match sample count " + std::to_string(counts.n_samples));
    if (x.library_sizes.size() != counts.n_samples)
        throw data_error("library_sizes length does not match sample count");
    if (!is_power_of_two(counts.bins))
        throw data_error("region '" + counts.region_id + "': B=" +
                         std::to_string(counts.bins) + " is not a power of two");
    if (counts.counts.size() != counts.n_samples * counts.bins)
        throw data_error("counts storage size does not match n x B");
    for (std::int64_t c : counts.counts)
        if (c < 0) throw data_error("negative count in region '" + counts.region_id + "'");
    bool constant = true;
    for (double v : x.values) {
        if (!std::isfinite(v)) throw data_error("non-finite covariate value");
        if (v != x.values.front()) constant = false;
    }
    if (constant) throw data_error("constant covariate: no contrast to estimate");
    for (double L : x.library_sizes)
        if (!(L > 0.0) || !std::isfinite(L))
            throw data_error("library sizes must be strictly positive");
    return {std::move(counts), std::move(x)};
}

// Endpoints rule for the mixture-prior standard deviation grid; see
// ebshrink.hpp. Geometric grid with the given ratio from
// (min finite se)/se_divisor up to spread_multiplier * sqrt(max(est^2-se^2)),
// the upper endpoint floored at floor_multiplier times the lower one.
struct SigmaGridPolicy {
    double se_divisor = 10.0;
    double spread_multiplier = 2.0;
    double floor_multiplier = 8.0;
    double ratio = 1.4142135623730951;
};

// Fitting knobs for the per-node binomial mixed model (glm.hpp).
struct GlmmOptions {
    int max_iter = 100;
    double convergence_tol = 1e-10;
    std::int64_t min_total_trials = 1;
    bool random_effect = true;
    int laplace_quadrature_points = 1;
};

enum class TotalModel { poisson_regression, binomial_regression, external, none };

struct AnalysisConfig {
    SigmaGridPolicy sigma_grid;
    double em_tolerance = 1e-7;
    int em_max_iter = 500;
    // pseudo-observations favoring the point mass, per real observation
    // (0 = plain ML); breaks the tie between the spike and near-zero slabs
    double em_pi0_penalty = 0.005;
    GlmmOptions glmm;
    bool ti_enabled = true;
    // analyze every ti_stride-th circular shift; 1 = all B shifts
    int ti_stride = 1;
    std::uint64_t rng_seed = 0;
    int n_permutations = 99;
    bool include_total = true;
    TotalModel total_model = TotalModel::poisson_regression;
    double z_threshold = 2.0;
    // threshold lambda* in the pi0 estimator of the q-value procedure
    double pi0_lambda = 0.5;
    int threads = 1;
    bool compute_effects = true;

    void check() const {
        if (!(em_tolerance > 0.0)) throw data_error("em_tolerance must be > 0");
        if (!(em_pi0_penalty >= 0.0)) throw data_error("em_pi0_penalty must be >= 0");
        if (em_max_iter < 1) throw data_error("em_max_iter must be >= 1");
        if (n_permutations < 0) throw data_error("n_permutations must be >= 0");
        if (!(glmm.convergence_tol > 0.0)) throw data_error("convergence_tol must be > 0");
        if (glmm.laplace_quadrature_points < 1)
            throw data_error("laplace_quadrature_points must be >= 1");
        if (ti_stride < 1) throw data_error("ti_stride must be >= 1");
        if (!(z_threshold > 0.0)) throw data_error("z_threshold must be > 0");
    }
};

}  // namespace msdiff
