#pragma once

// Multi-scale reparameterization of a length-B intensity vector into B-1
// log-ratio parameters plus the total intensity, the matching count-space
// half-sum table, the exact likelihood factorization, and circular-shift
// machinery for translation-invariant analysis.
//
// Nodes are indexed (scale s in [1,J], location l in [1,2^(s-1)]) and stored
// scale-major, location-minor: flat index (s,l) = 2^(s-1) - 1 + (l-1).

#include <cstdint>
#include <span>
#include <vector>

#include "msdiff/numerics.hpp"
#include "msdiff/types.hpp"

namespace msdiff {

struct NodeIndex {
    int scale = 1;
    std::int64_t location = 1;
};

inline std::size_t node_flat_index(int scale, std::int64_t location) {
    return (std::size_t{1} << (scale - 1)) - 1 + static_cast<std::size_t>(location - 1);
}

inline NodeIndex node_from_flat(std::size_t idx) {
    int s = 1;
    while ((std::size_t{1} << s) - 1 <= idx) ++s;
    return {s, static_cast<std::int64_t>(idx - ((std::size_t{1} << (s - 1)) - 1) + 1)};
}

// Count-space half sums (y-, y+) for every node, plus the region total.
struct MultiscaleTable {
    std::size_t bins = 0;
    int levels = 0;  // J = log2(bins)
    std::vector<std::int64_t> half_minus;  // length B-1, scale-major
    std::vector<std::int64_t> half_plus;
    std::int64_t total = 0;

    std::size_t node_count() const { return bins - 1; }
    std::int64_t trials(std::size_t idx) const { return half_minus[idx] + half_plus[idx]; }
};

// The (alpha, lambda_tot) coordinates of a positive intensity vector.
struct IntensityParams {
    std::size_t bins = 0;
    int levels = 0;
    std::vector<double> alpha;  // length B-1, scale-major
    double lambda_tot = 0.0;
};

namespace detail {

template <typename T>
void fill_halfsum_tree(std::span<const T> y, std::vector<T>& minus,
                       std::vector<T>& plus, T& total, int levels) {
    const std::size_t bins = y.size();
    minus.assign(bins - 1, T{});
    plus.assign(bins - 1, T{});
    std::vector<T> cur(y.begin(), y.end());
    for (int s = levels; s >= 1; --s) {
        const std::size_t nodes = std::size_t{1} << (s - 1);
        std::vector<T> next(nodes);
        for (std::size_t l = 0; l < nodes; ++l) {
            const T a = cur[2 * l];
            const T b = cur[2 * l + 1];
            const std::size_t idx = node_flat_index(s, static_cast<std::int64_t>(l + 1));
            minus[idx] = a;
            plus[idx] = b;
            next[l] = a + b;
        }
        cur.swap(next);
    }
    total = cur[0];
}

}  // namespace detail

// Half-sum table of one sample's counts. Shares the dyadic layout with the
// intensity-space transform so the factorization identity holds node by node.
inline MultiscaleTable forward_counts(std::span<const std::int64_t> y) {
    if (!is_power_of_two(y.size()))
        throw data_error("forward_counts: length must be a power of two >= 2");
    for (std::int64_t c : y)
        if (c < 0) throw data_error("forward_counts: negative count");
    MultiscaleTable t;
    t.bins = y.size();
    t.levels = log2_exact(t.bins);
    detail::fill_halfsum_tree(y, t.half_minus, t.half_plus, t.total, t.levels);
    return t;
}

inline MultiscaleTable forward_counts(const std::vector<std::int64_t>& y) {
    return forward_counts(std::span<const std::int64_t>(y));
}

// alpha_sl = log(lambda-_sl / lambda+_sl), lambda_tot = sum of lambda.
inline IntensityParams multiscale_from_intensity(std::span<const double> lambda) {
    if (!is_power_of_two(lambda.size()))
        throw data_error("multiscale_from_intensity: length must be a power of two >= 2");
    for (double v : lambda)
        if (!(v > 0.0)) throw data_error("multiscale_from_intensity: lambda must be > 0");
    IntensityParams p;
    p.bins = lambda.size();
    p.levels = log2_exact(p.bins);
    std::vector<double> minus, plus;
    double total = 0.0;
    detail::fill_halfsum_tree(lambda, minus, plus, total, p.levels);
    p.lambda_tot = total;
    p.alpha.resize(p.bins - 1);
    for (std::size_t i = 0; i < p.alpha.size(); ++i)
        p.alpha[i] = std::log(minus[i]) - std::log(plus[i]);
    return p;
}

inline IntensityParams multiscale_from_intensity(const std::vector<double>& lambda) {
    return multiscale_from_intensity(std::span<const double>(lambda));
}

// Inverse map: recursively split lambda_tot down the tree with left share
// logistic(alpha). Exact inverse of multiscale_from_intensity.
inline std::vector<double> intensity_from_multiscale(const IntensityParams& p) {
    if (!is_power_of_two(p.bins) || p.alpha.size() != p.bins - 1)
        throw data_error("intensity_from_multiscale: inconsistent dimensions");
    if (!(p.lambda_tot > 0.0))
        throw data_error("intensity_from_multiscale: lambda_tot must be > 0");
    std::vector<double> mass{p.lambda_tot};
    for (int s = 1; s <= p.levels; ++s) {
        const std::size_t nodes = std::size_t{1} << (s - 1);
        std::vector<double> next(2 * nodes);
        for (std::size_t l = 0; l < nodes; ++l) {
            const double a = p.alpha[node_flat_index(s, static_cast<std::int64_t>(l + 1))];
            // both shares via logistic directly; 1 - logistic(a) would lose
            // precision on lopsided nodes
            next[2 * l] = mass[l] * logistic(a);
            next[2 * l + 1] = mass[l] * logistic(-a);
        }
        mass.swap(next);
    }
    return mass;
}

// Factorized log-likelihood: Pois(total; lambda_tot) x Bin(y-; y-+y+, p_sl)
// over all nodes. Equals the sum of independent Poisson log-pmfs of the
// per-bin counts under lambda = f_ms(params).
inline double factorized_loglik(const MultiscaleTable& t, const IntensityParams& p) {
    if (t.bins != p.bins)
        throw data_error("factorized_loglik: table and params disagree on B");
    double ll = log_poisson_pmf(static_cast<double>(t.total), p.lambda_tot);
    for (std::size_t i = 0; i < t.node_count(); ++i) {
        ll += log_binomial_pmf_logit(static_cast<double>(t.half_minus[i]),
                                     static_cast<double>(t.trials(i)), p.alpha[i]);
    }
    return ll;
}

// output[b] = input[(b+k) mod B]
template <typename T>
std::vector<T> circular_shift(std::span<const T> y, std::size_t k) {
    if (k >= y.size()) throw data_error("circular_shift: shift out of range");
    std::vector<T> out(y.size());
    for (std::size_t b = 0; b < y.size(); ++b) out[b] = y[(b + k) % y.size()];
    return out;
}

template <typename T>
std::vector<T> circular_shift(const std::vector<T>& y, std::size_t k) {
    return circular_shift(std::span<const T>(y), k);
}

// Shared circular interval sums: one O(B) sliding-window pass per scale
// gives every half-sum any shifted tree can ask for, so building tables for
// all B shifts costs O(B*J) sum computations instead of O(B^2).
class TiSumPool {
  public:
    explicit TiSumPool(std::span<const std::int64_t> y) {
        if (!is_power_of_two(y.size()))
            throw data_error("TiSumPool: length must be a power of two >= 2");
        bins_ = y.size();
        levels_ = log2_exact(bins_);
        total_ = 0;
        for (std::int64_t c : y) total_ += c;
        half_.resize(levels_ + 1);
        // half_[s][o] = circular sum over [o, o + B/2^s) for s in [1, J];
        // half_[0] is unused.
        for (int s = 1; s <= levels_; ++s) {
            const std::size_t len = bins_ >> s;
            auto& row = half_[s];
            row.resize(bins_);
            std::int64_t w = 0;
            for (std::size_t b = 0; b < len; ++b) w += y[b];
            for (std::size_t o = 0; o < bins_; ++o) {
                row[o] = w;
                w -= y[o];
                w += y[(o + len) % bins_];
            }
        }
    }

    std::size_t bins() const { return bins_; }
    int levels() const { return levels_; }
    std::int64_t total() const { return total_; }

    // Sum over the circular interval of length bins/2^scale starting at o.
    std::int64_t half_sum(int scale, std::size_t offset) const {
        return half_[scale][offset];
    }

    // Table of the series shifted left by k: node (s,l) covers the circular
    // interval starting at ((l-1) * B/2^(s-1) + k) mod B.
    MultiscaleTable table_for_shift(std::size_t k) const {
        if (k >= bins_) throw data_error("table_for_shift: shift out of range");
        MultiscaleTable t;
        t.bins = bins_;
        t.levels = levels_;
        t.total = total_;
        t.half_minus.resize(bins_ - 1);
        t.half_plus.resize(bins_ - 1);
        for (int s = 1; s <= levels_; ++s) {
            const std::size_t nodes = std::size_t{1} << (s - 1);
            const std::size_t len = bins_ >> (s - 1);
            for (std::size_t l = 0; l < nodes; ++l) {
                const std::size_t o = (l * len + k) % bins_;
                const std::size_t idx = node_flat_index(s, static_cast<std::int64_t>(l + 1));
                t.half_minus[idx] = half_sum(s, o);
                t.half_plus[idx] = half_sum(s, (o + len / 2) % bins_);
            }
        }
        return t;
    }

  private:
    std::size_t bins_ = 0;
    int levels_ = 0;
    std::int64_t total_ = 0;
    std::vector<std::vector<std::int64_t>> half_;
};

// Tables for a set of circular shifts, keyed by shift, via the shared pool.
inline std::vector<std::pair<std::size_t, MultiscaleTable>>
ti_node_set(std::span<const std::int64_t> y, std::span<const std::size_t> shifts) {
    TiSumPool pool(y);
    std::vector<std::pair<std::size_t, MultiscaleTable>> out;
    out.reserve(shifts.size());
    for (std::size_t k : shifts) out.emplace_back(k, pool.table_for_shift(k));
    return out;
}

}  // namespace msdiff
