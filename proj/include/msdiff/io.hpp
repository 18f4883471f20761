#pragma once

// Counts ingestion, result serialization, configuration JSON, and batch
// orchestration across regions.
//
// Counts TSV layout:
//   region_id<TAB>sample_1<TAB>...<TAB>sample_n     (header: sample names)
//   #X: x_1 ... x_n                                 (metadata comment lines)
//   #libsize: L_1 ... L_n
//   region<TAB>bin_index<TAB>c_1<TAB>...<TAB>c_n    (one line per region/bin)
// Bin indices are 1-based; bins absent from the file are zero. Regions whose
// bin count is not a power of two are right-padded with zero bins and the
// original width recorded.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msdiff/parallel.hpp"
#include "msdiff/pipeline.hpp"
#include "msdiff/rng.hpp"
#include "msdiff/types.hpp"

namespace msdiff {

struct RegionBatch {
    std::vector<CountsMatrix> regions;
    Covariate covariate;
};

namespace io_detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

inline std::int64_t parse_int(const std::string& tok, std::size_t line_no,
                              const char* what) {
    std::int64_t v = 0;
    const char* begin = tok.data();
    const char* end = begin + tok.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw data_error("line " + std::to_string(line_no) + ": invalid " + what +
                         " '" + tok + "'");
    return v;
}

inline double parse_real(const std::string& tok, std::size_t line_no, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw data_error("line " + std::to_string(line_no) + ": invalid " + what +
                         " '" + tok + "'");
    }
}

inline std::size_t next_power_of_two(std::size_t b) {
    std::size_t p = 2;
    while (p < b) p <<= 1;
    return p;
}

}  // namespace io_detail

// Sum adjacent groups of k bins (the trailing group may be partial).
inline CountsMatrix rebin_counts(const CountsMatrix& counts, int k) {
    if (k < 1) throw data_error("rebin: factor must be >= 1");
    if (k == 1) return counts;
    const std::size_t out_bins = (counts.bins + k - 1) / k;
    CountsMatrix out(counts.n_samples, out_bins, counts.region_id,
                     counts.bin_width * k);
    for (std::size_t i = 0; i < counts.n_samples; ++i)
        for (std::size_t b = 0; b < counts.bins; ++b)
            out.at(i, b / k) += counts.at(i, b);
    out.original_bins = out_bins;
    return out;
}

inline CountsMatrix pad_to_power_of_two(CountsMatrix counts) {
    const std::size_t padded = io_detail::next_power_of_two(std::max<std::size_t>(counts.bins, 2));
    if (padded == counts.bins) return counts;
    CountsMatrix out(counts.n_samples, padded, counts.region_id, counts.bin_width);
    out.original_bins = counts.bins;
    for (std::size_t i = 0; i < counts.n_samples; ++i)
        for (std::size_t b = 0; b < counts.bins; ++b) out.at(i, b) = counts.at(i, b);
    return out;
}

inline RegionBatch read_counts_tsv(const std::string& path, int rebin = 1) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open counts file '" + path + "'");

    std::string line;
    std::size_t line_no = 0;
    std::optional<std::vector<double>> xs, libs;
    std::size_t n = 0;
    bool have_header = false;

    struct RawRegion {
        std::vector<std::vector<std::int64_t>> bins_by_sample;  // [sample][bin]
        std::map<std::size_t, std::size_t> seen_bins;           // bin -> line
        std::size_t max_bin = 0;
    };
    std::vector<std::string> region_order;
    std::map<std::string, RawRegion> raw;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto parse_meta = [&](const char* tag) -> std::optional<std::vector<double>> {
                const std::string prefix = tag;
                if (line.rfind(prefix, 0) != 0) return std::nullopt;
                std::vector<double> vals;
                for (const auto& tok : io_detail::split_ws(line.substr(prefix.size())))
                    vals.push_back(io_detail::parse_real(tok, line_no, "metadata value"));
                return vals;
            };
            if (auto v = parse_meta("#X:")) xs = std::move(v);
            else if (auto w = parse_meta("#libsize:")) libs = std::move(w);
            continue;
        }
        auto fields = io_detail::split(line, '\t');
        if (!have_header) {
            if (fields.size() < 2)
                throw data_error("line " + std::to_string(line_no) +
                                 ": header must list region_id and sample names");
            n = fields.size() - 1;
            have_header = true;
            continue;
        }
        if (fields.size() != n + 2)
            throw data_error("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(n + 2) + " columns, got " +
                             std::to_string(fields.size()));
        const std::string& id = fields[0];
        const std::int64_t bin = io_detail::parse_int(fields[1], line_no, "bin index");
        if (bin < 1)
            throw data_error("line " + std::to_string(line_no) + ": bin index must be >= 1");
        auto [it, inserted] = raw.try_emplace(id);
        if (inserted) {
            region_order.push_back(id);
            it->second.bins_by_sample.resize(n);
        }
        RawRegion& r = it->second;
        const std::size_t b = static_cast<std::size_t>(bin - 1);
        if (auto dup = r.seen_bins.find(b); dup != r.seen_bins.end())
            throw data_error("line " + std::to_string(line_no) + ": duplicate bin " +
                             std::to_string(bin) + " for region '" + id + "'");
        r.seen_bins.emplace(b, line_no);
        r.max_bin = std::max(r.max_bin, b + 1);
        for (std::size_t i = 0; i < n; ++i) {
            const std::int64_t c = io_detail::parse_int(fields[2 + i], line_no, "count");
            if (c < 0)
                throw data_error("line " + std::to_string(line_no) + ": negative count");
            auto& row = r.bins_by_sample[i];
            if (row.size() < b + 1) row.resize(b + 1, 0);
            row[b] = c;
        }
    }
    if (!have_header) throw data_error("counts file '" + path + "' has no header");
    if (!xs) throw data_error("missing metadata: no #X: line in '" + path + "'");
    if (!libs) throw data_error("missing metadata: no #libsize: line in '" + path + "'");
    if (xs->size() != n || libs->size() != n)
        throw data_error("metadata length does not match the " + std::to_string(n) +
                         " samples in the header");
    if (raw.empty()) throw data_error("counts file '" + path + "' has no data rows");

    RegionBatch batch;
    batch.covariate.values = *xs;
    batch.covariate.library_sizes = *libs;
    for (const auto& id : region_order) {
        const RawRegion& r = raw.at(id);
        CountsMatrix m(n, r.max_bin, id);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t b = 0; b < r.bins_by_sample[i].size(); ++b)
                m.at(i, b) = r.bins_by_sample[i][b];
        if (rebin > 1) m = rebin_counts(m, rebin);
        batch.regions.push_back(pad_to_power_of_two(std::move(m)));
    }
    return batch;
}

// External overall-expression statistics: either
//   region_id<TAB>log_fc<TAB>se<TAB>loglik_ratio   (keyed), or
//   log_fc<TAB>se<TAB>loglik_ratio                 (positional by batch order)
inline std::map<std::string, TotalEffectEstimate> read_external_totals(
    const std::string& path, std::span<const std::string> region_ids) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open external totals file '" + path + "'");
    std::map<std::string, TotalEffectEstimate> out;
    std::string line;
    std::size_t line_no = 0, row = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto fields = io_detail::split(line, '\t');
        std::string id;
        std::size_t first = 0;
        if (fields.size() == 4) {
            id = fields[0];
            first = 1;
        } else if (fields.size() == 3) {
            if (row >= region_ids.size())
                throw data_error("line " + std::to_string(line_no) +
                                 ": more totals rows than regions");
            id = region_ids[row];
        } else {
            throw data_error("line " + std::to_string(line_no) +
                             ": expected 3 or 4 columns in totals file");
        }
        const double fc = io_detail::parse_real(fields[first], line_no, "log_fc");
        const double se = io_detail::parse_real(fields[first + 1], line_no, "se");
        const double lr = io_detail::parse_real(fields[first + 2], line_no, "loglik_ratio");
        out[id] = ingest_external_total(fc, se, lr);
        ++row;
    }
    return out;
}

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline NullReference read_null_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open null file '" + path + "'");
    NullReference ref;
    ref.source = NullSource::control_vs_control;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        ref.statistics.push_back(io_detail::parse_real(line, line_no, "null statistic"));
    }
    if (ref.statistics.empty()) throw data_error("empty null reference '" + path + "'");
    return ref;
}

inline void write_null_file(std::ostream& out, const NullReference& ref) {
    for (double v : ref.statistics) out << format_g17(v) << '\n';
}

// Batch orchestration: per-region failures are recorded, never fatal.
struct BatchOutcome {
    std::vector<std::optional<RegionAnalysis>> results;  // in input order
    std::vector<std::string> errors;                     // aligned with results
};

inline BatchOutcome analyze_batch(
    const RegionBatch& batch, const AnalysisConfig& config,
    const std::map<std::string, TotalEffectEstimate>* external_totals = nullptr) {
    BatchOutcome out;
    out.results.resize(batch.regions.size());
    out.errors.resize(batch.regions.size());
    parallel_for(batch.regions.size(), config.threads, [&](std::size_t r) {
        try {
            const TotalEffectEstimate* ext = nullptr;
            if (external_totals) {
                const auto it = external_totals->find(batch.regions[r].region_id);
                if (it == external_totals->end())
                    throw data_error("no external total statistics for region '" +
                                     batch.regions[r].region_id + "'");
                ext = &it->second;
            }
            out.results[r] = run_region(batch.regions[r], batch.covariate, config, ext);
        } catch (const std::exception& e) {
            out.errors[r] = e.what();
        }
    });
    return out;
}

// Pooled permutation null across all regions of the batch, with per-region
// seeds derived from the configured seed.
inline NullReference permutation_null_batch(const RegionBatch& batch,
                                            const AnalysisConfig& config) {
    NullReference pooled;
    pooled.source = NullSource::permutation;
    std::vector<NullReference> parts(batch.regions.size());
    parallel_for(batch.regions.size(), config.threads, [&](std::size_t r) {
        parts[r] = permutation_null(batch.regions[r], batch.covariate, config,
                                    config.n_permutations,
                                    derive_seed(config.rng_seed, r));
    });
    for (auto& p : parts) {
        pooled.exhausted = pooled.exhausted || p.exhausted;
        pooled.statistics.insert(pooled.statistics.end(), p.statistics.begin(),
                                 p.statistics.end());
    }
    return pooled;
}

// --- configuration JSON ---

inline AnalysisConfig config_from_json(const nlohmann::json& j) {
    AnalysisConfig c;
    c.em_tolerance = j.value("em_tolerance", c.em_tolerance);
    c.em_max_iter = j.value("em_max_iter", c.em_max_iter);
    c.em_pi0_penalty = j.value("em_pi0_penalty", c.em_pi0_penalty);
    c.ti_enabled = j.value("ti_enabled", c.ti_enabled);
    c.ti_stride = j.value("ti_stride", c.ti_stride);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.n_permutations = j.value("n_permutations", c.n_permutations);
    c.include_total = j.value("include_total", c.include_total);
    c.z_threshold = j.value("z_threshold", c.z_threshold);
    c.pi0_lambda = j.value("pi0_lambda", c.pi0_lambda);
    c.threads = j.value("threads", c.threads);
    if (j.contains("total_model")) {
        const std::string m = j.at("total_model").get<std::string>();
        if (m == "poisson") c.total_model = TotalModel::poisson_regression;
        else if (m == "binomial") c.total_model = TotalModel::binomial_regression;
        else if (m == "external") c.total_model = TotalModel::external;
        else if (m == "none") c.total_model = TotalModel::none;
        else throw data_error("unknown total_model '" + m + "'");
    }
    if (j.contains("glmm")) {
        const auto& g = j.at("glmm");
        c.glmm.max_iter = g.value("max_iter", c.glmm.max_iter);
        c.glmm.convergence_tol = g.value("convergence_tol", c.glmm.convergence_tol);
        c.glmm.min_total_trials = g.value("min_total_trials", c.glmm.min_total_trials);
        c.glmm.random_effect = g.value("random_effect", c.glmm.random_effect);
        c.glmm.laplace_quadrature_points =
            g.value("laplace_quadrature_points", c.glmm.laplace_quadrature_points);
    }
    if (j.contains("sigma_grid")) {
        const auto& s = j.at("sigma_grid");
        c.sigma_grid.se_divisor = s.value("se_divisor", c.sigma_grid.se_divisor);
        c.sigma_grid.spread_multiplier =
            s.value("spread_multiplier", c.sigma_grid.spread_multiplier);
        c.sigma_grid.floor_multiplier =
            s.value("floor_multiplier", c.sigma_grid.floor_multiplier);
        c.sigma_grid.ratio = s.value("ratio", c.sigma_grid.ratio);
    }
    c.check();
    return c;
}

inline AnalysisConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("config '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

// --- result serialization ---

inline void write_results_tsv(std::ostream& out, const BatchOutcome& outcome) {
    out << "region_id\tlog_lambda\n";
    for (std::size_t r = 0; r < outcome.results.size(); ++r) {
        if (!outcome.results[r]) continue;
        out << outcome.results[r]->region_id << '\t'
            << format_g17(outcome.results[r]->log_lambda) << '\n';
    }
}

inline void write_curve_tsv(std::ostream& out, const RegionAnalysis& res) {
    std::vector<char> flag(res.curve.bins(), 0);
    for (const auto& iv : res.significant.intervals)
        for (std::size_t b = iv.start; b <= iv.end && b <= flag.size(); ++b)
            flag[b - 1] = 1;
    out << "bin\tmean\tsd\tsignificant\n";
    for (std::size_t b = 0; b < res.curve.bins(); ++b)
        out << (b + 1) << '\t' << format_g17(res.curve.mean[b]) << '\t'
            << format_g17(res.curve.sd[b]) << '\t' << int(flag[b]) << '\n';
}

inline nlohmann::json region_to_json(const RegionAnalysis& res) {
    nlohmann::json j;
    j["region_id"] = res.region_id;
    j["log_lambda"] = res.log_lambda;
    j["total"] = {{"log_fc", res.total.log_fc_hat},
                  {"se", std::isfinite(res.total.se_log_fc) ? res.total.se_log_fc : -1.0},
                  {"loglik_ratio", res.total.loglik_alt - res.total.loglik_null}};
    j["effect"] = {{"mean", res.curve.mean},
                   {"sd", res.curve.sd},
                   {"baseline_mean", res.curve.baseline_mean}};
    nlohmann::json ivs = nlohmann::json::array();
    for (const auto& iv : res.significant.intervals)
        ivs.push_back({{"start", iv.start},
                       {"end", iv.end},
                       {"direction", iv.direction > 0 ? "+" : "-"}});
    j["significant_intervals"] = ivs;
    j["z_threshold"] = res.significant.z_threshold;
    return j;
}

}  // namespace msdiff
