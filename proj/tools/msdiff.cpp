// msdiff command-line driver: batch differential-intensity analysis of
// binned count data.
//
// Subcommands:
//   analyze   per-region log likelihood-ratio statistics (+ effect curves)
//   null      permutation or control-vs-control null statistics
//   pvalues   join analyze output with a null file into p- and q-values
//   simulate  synthetic design grid scored by AUC
//   effects   effect curves for named regions
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msdiff/io.hpp"
#include "msdiff/pipeline.hpp"
#include "msdiff/simulate.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool no_ti = false;
    bool no_total = false;
    std::optional<double> z;
    int rebin = 1;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "analysis configuration JSON");
    cmd->add_option("--seed", f.seed, "random seed");
    cmd->add_option("--threads", f.threads, "worker pool width");
    cmd->add_flag("--no-ti", f.no_ti, "disable translation-invariant averaging");
    cmd->add_flag("--no-total", f.no_total, "exclude the total-intensity contribution");
    cmd->add_option("--z", f.z, "significance threshold in posterior sds");
    cmd->add_option("--rebin", f.rebin, "sum adjacent groups of this many bins")
        ->check(CLI::PositiveNumber);
}

msdiff::AnalysisConfig make_config(const CommonFlags& f) {
    msdiff::AnalysisConfig config;
    if (!f.config_path.empty()) config = msdiff::load_config(f.config_path);
    if (f.seed) config.rng_seed = *f.seed;
    if (f.threads) config.threads = *f.threads;
    if (f.no_ti) config.ti_enabled = false;
    if (f.no_total) config.include_total = false;
    if (f.z) config.z_threshold = *f.z;
    config.check();
    return config;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw msdiff::data_error("cannot open output file '" + path + "'");
    return out;
}

void report_region_errors(const msdiff::BatchOutcome& outcome,
                          const msdiff::RegionBatch& batch) {
    for (std::size_t r = 0; r < outcome.results.size(); ++r)
        if (!outcome.results[r])
            std::cerr << "warning: region '" << batch.regions[r].region_id
                      << "' skipped: " << outcome.errors[r] << '\n';
}

int run_analyze(const std::string& counts_path, const CommonFlags& flags,
                const std::string& out_path, const std::string& effects_path,
                const std::string& external_path) {
    auto config = make_config(flags);
    auto batch = msdiff::read_counts_tsv(counts_path, flags.rebin);
    std::map<std::string, msdiff::TotalEffectEstimate> external;
    if (!external_path.empty()) {
        std::vector<std::string> ids;
        for (const auto& r : batch.regions) ids.push_back(r.region_id);
        external = msdiff::read_external_totals(external_path, ids);
        config.total_model = msdiff::TotalModel::external;
    } else if (config.total_model == msdiff::TotalModel::external) {
        throw msdiff::data_error("total_model 'external' requires --external-total");
    }
    auto outcome = msdiff::analyze_batch(batch, config,
                                         external.empty() ? nullptr : &external);
    report_region_errors(outcome, batch);
    if (out_path.empty()) {
        msdiff::write_results_tsv(std::cout, outcome);
    } else {
        auto out = open_output(out_path);
        msdiff::write_results_tsv(out, outcome);
    }
    if (!effects_path.empty()) {
        nlohmann::json doc;
        doc["regions"] = nlohmann::json::array();
        for (const auto& res : outcome.results)
            if (res) doc["regions"].push_back(msdiff::region_to_json(*res));
        auto out = open_output(effects_path);
        out << doc.dump(2) << '\n';
    }
    return 0;
}

int run_null(const std::string& counts_path, const CommonFlags& flags,
             int permutations, const std::string& out_path) {
    auto config = make_config(flags);
    config.compute_effects = false;
    auto batch = msdiff::read_counts_tsv(counts_path, flags.rebin);
    msdiff::NullReference ref;
    if (permutations == 0) {
        // control vs control: the observed statistics are the null draws
        auto outcome = msdiff::analyze_batch(batch, config);
        report_region_errors(outcome, batch);
        ref.source = msdiff::NullSource::control_vs_control;
        for (const auto& res : outcome.results)
            if (res) ref.statistics.push_back(res->log_lambda);
    } else {
        config.n_permutations = permutations;
        ref = msdiff::permutation_null_batch(batch, config);
        if (ref.exhausted)
            std::cerr << "warning: fewer distinct label assignments than requested "
                         "permutations; the null holds every distinct relabeling\n";
    }
    if (out_path.empty()) {
        msdiff::write_null_file(std::cout, ref);
    } else {
        auto out = open_output(out_path);
        msdiff::write_null_file(out, ref);
    }
    return 0;
}

int run_pvalues(const std::string& results_path, const std::string& null_path,
                const std::string& out_path, double pi0_lambda, bool bh) {
    std::ifstream in(results_path);
    if (!in) throw msdiff::data_error("cannot open results file '" + results_path + "'");
    std::vector<std::string> ids;
    std::vector<double> stats;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (line_no == 1 && line.rfind("region_id\t", 0) == 0) continue;
        auto fields = msdiff::io_detail::split(line, '\t');
        if (fields.size() < 2)
            throw msdiff::data_error("line " + std::to_string(line_no) +
                                     ": expected region_id<TAB>log_lambda");
        ids.push_back(fields[0]);
        stats.push_back(msdiff::io_detail::parse_real(fields[1], line_no, "log_lambda"));
    }
    if (ids.empty()) throw msdiff::data_error("results file has no rows");

    const auto null_ref = msdiff::read_null_file(null_path);
    std::vector<double> pvals(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        pvals[i] = msdiff::empirical_pvalue(stats[i], null_ref);
    const auto qvals = msdiff::qvalues(pvals, pi0_lambda,
                                       bh ? std::optional<double>(1.0) : std::nullopt);
    std::vector<msdiff::RegionTestResult> results(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        results[i] = {stats[i], pvals[i], qvals[i], null_ref.statistics.size()};

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file = open_output(out_path);
        out = &file;
    }
    *out << "region_id\tlog_lambda\tp_value\tq_value\n";
    for (std::size_t i = 0; i < ids.size(); ++i)
        *out << ids[i] << '\t' << msdiff::format_g17(results[i].log_lambda) << '\t'
             << msdiff::format_g17(results[i].p_value) << '\t'
             << msdiff::format_g17(results[i].q_value) << '\n';
    return 0;
}

struct GridSpec {
    std::vector<msdiff::SimulationSpec> templates;
    std::vector<int> sample_sizes;
    std::vector<double> depths;
    int replicates = 1;
    double dispersion = 0.1;
    std::uint64_t seed = 0;
};

GridSpec load_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw msdiff::data_error("cannot open grid file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw msdiff::data_error("grid '" + path + "': " + e.what());
    }
    GridSpec g;
    g.seed = j.value("seed", 0);
    g.dispersion = j.value("dispersion", 0.1);
    g.replicates = j.value("replicates", 1);
    g.sample_sizes = j.value("sample_sizes", std::vector<int>{});
    g.depths = j.value("depth_multipliers", std::vector<double>{});
    if (!j.contains("templates")) throw msdiff::data_error("grid: missing templates");
    for (const auto& t : j.at("templates")) {
        msdiff::SimulationSpec spec;
        spec.name = t.value("name", "template" + std::to_string(g.templates.size()));
        spec.base_intensity = t.at("base_intensity").get<std::vector<double>>();
        spec.effect = t.at("effect").get<std::vector<double>>();
        spec.dispersion = g.dispersion;
        g.templates.push_back(std::move(spec));
    }
    if (g.templates.empty() || g.sample_sizes.empty() || g.depths.empty())
        throw msdiff::data_error("grid: templates, sample_sizes and depth_multipliers "
                                 "must be non-empty");
    return g;
}

int run_simulate(const std::string& grid_path, const CommonFlags& flags,
                 const std::string& out_path, const std::string& scores_path,
                 const std::vector<std::string>& external_scores) {
    auto config = make_config(flags);
    config.compute_effects = false;
    auto grid = load_grid(grid_path);
    if (flags.seed) grid.seed = *flags.seed;

    const auto pairs = msdiff::paired_design(grid.templates, grid.sample_sizes,
                                             grid.depths, grid.seed, grid.replicates);
    struct Dataset {
        std::string id;
        std::string cell;
        bool label = false;
        double score = 0.0;
        const msdiff::SimulationSpec* spec = nullptr;
    };
    std::vector<Dataset> datasets;
    for (const auto& [null_spec, alt_spec] : pairs) {
        for (const msdiff::SimulationSpec* spec : {&null_spec, &alt_spec}) {
            Dataset d;
            d.cell = "n=" + std::to_string(2 * spec->n_per_group) +
                     ",depth=" + msdiff::format_g17(spec->depth_multiplier);
            d.id = spec->name + "/" + d.cell + "/seed=" + std::to_string(spec->seed) +
                   (spec->is_null() ? "/null" : "/alt");
            d.label = !spec->is_null();
            d.spec = spec;
            datasets.push_back(std::move(d));
        }
    }

    // score = log Lambda of the fitted pipeline on each simulated dataset
    std::vector<std::pair<msdiff::SimulationSpec, int>> work;
    for (std::size_t i = 0; i < datasets.size(); ++i)
        work.emplace_back(*datasets[i].spec, static_cast<int>(i));
    msdiff::parallel_for(work.size(), config.threads, [&](std::size_t i) {
        auto [counts, cov] = msdiff::simulate_dataset(work[i].first);
        datasets[work[i].second].score =
            msdiff::run_region(counts, cov, config).log_lambda;
    });

    std::map<std::string, std::vector<msdiff::ScoredDataset>> by_cell;
    for (const auto& d : datasets) by_cell[d.cell].push_back({d.score, d.label});

    std::map<std::string, std::map<std::string, std::vector<msdiff::ScoredDataset>>> extra;
    for (const auto& entry : external_scores) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos)
            throw msdiff::data_error("--external-scores expects NAME=FILE");
        const std::string name = entry.substr(0, eq);
        std::ifstream sin(entry.substr(eq + 1));
        if (!sin) throw msdiff::data_error("cannot open scores file for '" + name + "'");
        std::map<std::string, double> score_map;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(sin, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            auto fields = msdiff::io_detail::split(line, '\t');
            if (fields.size() != 2)
                throw msdiff::data_error("external scores line " + std::to_string(line_no) +
                                         ": expected dataset_id<TAB>score");
            score_map[fields[0]] =
                msdiff::io_detail::parse_real(fields[1], line_no, "score");
        }
        for (const auto& d : datasets) {
            const auto it = score_map.find(d.id);
            if (it == score_map.end())
                throw msdiff::data_error("external scores for '" + name +
                                         "' missing dataset " + d.id);
            extra[name][d.cell].push_back({it->second, d.label});
        }
    }

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file = open_output(out_path);
        out = &file;
    }
    *out << "cell\tmethod\tauc\n";
    for (const auto& [cell, scored] : by_cell)
        *out << cell << "\tmsdiff\t" << msdiff::format_g17(msdiff::auc(scored)) << '\n';
    for (const auto& [name, cells] : extra)
        for (const auto& [cell, scored] : cells)
            *out << cell << '\t' << name << '\t'
                 << msdiff::format_g17(msdiff::auc(scored)) << '\n';

    if (!scores_path.empty()) {
        auto sout = open_output(scores_path);
        sout << "dataset_id\tlabel\tscore\n";
        for (const auto& d : datasets)
            sout << d.id << '\t' << (d.label ? 1 : 0) << '\t'
                 << msdiff::format_g17(d.score) << '\n';
    }
    return 0;
}

int run_effects(const std::string& counts_path, const CommonFlags& flags,
                const std::vector<std::string>& region_ids, const std::string& out_path,
                const std::string& json_path) {
    auto config = make_config(flags);
    config.compute_effects = true;
    auto batch = msdiff::read_counts_tsv(counts_path, flags.rebin);
    nlohmann::json doc;
    doc["regions"] = nlohmann::json::array();
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file = open_output(out_path);
        out = &file;
    }
    for (const auto& id : region_ids) {
        const msdiff::CountsMatrix* region = nullptr;
        for (const auto& r : batch.regions)
            if (r.region_id == id) region = &r;
        if (!region) throw msdiff::data_error("region '" + id + "' not in counts file");
        const auto res = msdiff::run_region(*region, batch.covariate, config);
        *out << "# region " << id << "\n";
        msdiff::write_curve_tsv(*out, res);
        doc["regions"].push_back(msdiff::region_to_json(res));
    }
    if (!json_path.empty()) {
        auto jout = open_output(json_path);
        jout << doc.dump(2) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-scale differential intensity analysis of binned count data"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string counts_path, out_path, effects_path, external_path;
    std::string results_path, null_path, grid_path, scores_path, json_path;
    std::vector<std::string> region_ids, external_scores;
    int permutations = 99;
    double pi0_lambda = 0.5;
    bool bh = false;

    auto* analyze = app.add_subcommand("analyze", "per-region test statistics");
    analyze->add_option("--counts", counts_path, "counts TSV")->required();
    analyze->add_option("--out", out_path, "results TSV (default stdout)");
    analyze->add_option("--effects-out", effects_path, "effect-curve JSON");
    analyze->add_option("--external-total", external_path,
                        "external overall-expression statistics TSV");
    add_common_flags(analyze, flags);

    auto* null_cmd = app.add_subcommand("null", "null statistic generation");
    null_cmd->add_option("--counts", counts_path, "counts TSV")->required();
    null_cmd->add_option("--permutations", permutations,
                         "label permutations per region (0 = control vs control)");
    null_cmd->add_option("--out", out_path, "null statistics file (default stdout)");
    add_common_flags(null_cmd, flags);

    auto* pv = app.add_subcommand("pvalues", "empirical p- and q-values");
    pv->add_option("--results", results_path, "analyze output TSV")->required();
    pv->add_option("--null", null_path, "null statistics file")->required();
    pv->add_option("--out", out_path, "output TSV (default stdout)");
    pv->add_option("--pi0-lambda", pi0_lambda, "threshold for the pi0 estimate");
    pv->add_flag("--bh", bh, "force pi0 = 1 (Benjamini-Hochberg)");

    auto* sim = app.add_subcommand("simulate", "design-grid simulation scored by AUC");
    sim->add_option("--grid", grid_path, "design grid JSON")->required();
    sim->add_option("--out", out_path, "AUC table (default stdout)");
    sim->add_option("--scores-out", scores_path, "per-dataset score TSV");
    sim->add_option("--external-scores", external_scores,
                    "NAME=FILE with externally computed per-dataset scores");
    add_common_flags(sim, flags);

    auto* eff = app.add_subcommand("effects", "effect curves for named regions");
    eff->add_option("--counts", counts_path, "counts TSV")->required();
    eff->add_option("--region", region_ids, "region id (repeatable)")->required();
    eff->add_option("--out", out_path, "curve TSV (default stdout)");
    eff->add_option("--json", json_path, "curve JSON");
    add_common_flags(eff, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(analyze))
            return run_analyze(counts_path, flags, out_path, effects_path, external_path);
        if (app.got_subcommand(null_cmd))
            return run_null(counts_path, flags, permutations, out_path);
        if (app.got_subcommand(pv))
            return run_pvalues(results_path, null_path, out_path, pi0_lambda, bh);
        if (app.got_subcommand(sim))
            return run_simulate(grid_path, flags, out_path, scores_path, external_scores);
        if (app.got_subcommand(eff))
            return run_effects(counts_path, flags, region_ids, out_path, json_path);
    } catch (const msdiff::data_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const msdiff::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 1;
}
