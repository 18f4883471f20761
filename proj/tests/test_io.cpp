#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <unistd.h>
#include <algorithm>
#include <random>
#include <fstream>
#include <sstream>

#include "msdiff/io.hpp"

using namespace msdiff;

namespace {

class TempDir {
  public:
    TempDir() {
        dir_ = std::filesystem::temp_directory_path() /
               ("msdiff_io_test_" + std::to_string(::getpid()));
        std::filesystem::create_directories(dir_);
    }
    ~TempDir() { std::filesystem::remove_all(dir_); }
    std::string file(const std::string& name, const std::string& content) const {
        const auto path = dir_ / name;
        std::ofstream out(path);
        out << content;
        return path.string();
    }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

  private:
    std::filesystem::path dir_;
};

const char* kToyCounts =
    "region_id\ts1\ts2\n"
    "#X: 0 1\n"
    "#libsize: 1000 2000\n"
    "rA\t1\t3\t0\n"
    "rA\t2\t2\t2\n"
    "rA\t3\t1\t4\n"
    "rA\t4\t0\t1\n";

}  // namespace

TEST(ReadCounts, SingleRegionFourBins) {
    TempDir tmp;
    const auto batch = read_counts_tsv(tmp.file("toy.tsv", kToyCounts));
    ASSERT_EQ(batch.regions.size(), 1u);
    const auto& m = batch.regions[0];
    EXPECT_EQ(m.region_id, "rA");
    EXPECT_EQ(m.n_samples, 2u);
    EXPECT_EQ(m.bins, 4u);
    EXPECT_EQ(m.original_bins, 4u);
    EXPECT_EQ(m.at(0, 0), 3);
    EXPECT_EQ(m.at(1, 2), 4);
    EXPECT_EQ(batch.covariate.values, (std::vector<double>{0, 1}));
    EXPECT_EQ(batch.covariate.library_sizes, (std::vector<double>{1000, 2000}));
}

TEST(ReadCounts, PadsToNextPowerOfTwo) {
    TempDir tmp;
    std::string content = "region_id\ts1\ts2\n#X: 0 1\n#libsize: 10 10\n";
    for (int b = 1; b <= 6; ++b)
        content += "rB\t" + std::to_string(b) + "\t1\t2\n";
    const auto batch = read_counts_tsv(tmp.file("six.tsv", content));
    const auto& m = batch.regions[0];
    EXPECT_EQ(m.bins, 8u);
    EXPECT_EQ(m.original_bins, 6u);
    EXPECT_EQ(m.at(0, 6), 0);
    EXPECT_EQ(m.at(1, 7), 0);
}

TEST(ReadCounts, NonIntegerCountNamesLine) {
    TempDir tmp;
    const std::string content =
        "region_id\ts1\ts2\n#X: 0 1\n#libsize: 10 10\n"
        "rC\t1\t1\t2\n"
        "rC\t2\t3.5\t2\n";
    try {
        read_counts_tsv(tmp.file("bad.tsv", content));
        FAIL() << "expected data_error";
    } catch (const data_error& e) {
        EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("3.5"), std::string::npos);
    }
}

TEST(ReadCounts, DuplicateBinRejected) {
    TempDir tmp;
    const std::string content =
        "region_id\ts1\ts2\n#X: 0 1\n#libsize: 10 10\n"
        "rD\t1\t1\t2\n"
        "rD\t1\t0\t0\n";
    EXPECT_THROW(read_counts_tsv(tmp.file("dup.tsv", content)), data_error);
}

TEST(ReadCounts, MissingMetadataRejected) {
    TempDir tmp;
    const std::string content = "region_id\ts1\ts2\nrE\t1\t1\t2\n";
    EXPECT_THROW(read_counts_tsv(tmp.file("nometa.tsv", content)), data_error);
    EXPECT_THROW(read_counts_tsv(tmp.path("does_not_exist.tsv")), data_error);
}

TEST(ReadCounts, WrongColumnCountRejected) {
    TempDir tmp;
    const std::string content =
        "region_id\ts1\ts2\n#X: 0 1\n#libsize: 10 10\n"
        "rF\t1\t1\n";
    EXPECT_THROW(read_counts_tsv(tmp.file("cols.tsv", content)), data_error);
}

TEST(ReadCounts, RegionOrderPreserved) {
    TempDir tmp;
    const std::string content =
        "region_id\ts1\ts2\n#X: 0 1\n#libsize: 10 10\n"
        "zz\t1\t1\t2\n"
        "aa\t1\t0\t1\n"
        "zz\t2\t1\t1\n";
    const auto batch = read_counts_tsv(tmp.file("order.tsv", content));
    ASSERT_EQ(batch.regions.size(), 2u);
    EXPECT_EQ(batch.regions[0].region_id, "zz");
    EXPECT_EQ(batch.regions[1].region_id, "aa");
}

TEST(Rebin, SumsAdjacentGroups) {
    CountsMatrix m(1, 6, "r");
    for (std::size_t b = 0; b < 6; ++b) m.at(0, b) = static_cast<std::int64_t>(b + 1);
    const auto r = rebin_counts(m, 3);
    ASSERT_EQ(r.bins, 2u);
    EXPECT_EQ(r.at(0, 0), 6);   // 1+2+3
    EXPECT_EQ(r.at(0, 1), 15);  // 4+5+6
    EXPECT_EQ(r.bin_width, 3);

    const auto partial = rebin_counts(m, 4);
    ASSERT_EQ(partial.bins, 2u);
    EXPECT_EQ(partial.at(0, 0), 10);  // 1+2+3+4
    EXPECT_EQ(partial.at(0, 1), 11);  // 5+6
    EXPECT_THROW(rebin_counts(m, 0), data_error);
}

TEST(ExternalTotals, KeyedAndPositional) {
    TempDir tmp;
    const std::vector<std::string> ids{"rA", "rB"};
    const auto keyed = read_external_totals(
        tmp.file("keyed.tsv", "rB\t0.5\t0.1\t2.0\nrA\t-0.2\t0.3\t0.7\n"), ids);
    EXPECT_DOUBLE_EQ(keyed.at("rB").log_fc_hat, 0.5);
    EXPECT_DOUBLE_EQ(keyed.at("rA").se_log_fc, 0.3);

    const auto positional =
        read_external_totals(tmp.file("pos.tsv", "0.5\t0.1\t2.0\n-0.2\t0.3\t0.7\n"), ids);
    EXPECT_DOUBLE_EQ(positional.at("rA").log_fc_hat, 0.5);
    EXPECT_DOUBLE_EQ(positional.at("rB").log_fc_hat, -0.2);

    EXPECT_THROW(read_external_totals(tmp.file("bad.tsv", "0.5\t0.1\n"), ids),
                 data_error);
    EXPECT_THROW(read_external_totals(tmp.file("badse.tsv", "rA\t0.5\t-0.1\t2.0\n"), ids),
                 data_error);
}

TEST(NullFile, RoundTripAndEmptyRejected) {
    TempDir tmp;
    NullReference ref;
    ref.statistics = {0.0, 1.25, 3.5e-17, 98.5};
    std::ostringstream buf;
    write_null_file(buf, ref);
    const auto path = tmp.file("null.txt", buf.str());
    const auto back = read_null_file(path);
    ASSERT_EQ(back.statistics.size(), ref.statistics.size());
    for (std::size_t i = 0; i < ref.statistics.size(); ++i)
        EXPECT_DOUBLE_EQ(back.statistics[i], ref.statistics[i]);

    EXPECT_THROW(read_null_file(tmp.file("empty.txt", "")), data_error);
}

TEST(ConfigJson, ParsesAndValidates) {
    const auto j = nlohmann::json::parse(R"({
        "em_tolerance": 1e-6,
        "ti_enabled": false,
        "rng_seed": 99,
        "n_permutations": 19,
        "total_model": "binomial",
        "glmm": {"random_effect": false, "min_total_trials": 3},
        "sigma_grid": {"se_divisor": 5.0}
    })");
    const auto c = config_from_json(j);
    EXPECT_DOUBLE_EQ(c.em_tolerance, 1e-6);
    EXPECT_FALSE(c.ti_enabled);
    EXPECT_EQ(c.rng_seed, 99u);
    EXPECT_EQ(c.n_permutations, 19);
    EXPECT_EQ(c.total_model, TotalModel::binomial_regression);
    EXPECT_FALSE(c.glmm.random_effect);
    EXPECT_EQ(c.glmm.min_total_trials, 3);
    EXPECT_DOUBLE_EQ(c.sigma_grid.se_divisor, 5.0);

    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"total_model":"x"})")),
                 data_error);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"em_tolerance":0})")),
                 data_error);
}

TEST(FormatG17, RoundTripsDoubles) {
    for (double v : {0.1, 1.0 / 3.0, 98.91234567891234, 1e-300, 3.5e17}) {
        const auto s = format_g17(v);
        EXPECT_EQ(std::stod(s), v);
    }
}

TEST(AnalyzeBatch, IsolatesRegionFailures) {
    RegionBatch batch;
    batch.covariate.values = {0, 0, 1, 1};
    batch.covariate.library_sizes.assign(4, 1e4);
    CountsMatrix good(4, 8, "good");
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t b = 0; b < 8; ++b) good.at(i, b) = 3;
    CountsMatrix bad(4, 8, "bad");
    bad.counts[3] = -5;  // invalid on purpose
    batch.regions = {good, bad};
    AnalysisConfig config;
    const auto outcome = analyze_batch(batch, config);
    ASSERT_EQ(outcome.results.size(), 2u);
    EXPECT_TRUE(outcome.results[0].has_value());
    EXPECT_FALSE(outcome.results[1].has_value());
    EXPECT_FALSE(outcome.errors[1].empty());
}

TEST(AnalyzeBatch, RegionOrderDoesNotChangeValues) {
    RegionBatch batch;
    batch.covariate.values = {0, 0, 1, 1};
    batch.covariate.library_sizes.assign(4, 2e3);
    std::mt19937_64 eng(77);
    std::poisson_distribution<std::int64_t> pois(7.0);
    for (int r = 0; r < 6; ++r) {
        CountsMatrix m(4, 8, "r" + std::to_string(r));
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t b = 0; b < 8; ++b) m.at(i, b) = pois(eng);
        batch.regions.push_back(std::move(m));
    }
    AnalysisConfig config;
    config.threads = 2;
    const auto fwd = analyze_batch(batch, config);
    std::reverse(batch.regions.begin(), batch.regions.end());
    const auto rev = analyze_batch(batch, config);
    for (std::size_t r = 0; r < 6; ++r) {
        ASSERT_TRUE(fwd.results[r].has_value());
        ASSERT_TRUE(rev.results[5 - r].has_value());
        EXPECT_EQ(fwd.results[r]->log_lambda, rev.results[5 - r]->log_lambda);
        EXPECT_EQ(fwd.results[r]->curve.mean, rev.results[5 - r]->curve.mean);
    }
}

TEST(RegionJson, CarriesCurveAndIntervals) {
    RegionAnalysis res;
    res.region_id = "rX";
    res.log_lambda = 4.5;
    res.curve.mean = {0.1, 0.9};
    res.curve.sd = {0.2, 0.2};
    res.curve.baseline_mean = {1.0, 1.0};
    res.significant.intervals.push_back({2, 2, 1});
    res.significant.z_threshold = 2.0;
    const auto j = region_to_json(res);
    EXPECT_EQ(j.at("region_id"), "rX");
    EXPECT_EQ(j.at("effect").at("mean").size(), 2u);
    EXPECT_EQ(j.at("significant_intervals").size(), 1u);
    EXPECT_EQ(j.at("significant_intervals")[0].at("direction"), "+");
}
