#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>
#include <unistd.h>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#ifndef MSDIFF_CLI_PATH
#define MSDIFF_CLI_PATH "msdiff"
#endif

namespace {

namespace fs = std::filesystem;

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

class CliFixture : public ::testing::Test {
  protected:
    static fs::path dir() {
        static fs::path d = [] {
            auto p = fs::temp_directory_path() /
                     ("msdiff_cli_test_" + std::to_string(::getpid()));
            fs::create_directories(p);
            return p;
        }();
        return d;
    }

    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }

    static RunResult run(const std::string& args) {
        const auto out_path = dir() / "stdout.txt";
        const auto err_path = dir() / "stderr.txt";
        const std::string cmd = std::string(MSDIFF_CLI_PATH) + " " + args + " > " +
                                out_path.string() + " 2> " + err_path.string();
        const int status = std::system(cmd.c_str());
        RunResult r;
        r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out_path);
        r.err = slurp(err_path);
        return r;
    }

    // ten regions, n = 6, two of them with a planted effect
    static std::string write_toy_counts() {
        const auto path = dir() / "counts.tsv";
        if (fs::exists(path)) return path.string();
        std::ofstream out(path);
        out << "region_id\ts1\ts2\ts3\ts4\ts5\ts6\n";
        out << "#X: 0 0 0 1 1 1\n";
        out << "#libsize: 500 500 500 500 500 500\n";
        std::mt19937_64 eng(4242);
        for (int r = 0; r < 10; ++r) {
            const bool signal = r >= 8;
            for (int b = 1; b <= 16; ++b) {
                out << "r" << r << '\t' << b;
                for (int i = 0; i < 6; ++i) {
                    double mean = 6.0;
                    if (signal && i >= 3 && b > 8 && b <= 12) mean *= 4.0;
                    std::poisson_distribution<int> pois(mean);
                    out << '\t' << pois(eng);
                }
                out << '\n';
            }
        }
        return path.string();
    }
};

}  // namespace

TEST_F(CliFixture, AnalyzeNullPvaluesEndToEnd) {
    const auto counts = write_toy_counts();
    const auto results = (dir() / "results.tsv").string();
    const auto null_file = (dir() / "null.txt").string();
    const auto pq = (dir() / "pq.tsv").string();

    auto a = run("analyze --counts " + counts + " --out " + results + " --seed 7");
    ASSERT_EQ(a.exit_code, 0) << a.err;
    {
        std::ifstream in(results);
        std::string line;
        int rows = 0;
        std::getline(in, line);
        EXPECT_EQ(line, "region_id\tlog_lambda");
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        EXPECT_EQ(rows, 10);
    }

    auto n = run("null --counts " + counts + " --permutations 19 --seed 7 --out " +
                 null_file);
    ASSERT_EQ(n.exit_code, 0) << n.err;
    {
        std::ifstream in(null_file);
        std::string line;
        int rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        EXPECT_EQ(rows, 10 * 19);
    }

    auto p = run("pvalues --results " + results + " --null " + null_file + " --out " + pq);
    ASSERT_EQ(p.exit_code, 0) << p.err;
    {
        std::ifstream in(pq);
        std::string line;
        std::getline(in, line);
        EXPECT_EQ(line, "region_id\tlog_lambda\tp_value\tq_value");
        int rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        EXPECT_EQ(rows, 10);
    }
}

TEST_F(CliFixture, DeterministicOutputs) {
    const auto counts = write_toy_counts();
    const auto out1 = (dir() / "det1.tsv").string();
    const auto out2 = (dir() / "det2.tsv").string();
    const auto fx1 = (dir() / "fx1.json").string();
    const auto fx2 = (dir() / "fx2.json").string();
    ASSERT_EQ(run("analyze --counts " + counts + " --out " + out1 + " --effects-out " +
                  fx1 + " --seed 3")
                  .exit_code,
              0);
    ASSERT_EQ(run("analyze --counts " + counts + " --out " + out2 + " --effects-out " +
                  fx2 + " --seed 3")
                  .exit_code,
              0);
    EXPECT_EQ(slurp(out1), slurp(out2));
    EXPECT_EQ(slurp(fx1), slurp(fx2));
    EXPECT_FALSE(slurp(fx1).empty());
}

TEST_F(CliFixture, EffectsSubcommand) {
    const auto counts = write_toy_counts();
    const auto curve = (dir() / "curve.tsv").string();
    auto r = run("effects --counts " + counts + " --region r9 --out " + curve +
                 " --z 1.5");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto text = slurp(curve);
    EXPECT_NE(text.find("bin\tmean\tsd\tsignificant"), std::string::npos);
    int rows = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#' && line[0] != 'b') ++rows;
    EXPECT_EQ(rows, 16);

    auto missing = run("effects --counts " + counts + " --region nosuch");
    EXPECT_EQ(missing.exit_code, 2);

    // rebinning by 2 halves the curve length
    const auto rebinned = (dir() / "curve_rebin.tsv").string();
    auto rb = run("effects --counts " + counts + " --region r9 --rebin 2 --out " +
                  rebinned);
    ASSERT_EQ(rb.exit_code, 0) << rb.err;
    int rb_rows = 0;
    std::istringstream rin(slurp(rebinned));
    std::string rb_line;
    while (std::getline(rin, rb_line))
        if (!rb_line.empty() && rb_line[0] != '#' && rb_line[0] != 'b') ++rb_rows;
    EXPECT_EQ(rb_rows, 8);
}

TEST_F(CliFixture, SimulateGrid) {
    const auto grid = dir() / "grid.json";
    {
        std::ofstream out(grid);
        out << R"({
            "seed": 5,
            "dispersion": 0.1,
            "sample_sizes": [4],
            "depth_multipliers": [1.0],
            "replicates": 3,
            "templates": [
                {"name": "bump",
                 "base_intensity": [20,20,20,20,60,60,20,20],
                 "effect": [0,0,0,0,1.2,1.2,0,0]}
            ]
        })";
    }
    const auto out_path = (dir() / "auc.tsv").string();
    const auto scores = (dir() / "scores.tsv").string();
    auto r = run("simulate --grid " + grid.string() + " --out " + out_path +
                 " --scores-out " + scores);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto text = slurp(out_path);
    EXPECT_NE(text.find("cell\tmethod\tauc"), std::string::npos);
    EXPECT_NE(text.find("msdiff"), std::string::npos);
    int score_rows = 0;
    std::istringstream sin(slurp(scores));
    std::string line;
    while (std::getline(sin, line))
        if (!line.empty()) ++score_rows;
    EXPECT_EQ(score_rows, 1 + 6);  // header + 3 replicates x (null, alt)
}

TEST_F(CliFixture, ExitCodes) {
    // usage error
    EXPECT_EQ(run("analyze --nonsense").exit_code, 1);
    EXPECT_EQ(run("").exit_code, 1);
    // data errors
    EXPECT_EQ(run("analyze --counts /nonexistent/file.tsv").exit_code, 2);
    const auto empty_null = dir() / "empty_null.txt";
    std::ofstream(empty_null).close();
    const auto counts = write_toy_counts();
    const auto results = (dir() / "res_for_exit.tsv").string();
    ASSERT_EQ(run("analyze --counts " + counts + " --no-ti --out " + results).exit_code, 0);
    auto p = run("pvalues --results " + results + " --null " + empty_null.string());
    EXPECT_EQ(p.exit_code, 2);
    EXPECT_NE(p.err.find("empty null reference"), std::string::npos);
}
