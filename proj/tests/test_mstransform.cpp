#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "msdiff/mstransform.hpp"

using namespace msdiff;

TEST(ForwardCounts, HandComputedHalfSums) {
    const std::vector<std::int64_t> y{1, 2, 3, 4};
    const auto t = forward_counts(y);
    EXPECT_EQ(t.total, 10);
    EXPECT_EQ(t.half_minus[node_flat_index(1, 1)], 3);
    EXPECT_EQ(t.half_plus[node_flat_index(1, 1)], 7);
    EXPECT_EQ(t.half_minus[node_flat_index(2, 1)], 1);
    EXPECT_EQ(t.half_plus[node_flat_index(2, 1)], 2);
    EXPECT_EQ(t.half_minus[node_flat_index(2, 2)], 3);
    EXPECT_EQ(t.half_plus[node_flat_index(2, 2)], 4);
}

TEST(ForwardCounts, AllZeros) {
    const auto t = forward_counts(std::vector<std::int64_t>{0, 0, 0, 0});
    EXPECT_EQ(t.total, 0);
    for (std::size_t i = 0; i < t.node_count(); ++i) {
        EXPECT_EQ(t.half_minus[i], 0);
        EXPECT_EQ(t.half_plus[i], 0);
    }
}

TEST(ForwardCounts, SingleSpike) {
    const auto t = forward_counts(std::vector<std::int64_t>{5, 0, 0, 0});
    EXPECT_EQ(t.total, 5);
    EXPECT_EQ(t.half_minus[0], 5);
    EXPECT_EQ(t.half_plus[0], 0);
    EXPECT_EQ(t.half_minus[1], 5);
    EXPECT_EQ(t.half_plus[1], 0);
    EXPECT_EQ(t.half_minus[2], 0);
    EXPECT_EQ(t.half_plus[2], 0);
}

TEST(ForwardCounts, ParentChildConsistency) {
    std::mt19937_64 eng(7);
    std::poisson_distribution<std::int64_t> pois(3.0);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::int64_t> y(32);
        for (auto& v : y) v = pois(eng);
        const auto t = forward_counts(y);
        EXPECT_EQ(t.half_minus[0] + t.half_plus[0], t.total);
        for (int s = 1; s < t.levels; ++s) {
            for (std::int64_t l = 1; l <= (1 << (s - 1)); ++l) {
                const auto idx = node_flat_index(s, l);
                const auto left = node_flat_index(s + 1, 2 * l - 1);
                const auto right = node_flat_index(s + 1, 2 * l);
                EXPECT_EQ(t.half_minus[idx], t.half_minus[left] + t.half_plus[left]);
                EXPECT_EQ(t.half_plus[idx], t.half_minus[right] + t.half_plus[right]);
            }
        }
    }
}

TEST(IntensityTransform, ConstantIntensity) {
    const auto p = multiscale_from_intensity(std::vector<double>{2, 2, 2, 2});
    EXPECT_DOUBLE_EQ(p.lambda_tot, 8.0);
    for (double a : p.alpha) EXPECT_DOUBLE_EQ(a, 0.0);
}

TEST(IntensityTransform, HandComputedAlpha) {
    const auto p = multiscale_from_intensity(std::vector<double>{3, 3, 1, 1});
    EXPECT_DOUBLE_EQ(p.lambda_tot, 8.0);
    EXPECT_NEAR(p.alpha[0], std::log(3.0), 1e-15);
    EXPECT_NEAR(p.alpha[1], 0.0, 1e-15);
    EXPECT_NEAR(p.alpha[2], 0.0, 1e-15);

    const auto q = multiscale_from_intensity(std::vector<double>{1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(q.lambda_tot, 10.0);
    EXPECT_NEAR(q.alpha[0], std::log(3.0 / 7.0), 1e-15);
    EXPECT_NEAR(q.alpha[1], std::log(1.0 / 2.0), 1e-15);
    EXPECT_NEAR(q.alpha[2], std::log(3.0 / 4.0), 1e-15);
}

TEST(IntensityTransform, InverseHandExample) {
    IntensityParams p;
    p.bins = 4;
    p.levels = 2;
    p.alpha = {std::log(3.0), 0.0, 0.0};
    p.lambda_tot = 8.0;
    const auto lambda = intensity_from_multiscale(p);
    ASSERT_EQ(lambda.size(), 4u);
    EXPECT_NEAR(lambda[0], 3.0, 1e-12);
    EXPECT_NEAR(lambda[1], 3.0, 1e-12);
    EXPECT_NEAR(lambda[2], 1.0, 1e-12);
    EXPECT_NEAR(lambda[3], 1.0, 1e-12);

    IntensityParams flat;
    flat.bins = 4;
    flat.levels = 2;
    flat.alpha = {0.0, 0.0, 0.0};
    flat.lambda_tot = 8.0;
    const auto l2 = intensity_from_multiscale(flat);
    for (double v : l2) EXPECT_NEAR(v, 2.0, 1e-14);
}

TEST(IntensityTransform, RoundTrip) {
    const std::vector<double> lambda{0.5, 1.5, 2.5, 3.5};
    const auto back = intensity_from_multiscale(multiscale_from_intensity(lambda));
    for (std::size_t b = 0; b < lambda.size(); ++b)
        EXPECT_NEAR(back[b], lambda[b], 1e-12 * lambda[b]);
}

TEST(IntensityTransform, RoundTripRandomAndScaleInvariance) {
    std::mt19937_64 eng(11);
    std::uniform_real_distribution<double> unif(0.01, 50.0);
    for (std::size_t B : {2u, 4u, 8u, 16u, 64u}) {
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<double> lambda(B);
            for (auto& v : lambda) v = unif(eng);
            const auto p = multiscale_from_intensity(lambda);
            const auto back = intensity_from_multiscale(p);
            for (std::size_t b = 0; b < B; ++b)
                EXPECT_NEAR(back[b], lambda[b], 1e-12 * lambda[b]);

            // scaling lambda leaves alpha unchanged and scales the total
            std::vector<double> scaled(lambda);
            for (auto& v : scaled) v *= 3.25;
            const auto ps = multiscale_from_intensity(scaled);
            EXPECT_NEAR(ps.lambda_tot, 3.25 * p.lambda_tot, 1e-9);
            for (std::size_t i = 0; i < p.alpha.size(); ++i)
                EXPECT_NEAR(ps.alpha[i], p.alpha[i], 1e-12);
        }
    }
}

TEST(FactorizedLoglik, TwoZeroBins) {
    const auto t = forward_counts(std::vector<std::int64_t>{0, 0});
    IntensityParams p;
    p.bins = 2;
    p.levels = 1;
    p.alpha = {0.0};
    p.lambda_tot = 2.0;
    EXPECT_NEAR(factorized_loglik(t, p), -2.0, 1e-12);
}

TEST(FactorizedLoglik, MatchesIndependentPoissonOracle) {
    std::mt19937_64 eng(2024);
    std::uniform_real_distribution<double> unif(0.05, 20.0);
    for (std::size_t B : {2u, 4u, 8u, 16u, 32u, 64u}) {
        for (int rep = 0; rep < 40; ++rep) {
            std::vector<double> lambda(B);
            for (auto& v : lambda) v = unif(eng);
            std::vector<std::int64_t> y(B);
            for (std::size_t b = 0; b < B; ++b) {
                std::poisson_distribution<std::int64_t> pois(lambda[b]);
                y[b] = pois(eng);
            }
            double oracle = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                oracle += log_poisson_pmf(static_cast<double>(y[b]), lambda[b]);
            const double fact =
                factorized_loglik(forward_counts(y), multiscale_from_intensity(lambda));
            EXPECT_NEAR(fact, oracle, 1e-10);
        }
    }
}

TEST(FactorizedLoglik, SelfIntensityExample) {
    const std::vector<std::int64_t> y{1, 2, 3, 4};
    const std::vector<double> lambda{1, 2, 3, 4};
    double oracle = 0.0;
    for (std::size_t b = 0; b < 4; ++b)
        oracle += log_poisson_pmf(static_cast<double>(y[b]), lambda[b]);
    EXPECT_NEAR(factorized_loglik(forward_counts(y), multiscale_from_intensity(lambda)),
                oracle, 1e-12);
}

TEST(NodeIndexing, FlatRoundTrip) {
    for (int s = 1; s <= 5; ++s) {
        for (std::int64_t l = 1; l <= (1 << (s - 1)); ++l) {
            const auto idx = node_flat_index(s, l);
            const auto node = node_from_flat(idx);
            EXPECT_EQ(node.scale, s);
            EXPECT_EQ(node.location, l);
        }
    }
}

TEST(CircularShift, Basics) {
    const std::vector<std::int64_t> y{1, 2, 3, 4};
    EXPECT_EQ(circular_shift(y, 0), y);
    EXPECT_EQ(circular_shift(y, 1), (std::vector<std::int64_t>{2, 3, 4, 1}));
    EXPECT_THROW(circular_shift(y, 4), data_error);
    for (std::size_t k = 0; k < 4; ++k) {
        auto round = circular_shift(circular_shift(y, k), (4 - k) % 4);
        EXPECT_EQ(round, y);
    }
}

TEST(TiNodeSet, MatchesForwardOnShiftedData) {
    const std::vector<std::int64_t> y{1, 2, 3, 4, 0, 7, 2, 5};
    std::vector<std::size_t> shifts;
    for (std::size_t k = 0; k < y.size(); ++k) shifts.push_back(k);
    const auto tables = ti_node_set(y, shifts);
    ASSERT_EQ(tables.size(), y.size());
    for (const auto& [k, table] : tables) {
        const auto expected = forward_counts(circular_shift(y, k));
        EXPECT_EQ(table.total, expected.total);
        EXPECT_EQ(table.half_minus, expected.half_minus);
        EXPECT_EQ(table.half_plus, expected.half_plus);
    }
}

TEST(TiNodeSet, HandExampleShiftOne) {
    const std::vector<std::int64_t> y{1, 2, 3, 4};
    const std::vector<std::size_t> shifts{0, 1};
    const auto tables = ti_node_set(y, shifts);
    EXPECT_EQ(tables[0].second.half_minus[0], 3);
    EXPECT_EQ(tables[0].second.half_plus[0], 7);
    // shifted series (2,3,4,1): scale-1 half sums (5,5)
    EXPECT_EQ(tables[1].second.half_minus[0], 5);
    EXPECT_EQ(tables[1].second.half_plus[0], 5);
}

TEST(TiNodeSet, ConstantSeriesInvariant) {
    const std::vector<std::int64_t> y{3, 3, 3, 3, 3, 3, 3, 3};
    std::vector<std::size_t> shifts;
    for (std::size_t k = 0; k < y.size(); ++k) shifts.push_back(k);
    const auto tables = ti_node_set(y, shifts);
    for (const auto& [k, table] : tables) {
        EXPECT_EQ(table.half_minus, tables[0].second.half_minus);
        EXPECT_EQ(table.half_plus, tables[0].second.half_plus);
    }
}
