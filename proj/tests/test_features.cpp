#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gga/features.hpp"

using namespace gga;

namespace {

CosineSimilarityMatrix matrix(std::size_t m, const std::vector<double>& upper, std::size_t predicted = 0) {
    CosineSimilarityMatrix c;
    c.size = m;
    c.entries.assign(m * m, 1.0);
    c.class_ids.resize(m);
    c.degenerate.assign(m, false);
    for (std::size_t i = 0; i < m; ++i) c.class_ids[i] = i;
    c.predicted_index = predicted;
    std::size_t k = 0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) c.entries[i * m + j] = c.entries[j * m + i] = upper[k++];
    return c;
}

}  // namespace

TEST(SplitSets, ThreeClassEnumeration) {
    auto [s1, s2] = split_sets(matrix(3, {0.1, 0.2, 0.3}));
    EXPECT_EQ(s2, (std::vector<double>{0.1, 0.2}));
    EXPECT_EQ(s1, (std::vector<double>{0.3}));
}

TEST(SplitSets, PredictedNotFirst) {
    auto [s1, s2] = split_sets(matrix(3, {0.1, 0.2, 0.3}, 2));
    EXPECT_EQ(s2, (std::vector<double>{0.2, 0.3}));
    EXPECT_EQ(s1, (std::vector<double>{0.1}));
}

TEST(SplitSets, TwoClassesLeaveS1Empty) {
    auto [s1, s2] = split_sets(matrix(2, {0.4}));
    EXPECT_TRUE(s1.empty());
    EXPECT_EQ(s2.size(), 1u);
    GgaFeatureVector f = features(matrix(2, {0.4}));
    EXPECT_TRUE(f.degenerate);
    EXPECT_EQ(f.s1, SetStats{});
}

TEST(SplitSets, TriangleCount) {
    for (std::size_t m = 2; m <= 12; ++m) {
        auto [s1, s2] = split_sets(matrix(m, std::vector<double>(m * (m - 1) / 2, 0.0), m / 2));
        EXPECT_EQ(s1.size() + s2.size(), m * (m - 1) / 2);
        EXPECT_EQ(s2.size(), m - 1);
        EXPECT_EQ(s1.size(), (m - 1) * (m - 2) / 2);
    }
}

TEST(SetStatistics, ConstantSet) {
    SetStats s = set_statistics(std::vector<double>{0.5, 0.5, 0.5});
    EXPECT_EQ(s, (SetStats{0.5, 0.5, 0.5, 0.0, 0.25}));
}

TEST(SetStatistics, PlusMinusOne) {
    SetStats s = set_statistics(std::vector<double>{1, -1});
    EXPECT_EQ(s, (SetStats{0.0, 1.0, -1.0, 1.0, 1.0}));
}

TEST(SetStatistics, EmptySetIsZero) { EXPECT_EQ(set_statistics(std::vector<double>{}), SetStats{}); }

TEST(Features, AllOnesMatrix) {
    GgaFeatureVector f = features(matrix(4, std::vector<double>(6, 1.0)));
    const SetStats ones{1, 1, 1, 0, 1};
    EXPECT_EQ(f.s1, ones);
    EXPECT_EQ(f.s2, ones);
    EXPECT_FALSE(f.degenerate);
    EXPECT_EQ(f.values(), (std::array<double, 10>{1, 1, 1, 0, 1, 1, 1, 1, 0, 1}));
}

TEST(Features, SoftmaxAppendedOnRequest) {
    CosineSimilarityMatrix c = matrix(3, {0.1, 0.2, 0.3});
    c.top_probability = 0.8;
    GgaFeatureVector f = features(c);
    EXPECT_EQ(f.as_vector().size(), 10u);
    ASSERT_EQ(f.as_vector(true).size(), 11u);
    EXPECT_EQ(f.as_vector(true)[10], 0.8);
}

TEST(Features, InvariantUnderRelabelingNonPredicted) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 6;
        std::vector<double> upper(m * (m - 1) / 2);
        for (auto& v : upper) v = u(rng);
        CosineSimilarityMatrix a = matrix(m, upper);
        // Permute positions 1..m-1 keeping the predicted class at 0.
        std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5};
        std::shuffle(perm.begin() + 1, perm.end(), rng);
        CosineSimilarityMatrix b = a;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) b.entries[i * m + j] = a.entries[perm[i] * m + perm[j]];
        const auto fa = features(a).values(), fb = features(b).values();
        for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(fa[k], fb[k], 1e-12);
    }
}

TEST(Features, CsvExport) {
    std::ostringstream out;
    write_features_csv_header(out);
    GgaFeatureVector f = features(matrix(3, {0.5, -0.5, 0.25}));
    write_features_csv_row(out, f, 2, "clean");
    EXPECT_EQ(out.str().substr(0, 52), "f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,predicted_class,label");
    EXPECT_NE(out.str().find(",0,2,clean\n"), std::string::npos) << out.str();
}
