// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mhmtl/metrics.hpp"
#include "testutil.hpp"

using namespace mhmtl;
using namespace testutil;

namespace {

std::vector<std::uint8_t> random_mask(int h, int w, double density, std::mt19937_64& rng) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(h) * w, 0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : m) v = u(rng) < density;
    return m;
}

}  // namespace

TEST(DscTest, FrozenExamples) {
    std::vector<std::uint8_t> a(16, 0), b(16, 0);
    EXPECT_DOUBLE_EQ(dsc(a, b), 1.0);  // both empty agree

    // 4-pixel squares on a 4x4 grid; shifted copy overlaps in 2 pixels.
    auto set = [](std::vector<std::uint8_t>& m, int y, int x) { m[static_cast<std::size_t>(y) * 4 + x] = 1; };
    set(a, 1, 1);
    set(a, 1, 2);
    set(a, 2, 1);
    set(a, 2, 2);
    set(b, 2, 1);
    set(b, 2, 2);
    set(b, 3, 1);
    set(b, 3, 2);
    EXPECT_DOUBLE_EQ(dsc(a, a), 1.0);
    EXPECT_DOUBLE_EQ(dsc(a, b), 0.5);

    std::vector<std::uint8_t> c(16, 0);
    set(c, 0, 3);
    EXPECT_DOUBLE_EQ(dsc(a, c), 0.0);
}

TEST(DscTest, MatchesOracleAndSymmetric) {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 120; ++rep) {
        const int h = 2 + static_cast<int>(rng() % 7), w = 2 + static_cast<int>(rng() % 7);
        auto a = random_mask(h, w, 0.4, rng);
        auto b = random_mask(h, w, 0.4, rng);
        EXPECT_DOUBLE_EQ(dsc(a, b), oracle_dsc(a, b));
        EXPECT_DOUBLE_EQ(dsc(a, b), dsc(b, a));
    }
}

TEST(HausdorffTest, FrozenExamples) {
    std::mt19937_64 rng(5);
    auto m = random_mask(6, 6, 0.5, rng);
    EXPECT_DOUBLE_EQ(hausdorff(6, 6, m, m), 0.0);

    std::vector<std::uint8_t> a(5 * 6, 0), b(5 * 6, 0);
    a[0] = 1;                // (0,0)
    b[3 * 6 + 4] = 1;        // (3,4)
    EXPECT_DOUBLE_EQ(hausdorff(5, 6, a, b), 5.0);

    std::vector<std::uint8_t> empty(5 * 6, 0);
    EXPECT_DOUBLE_EQ(hausdorff(5, 6, a, empty), std::hypot(5.0, 6.0));
    EXPECT_DOUBLE_EQ(hausdorff(5, 6, empty, empty), 0.0);
}

TEST(HausdorffTest, InteriorPixelsDoNotCount) {
    // Solid 3x3 block vs the same block with its center removed: boundaries
    // are identical, so the distance is 0.
    std::vector<std::uint8_t> solid(25, 0), ring(25, 0);
    for (int y = 1; y <= 3; ++y)
        for (int x = 1; x <= 3; ++x) {
            solid[static_cast<std::size_t>(y) * 5 + x] = 1;
            if (y != 2 || x != 2) ring[static_cast<std::size_t>(y) * 5 + x] = 1;
        }
    EXPECT_DOUBLE_EQ(hausdorff(5, 5, solid, ring), 0.0);
}

TEST(HausdorffTest, MatchesAllPairsOracle) {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 120; ++rep) {
        const int h = 3 + static_cast<int>(rng() % 8), w = 3 + static_cast<int>(rng() % 8);
        auto a = random_mask(h, w, 0.3, rng);
        auto b = random_mask(h, w, 0.3, rng);
        EXPECT_NEAR(hausdorff(h, w, a, b), oracle_hausdorff(h, w, a, b), 1e-9);
        EXPECT_DOUBLE_EQ(hausdorff(h, w, a, b), hausdorff(h, w, b, a));
    }
}

TEST(ForegroundClassMeanTest, AveragesBinaryScores) {
    // K=3 over a 2x2 map; class 1 matches exactly, class 2 is disjoint.
    std::vector<int> gt{1, 1, 2, 0};
    std::vector<int> pred{1, 1, 0, 2};
    const double v = foreground_class_mean(3, pred, gt,
                                           [](const auto& a, const auto& b) { return dsc(a, b); });
    EXPECT_DOUBLE_EQ(v, 0.5);  // (1.0 + 0.0) / 2
}

TEST(AucTest, FrozenExamples) {
    EXPECT_DOUBLE_EQ(auc_binary({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
    EXPECT_DOUBLE_EQ(auc_binary({0.4, 0.4, 0.4, 0.4}, {0, 1, 0, 1}), 0.5);
    EXPECT_DOUBLE_EQ(auc_binary({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
    EXPECT_THROW(auc_binary({0.1, 0.2}, {1, 1}), ContractError);
}

TEST(AucTest, MonotoneTransformInvariant) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 30; ++rep) {
        const int n = 6 + static_cast<int>(rng() % 20);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> l(static_cast<std::size_t>(n));
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = u(rng);
            l[static_cast<std::size_t>(i)] = rng() % 2;
            pos += l[static_cast<std::size_t>(i)];
        }
        if (pos == 0 || pos == n) continue;
        std::vector<double> warped(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) warped[i] = std::exp(3.0 * s[i]) + 2.0;
        EXPECT_NEAR(auc_binary(s, l), auc_binary(warped, l), 1e-12);
    }
}

TEST(AucTest, MatchesPairCountingOracleWithTies) {
    std::mt19937_64 rng(13);
    int checked = 0;
    while (checked < 120) {
        const int n = 4 + static_cast<int>(rng() % 16);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> l(static_cast<std::size_t>(n));
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            // Coarse quantization forces frequent score ties.
            s[static_cast<std::size_t>(i)] = static_cast<double>(rng() % 5) / 4.0;
            l[static_cast<std::size_t>(i)] = rng() % 2;
            pos += l[static_cast<std::size_t>(i)];
        }
        if (pos == 0 || pos == n) continue;
        EXPECT_NEAR(auc_binary(s, l), oracle_auc_binary(s, l), 1e-9);
        ++checked;
    }
}

TEST(AucTest, MacroexcludesDegenerateClasses) {
    // Class 2 never occurs: macro mean covers classes 0 and 1 only.
    std::vector<std::vector<double>> probs{
        {0.7, 0.2, 0.1}, {0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}, {0.1, 0.8, 0.1}};
    std::vector<int> labels{0, 0, 1, 1};
    const double auc01 = 0.5 * (auc_binary({0.7, 0.6, 0.2, 0.1}, {1, 1, 0, 0}) +
                                auc_binary({0.2, 0.3, 0.7, 0.8}, {0, 0, 1, 1}));
    EXPECT_NEAR(auc_macro(probs, labels, 3), auc01, 1e-12);

    std::vector<std::vector<double>> one_class{{0.9, 0.1}, {0.8, 0.2}};
    EXPECT_DOUBLE_EQ(auc_macro(one_class, {0, 0}, 2), 0.5);
}

TEST(F1MccTest, FrozenExamples) {
    ConfusionMatrix diag(3);
    diag.add(0, 0);
    diag.add(1, 1);
    diag.add(2, 2);
    diag.add(1, 1);
    auto d = f1_mcc(diag);
    EXPECT_DOUBLE_EQ(d.f1, 1.0);
    EXPECT_DOUBLE_EQ(d.mcc, 1.0);

    ConfusionMatrix collapsed(2);  // every prediction lands in class 0
    collapsed.add(0, 0);
    collapsed.add(0, 0);
    collapsed.add(1, 0);
    collapsed.add(1, 0);
    EXPECT_DOUBLE_EQ(f1_mcc(collapsed).mcc, 0.0);

    ConfusionMatrix cm(2);  // rows truth: [[6,2],[1,3]]
    for (int i = 0; i < 6; ++i) cm.add(0, 0);
    for (int i = 0; i < 2; ++i) cm.add(0, 1);
    cm.add(1, 0);
    for (int i = 0; i < 3; ++i) cm.add(1, 1);
    auto r = f1_mcc(cm);
    EXPECT_NEAR(r.f1, 0.5 * (12.0 / 15.0 + 6.0 / 9.0), 1e-12);
    EXPECT_NEAR(r.mcc, 32.0 / std::sqrt(70.0 * 64.0), 1e-12);
}

TEST(F1MccTest, MatchesLabelStreamOracles) {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 120; ++rep) {
        const int k = 2 + static_cast<int>(rng() % 4);
        const int n = 5 + static_cast<int>(rng() % 40);
        std::vector<int> truth(static_cast<std::size_t>(n)), pred(static_cast<std::size_t>(n));
        ConfusionMatrix cm(k);
        for (int i = 0; i < n; ++i) {
            truth[static_cast<std::size_t>(i)] = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
            pred[static_cast<std::size_t>(i)] = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
            cm.add(truth[static_cast<std::size_t>(i)], pred[static_cast<std::size_t>(i)]);
        }
        auto r = f1_mcc(cm);
        EXPECT_NEAR(r.f1, oracle_f1_macro(k, truth, pred), 1e-9);
        EXPECT_NEAR(r.mcc, oracle_mcc(k, truth, pred), 1e-9);
        EXPECT_GE(r.mcc, -1.0 - 1e-12);
        EXPECT_LE(r.mcc, 1.0 + 1e-12);
        EXPECT_GE(r.f1, 0.0);
        EXPECT_LE(r.f1, 1.0);
    }
}

TEST(IouTest, FrozenExamples) {
    Box a{0.5, 0.5, 0.2, 0.2};
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(iou(a, Box{0.9, 0.9, 0.1, 0.1}), 0.0);
    // Unit squares offset by half a width: intersection 0.5, union 1.5.
    EXPECT_NEAR(iou(Box{0.0, 0.0, 1.0, 1.0}, Box{0.5, 0.0, 1.0, 1.0}), 1.0 / 3.0, 1e-12);
    EXPECT_THROW(iou(a, Box{0.5, 0.5, -0.1, 0.2}), ContractError);
    EXPECT_DOUBLE_EQ(iou(Box{0.2, 0.2, 0.0, 0.0}, Box{0.2, 0.2, 0.0, 0.0}), 0.0);  // empty union
}

TEST(IouTest, MatchesQuantizedOracleAndSymmetric) {
    std::mt19937_64 rng(19);
    for (int rep = 0; rep < 150; ++rep) {
        // Box fields on the oracle's 1e-6 lattice so quantization is exact.
        auto q = [&] { return static_cast<double>(rng() % 1000001) / 1000000.0; };
        Box a{q(), q(), q(), q()};
        Box b{q(), q(), q(), q()};
        const double v = iou(a, b);
        EXPECT_NEAR(v, oracle_iou_quantized(a.cx, a.cy, a.w, a.h, b.cx, b.cy, b.w, b.h), 1e-9);
        EXPECT_DOUBLE_EQ(v, iou(b, a));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(MreTest, FrozenExamples) {
    std::vector<Keypoint> gt{{512.0, 384.0}};
    EXPECT_DOUBLE_EQ(mre({{0.5, 0.5}}, gt, 768, 1024), 0.0);
    EXPECT_DOUBLE_EQ(mre({{0.5, 0.5}}, {{412.0, 384.0}}, 768, 1024), 100.0);

    // Two keypoints: mean of the individual radial errors.
    const double e0 = std::hypot(0.25 * 100 - 30.0, 0.5 * 200 - 80.0);
    const double e1 = std::hypot(0.75 * 100 - 70.0, 0.25 * 200 - 60.0);
    EXPECT_NEAR(mre({{0.25, 0.5}, {0.75, 0.25}}, {{30.0, 80.0}, {70.0, 60.0}}, 200, 100),
                0.5 * (e0 + e1), 1e-12);
}

TEST(MreTest, MatchesOracle) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 120; ++rep) {
        const int m = 1 + static_cast<int>(rng() % 5);
        const int h0 = 100 + static_cast<int>(rng() % 900), w0 = 100 + static_cast<int>(rng() % 900);
        std::vector<Keypoint> pred, gt;
        std::vector<std::pair<double, double>> opred, ogt;
        for (int i = 0; i < m; ++i) {
            const double x = u(rng), y = u(rng), gx = u(rng) * w0, gy = u(rng) * h0;
            pred.push_back({x, y});
            gt.push_back({gx, gy});
            opred.emplace_back(x, y);
            ogt.emplace_back(gx, gy);
        }
        EXPECT_NEAR(mre(pred, gt, h0, w0), oracle_mre(opred, ogt, h0, w0), 1e-9);
    }
}

TEST(EvalReportTest, MeansAreUnweighted) {
    EvalReport r;
    r.subtasks["seg0"]["dsc"] = 0.8;
    r.subtasks["seg1"]["dsc"] = 0.6;
    r.subtasks["seg0"]["hd"] = 3.0;
    r.subtasks["seg1"]["hd"] = 5.0;
    r.subtasks["cls0"]["auc"] = 0.9;
    r.compute_means();
    EXPECT_DOUBLE_EQ(r.means.at("mean_dsc"), 0.7);
    EXPECT_DOUBLE_EQ(r.means.at("mean_hd"), 4.0);
    EXPECT_DOUBLE_EQ(r.means.at("mean_auc"), 0.9);
}

TEST(EvalReportTest, SerializeParseRoundTrip) {
    EvalReport r;
    r.subtasks["seg0"]["dsc"] = 1.0 / 3.0;
    r.subtasks["det0"]["iou"] = 0.1234567890123;
    r.subtasks["reg0"]["mre_px"] = 42.5;
    r.compute_means();
    EvalReport back = EvalReport::parse(r.serialize());
    EXPECT_EQ(back.subtasks, r.subtasks);
    EXPECT_EQ(back.means, r.means);
    EXPECT_THROW(EvalReport::parse("no separator here\n"), DataError);
}
