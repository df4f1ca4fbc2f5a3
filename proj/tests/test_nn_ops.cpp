// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "mhmtl/nn_ops.hpp"
#include "testutil.hpp"

using mhmtl::Tensor;

TEST(Conv2d, SumOfOnesKernel) {
    auto x = Tensor<double>::filled({1, 1, 3, 3}, 1.0);
    auto w = Tensor<double>::filled({1, 1, 3, 3}, 1.0);
    auto b = Tensor<double>::zeros({1});
    auto y = mhmtl::conv2d(x, w, b, 1, 0);
    ASSERT_EQ(y.shape(), (mhmtl::Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.item(), 9.0);
}

TEST(Conv2d, IdentityKernel) {
    std::mt19937_64 rng(21);
    auto x = Tensor<double>::uniform({2, 1, 5, 4}, -1, 1, rng);
    auto w = Tensor<double>::filled({1, 1, 1, 1}, 1.0);
    auto b = Tensor<double>::zeros({1});
    auto y = mhmtl::conv2d(x, w, b, 1, 0);
    EXPECT_EQ(y.data(), x.data());
}

TEST(Conv2d, OutputExtentFormula) {
    auto x = Tensor<double>::zeros({1, 2, 11, 9});
    auto w = Tensor<double>::zeros({3, 2, 3, 3});
    auto b = Tensor<double>::zeros({3});
    auto y = mhmtl::conv2d(x, w, b, 2, 1);
    EXPECT_EQ(y.shape(), (mhmtl::Shape{1, 3, 6, 5}));
}

TEST(Conv2d, ChannelMismatchThrows) {
    auto x = Tensor<double>::zeros({1, 3, 4, 4});
    auto w = Tensor<double>::zeros({2, 4, 3, 3});
    auto b = Tensor<double>::zeros({2});
    EXPECT_THROW(mhmtl::conv2d(x, w, b, 1, 0), mhmtl::ShapeError);
}

TEST(Conv2d, KernelLargerThanPaddedInputThrows) {
    auto x = Tensor<double>::zeros({1, 1, 2, 2});
    auto w = Tensor<double>::zeros({1, 1, 5, 5});
    auto b = Tensor<double>::zeros({1});
    EXPECT_THROW(mhmtl::conv2d(x, w, b, 1, 0), mhmtl::ShapeError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(22);
    auto x = Tensor<double>::uniform({2, 3, 8, 8}, -1, 1, rng, true);
    auto w = Tensor<double>::uniform({4, 3, 3, 3}, -0.5, 0.5, rng, true);
    auto b = Tensor<double>::uniform({4}, -0.5, 0.5, rng, true);
    const double err = testutil::gradcheck(
        [&] {
            auto y = mhmtl::conv2d(x, w, b, 1, 1);
            return mhmtl::mean(mhmtl::mul(y, y));
        },
        {x, w, b});
    EXPECT_LT(err, 1e-4);
}

TEST(Conv2d, StridedPaddedGradient) {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 5; ++rep) {
        auto x = Tensor<double>::uniform({1, 2, 7, 6}, -1, 1, rng, true);
        auto w = Tensor<double>::uniform({3, 2, 3, 3}, -0.5, 0.5, rng, true);
        auto b = Tensor<double>::uniform({3}, -0.5, 0.5, rng, true);
        const double err = testutil::gradcheck(
            [&] { return mhmtl::mean(mhmtl::mul(mhmtl::conv2d(x, w, b, 2, 1), mhmtl::conv2d(x, w, b, 2, 1))); },
            {x, w, b});
        EXPECT_LT(err, 1e-4);
    }
}

TEST(PoolAvgGlobal, ConstantPlane) {
    auto x = Tensor<double>::filled({1, 1, 4, 7}, 5.0);
    EXPECT_DOUBLE_EQ(mhmtl::pool_avg_global(x).item(), 5.0);
}

TEST(PoolAvgGlobal, ArithmeticMean) {
    auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(mhmtl::pool_avg_global(x).item(), 2.5);
}

TEST(PoolAvgGlobal, GradientDistributesEvenly) {
    auto x = Tensor<double>::from_data({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    auto y = mhmtl::sum(mhmtl::pool_avg_global(x));
    y.backward();
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(PoolAvgGlobal, FiniteDifference) {
    std::mt19937_64 rng(24);
    auto x = Tensor<double>::uniform({2, 3, 4, 4}, -1, 1, rng, true);
    const double err = testutil::gradcheck(
        [&] {
            auto y = mhmtl::pool_avg_global(x);
            return mhmtl::mean(mhmtl::mul(y, y));
        },
        {x});
    EXPECT_LT(err, 1e-4);
}

TEST(PoolMax2d, SimpleWindow) {
    auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(mhmtl::pool_max2d(x, 2, 2).item(), 4.0);
}

TEST(PoolMax2d, TieBreakFirstRowMajor) {
    auto x = Tensor<double>::filled({1, 1, 2, 2}, 3.0, true);
    auto y = mhmtl::pool_max2d(x, 2, 2);
    EXPECT_DOUBLE_EQ(y.item(), 3.0);
    mhmtl::sum(y).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
    EXPECT_DOUBLE_EQ(x.grad()[2], 0.0);
    EXPECT_DOUBLE_EQ(x.grad()[3], 0.0);
}

TEST(PoolMax2d, WindowExceedsExtentThrows) {
    auto x = Tensor<double>::zeros({1, 1, 2, 2});
    EXPECT_THROW(mhmtl::pool_max2d(x, 3, 1), mhmtl::ShapeError);
}

TEST(PoolMax2d, FiniteDifference) {
    std::mt19937_64 rng(25);
    for (int rep = 0; rep < 5; ++rep) {
        auto x = Tensor<double>::uniform({1, 2, 6, 6}, -1, 1, rng, true);
        const double err = testutil::gradcheck(
            [&] {
                auto y = mhmtl::pool_max2d(x, 2, 2);
                return mhmtl::mean(mhmtl::mul(y, y));
            },
            {x});
        EXPECT_LT(err, 1e-4);
    }
}

TEST(UpsampleNearest, FactorOneIsIdentity) {
    std::mt19937_64 rng(26);
    auto x = Tensor<double>::uniform({1, 2, 3, 3}, -1, 1, rng);
    EXPECT_EQ(mhmtl::upsample_nearest(x, 1).data(), x.data());
}

TEST(UpsampleNearest, ReplicationAndGradient) {
    auto x = Tensor<double>::from_data({1, 1, 1, 1}, {2.5}, true);
    auto y = mhmtl::upsample_nearest(x, 2);
    ASSERT_EQ(y.shape(), (mhmtl::Shape{1, 1, 2, 2}));
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 2.5);
    mhmtl::sum(y).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(UpsampleNearest, FiniteDifference) {
    std::mt19937_64 rng(27);
    auto x = Tensor<double>::uniform({1, 2, 3, 3}, -1, 1, rng, true);
    const double err = testutil::gradcheck(
        [&] {
            auto y = mhmtl::upsample_nearest(x, 2);
            return mhmtl::mean(mhmtl::mul(y, y));
        },
        {x});
    EXPECT_LT(err, 1e-4);
}
