#include <gtest/gtest.h>

#include <set>

#include <qdport/errors.hpp>
#include <qdport/rng.hpp>
#include <qdport/tensor.hpp>

using namespace qdport;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamSeedsDifferByName) {
    std::set<std::uint64_t> seeds;
    for (const char* name : {"noise", "window", "corruption", "generator.init", "eval.noise"})
        seeds.insert(stream_seed(7, name));
    EXPECT_EQ(seeds.size(), 5u);
    EXPECT_NE(stream_seed(7, "noise"), stream_seed(8, "noise"));
    EXPECT_EQ(stream_seed(7, "noise"), stream_seed(7, "noise"));
}

TEST(Rng, UniformRanges) {
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const auto k = r.uniform_int(3, 9);
        ASSERT_GE(k, 3u);
        ASSERT_LE(k, 9u);
    }
    EXPECT_EQ(r.uniform_int(5, 5), 5u);
    EXPECT_THROW(r.uniform_int(6, 5), ConfigError);
}

TEST(Rng, UniformIntHitsEveryValue) {
    Rng r(2);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) seen.insert(r.uniform_int(0, 9));
    EXPECT_EQ(seen.size(), 10u);
}

TEST(Rng, NormalMoments) {
    Rng r(3);
    const int n = 200000;
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        ss += x * x;
    }
    const double mean = s / n, var = ss / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Rng, SerializeRoundTripContinuesStream) {
    Rng a(99);
    for (int i = 0; i < 37; ++i) a.normal();
    Rng b;
    b.deserialize(a.serialize());
    EXPECT_TRUE(a == b);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, DeserializeRejectsGarbage) {
    Rng r;
    EXPECT_THROW(r.deserialize("not a state"), DataError);
}

TEST(Tensor, ShapeValidation) {
    EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), DataError);
    Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    EXPECT_EQ(t(1, 2), 6.0);
    EXPECT_EQ(t.row(1)[0], 4.0);
    EXPECT_EQ(shape_str(t.shape), "[2x3]");
}

TEST(Tensor, ScalarsAndVectors) {
    const Tensor s = Tensor::scalar(2.5);
    EXPECT_EQ(s.rank(), 0u);
    EXPECT_EQ(s.size(), 1u);
    const Tensor v = Tensor::vector({1, 2, 3});
    EXPECT_EQ(v.rows(), 1u);
    EXPECT_EQ(v.cols(), 3u);
    Tensor bad = Tensor::matrix(1, 2);
    bad[1] = std::nan("");
    EXPECT_FALSE(bad.all_finite());
}
