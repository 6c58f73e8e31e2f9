#include "topofit/core.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace topofit;

TEST(Vec3, Arithmetic) {
  const Vec3 a{1, 2, 3}, b{4, -5, 6};
  EXPECT_EQ(a + b, Vec3(5, -3, 9));
  EXPECT_EQ(a - b, Vec3(-3, 7, -3));
  EXPECT_EQ(a * 2.0, Vec3(2, 4, 6));
  EXPECT_EQ(2.0 * a, Vec3(2, 4, 6));
  EXPECT_EQ(a / 2.0, Vec3(0.5, 1, 1.5));
  EXPECT_EQ(-a, Vec3(-1, -2, -3));
  Vec3 c = a;
  c += b;
  EXPECT_EQ(c, Vec3(5, -3, 9));
  c -= b;
  EXPECT_EQ(c, a);
  EXPECT_DOUBLE_EQ(a[0], 1);
  EXPECT_DOUBLE_EQ(a[2], 3);
}

TEST(Vec3, DotCrossNorm) {
  const Vec3 a{1, 2, 3}, b{4, -5, 6};
  EXPECT_DOUBLE_EQ(dot(a, b), 4 - 10 + 18);
  const Vec3 c = cross(a, b);
  EXPECT_EQ(c, Vec3(2 * 6 - 3 * (-5), 3 * 4 - 1 * 6, 1 * (-5) - 2 * 4));
  EXPECT_NEAR(dot(c, a), 0, 1e-12);
  EXPECT_NEAR(dot(c, b), 0, 1e-12);
  EXPECT_DOUBLE_EQ(norm2(a), 14);
  EXPECT_DOUBLE_EQ(norm(Vec3(3, 4, 0)), 5);
  EXPECT_NEAR(norm(normalized(a)), 1.0, 1e-15);
  EXPECT_THROW(normalized(Vec3{}), std::runtime_error);
  EXPECT_EQ(cwise_min(a, b), Vec3(1, -5, 3));
  EXPECT_EQ(cwise_max(a, b), Vec3(4, 2, 6));
  EXPECT_TRUE(is_finite(a));
  EXPECT_FALSE(is_finite(Vec3(1, std::numeric_limits<double>::quiet_NaN(), 0)));
  EXPECT_FALSE(is_finite(Vec3(std::numeric_limits<double>::infinity(), 0, 0)));
}

TEST(Mat3, MultiplyTransposeDet) {
  Mat3 a;
  a.m = {1, 2, 3, 4, 5, 6, 7, 8, 10};
  Mat3 b;
  b.m = {2, 0, 1, 1, 3, 0, 0, 1, 4};
  const Mat3 ab = a * b;
  // hand-computed row by row
  EXPECT_DOUBLE_EQ(ab(0, 0), 1 * 2 + 2 * 1 + 3 * 0);
  EXPECT_DOUBLE_EQ(ab(0, 1), 1 * 0 + 2 * 3 + 3 * 1);
  EXPECT_DOUBLE_EQ(ab(0, 2), 1 * 1 + 2 * 0 + 3 * 4);
  EXPECT_DOUBLE_EQ(ab(2, 2), 7 * 1 + 8 * 0 + 10 * 4);
  EXPECT_DOUBLE_EQ(a.det(), -3.0);  // det of {1..8,10} via cofactor expansion
  const Mat3 at = a.transposed();
  EXPECT_DOUBLE_EQ(at(0, 1), 4);
  EXPECT_DOUBLE_EQ(at(1, 2), 8);
  const Vec3 v = a * Vec3{1, 0, -1};
  EXPECT_EQ(v, Vec3(-2, -2, -3));
  const Mat3 id = Mat3::identity();
  EXPECT_DOUBLE_EQ(id.det(), 1.0);
  EXPECT_EQ(id * Vec3(3, 4, 5), Vec3(3, 4, 5));
}

TEST(Aabb, ExpandContainsDistance) {
  Aabb box;
  EXPECT_TRUE(box.empty());
  box.expand({1, 2, 3});
  box.expand({-1, 0, 5});
  EXPECT_FALSE(box.empty());
  EXPECT_EQ(box.lo, Vec3(-1, 0, 3));
  EXPECT_EQ(box.hi, Vec3(1, 2, 5));
  EXPECT_EQ(box.center(), Vec3(0, 1, 4));
  EXPECT_EQ(box.extent(), Vec3(2, 2, 2));
  EXPECT_NEAR(box.diagonal(), std::sqrt(12.0), 1e-15);
  EXPECT_TRUE(box.contains({0, 1, 4}));
  EXPECT_TRUE(box.contains({1, 2, 5}));
  EXPECT_FALSE(box.contains({1.0001, 1, 4}));
  EXPECT_DOUBLE_EQ(box.distance_sq({0, 1, 4}), 0.0);
  EXPECT_DOUBLE_EQ(box.distance_sq({3, 1, 4}), 4.0);
  EXPECT_DOUBLE_EQ(box.distance_sq({2, 3, 6}), 1 + 1 + 1);
  const Aabb grown = box.inflated(0.5);
  EXPECT_EQ(grown.lo, Vec3(-1.5, -0.5, 2.5));
  EXPECT_EQ(grown.hi, Vec3(1.5, 2.5, 5.5));
}

TEST(Checks, FailAndCheck) {
  EXPECT_THROW(fail("boom ", 42), std::runtime_error);
  try {
    check(false, "value was ", 7, " not ", 8);
    FAIL() << "check should have thrown";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("value was 7 not 8"), std::string::npos);
  }
  EXPECT_NO_THROW(check(true, "ok"));
  EXPECT_DOUBLE_EQ(sqr(-3.0), 9.0);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(123), b(123), c(124);
  bool all_equal = true, any_diff_seed = false;
  for (int i = 0; i < 1000; ++i) {
    const double va = a.uniform();
    const double vb = b.uniform();
    all_equal = all_equal && va == vb;
    any_diff_seed = any_diff_seed || va != c.uniform();
    EXPECT_GE(va, 0.0);
    EXPECT_LT(va, 1.0);
  }
  EXPECT_TRUE(all_equal);
  EXPECT_TRUE(any_diff_seed);

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double v = r.uniform(-2.0, 3.0);
    EXPECT_GE(v, -2.0);
    EXPECT_LT(v, 3.0);
    const int64_t k = r.uniform_int(5);
    EXPECT_GE(k, 0);
    EXPECT_LT(k, 5);
  }
}

TEST(Rng, NormalMoments) {
  Rng r(42);
  const int n = 20000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    sum += v;
    sum2 += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.03);
  EXPECT_NEAR(sum2 / n, 1.0, 0.05);
}

TEST(SeedStream, TagSeparation) {
  std::set<uint64_t> seen;
  for (uint64_t master : {0ull, 1ull, 99999ull}) {
    seen.insert(seed_stream(master, 1));
    seen.insert(seed_stream(master, 2));
    seen.insert(seed_stream(master, 1, 0));
    seen.insert(seed_stream(master, 1, 1));
    seen.insert(seed_stream(master, 1, 1, 1));
  }
  EXPECT_EQ(seen.size(), 15u);
  EXPECT_EQ(seed_stream(5, 1, 2, 3), seed_stream(5, 1, 2, 3));
  EXPECT_NE(seed_stream(5, 1, 2, 3), seed_stream(5, 1, 3, 2));
  EXPECT_NE(seed_stream(5, 1, 2, 3), seed_stream(6, 1, 2, 3));
}

TEST(SeedStream, SplitmixAdvancesState) {
  uint64_t s0 = 0, s1 = 0;
  const uint64_t a = splitmix64(s0);
  const uint64_t b = splitmix64(s1);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, 0u);
  EXPECT_NE(s0, 0u);  // state advanced
  EXPECT_NE(splitmix64(s0), a);
}

TEST(Ray3, At) {
  const Ray3 r{{1, 2, 3}, {0, 0, 2}};
  EXPECT_EQ(r.at(0.5), Vec3(1, 2, 4));
  EXPECT_EQ(r.at(0), r.origin);
}
