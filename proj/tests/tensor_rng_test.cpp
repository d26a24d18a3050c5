#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cpcssl/rng.hpp"
#include "cpcssl/tensor.hpp"

using namespace cpcssl;

TEST(Rng, MatchesReferenceSplitmix64) {
  // Reference stream of splitmix64 seeded with 0.
  RngState rng{0, 0};
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(rng.next_u64(), 0x06C45D188009454FULL);
}

TEST(Rng, CopiesReplay) {
  RngState a{42, 7};
  RngState b = a;
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_EQ(a, b);
}

TEST(Rng, ForkLeavesParentAlone) {
  RngState parent{9, 3};
  const RngState before = parent;
  RngState child = parent.fork("data");
  EXPECT_EQ(parent, before);
  EXPECT_NE(child.seed, parent.seed);
  EXPECT_EQ(child, parent.fork("data"));
  EXPECT_NE(parent.fork("data"), parent.fork("model"));
  EXPECT_NE(parent.fork(std::uint64_t{1}), parent.fork(std::uint64_t{2}));
}

TEST(Rng, ForkedStreamsDoNotCollide) {
  const RngState root{0, 0};
  RngState a = root.fork("train");
  RngState b = root.fork("test");
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    seen.insert(a.next_u64());
    seen.insert(b.next_u64());
  }
  EXPECT_EQ(seen.size(), 2000u);
}

TEST(Rng, UniformIsOpenAndCentred) {
  RngState rng{5, 0};
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Rng, UniformIndexCoversRange) {
  RngState rng{11, 0};
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(rng.uniform_index(7))];
  const double p = 1.0 / 7.0;
  for (int c : counts) EXPECT_NEAR(c, n * p, 5.0 * std::sqrt(n * p * (1 - p)));
  EXPECT_THROW(rng.uniform_index(0), Error);
}

TEST(Rng, NormalAndGumbelMoments) {
  RngState rng{3, 0};
  const Index n = 200000;
  const Tensor z = rng.normal_tensor({n});
  EXPECT_NEAR(z.vec().mean(), 0.0, 0.01);
  EXPECT_NEAR(z.vec().squaredNorm() / n, 1.0, 0.02);
  const Tensor g = rng.gumbel_tensor({n});
  EXPECT_NEAR(g.vec().mean(), 0.5772156649, 0.01);
  const double var = (g.vec().array() - g.vec().mean()).square().mean();
  EXPECT_NEAR(var, M_PI * M_PI / 6.0, 0.03);
}

TEST(Tensor, ShapesAndViews) {
  Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.shape(), (Shape{2, 3}));
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.mat()(1, 0), 4.0);
  EXPECT_EQ(t.mat(3, 2)(1, 1), 4.0);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_EQ(numel({2, 3, 4}), 24);
  EXPECT_EQ(to_string(Shape{2, 3}), "[2x3]");
}

TEST(Tensor, RejectsMismatchedBuffers) {
  EXPECT_THROW(Tensor(Shape{2, 2}, Eigen::VectorXd::Zero(3)), Error);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), Error);
  EXPECT_THROW(Tensor::vector({1, 2}).item(), Error);
  Tensor t(Shape{2, 3});
  try {
    t.mat(4, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
  }
}

TEST(Tensor, Reshape) {
  const Tensor t = Tensor::vector({1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.mat()(2, 1), 6.0);
  EXPECT_THROW(t.reshaped({4, 2}), Error);
}
