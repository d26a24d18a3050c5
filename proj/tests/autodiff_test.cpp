#include <gtest/gtest.h>

#include <cmath>

#include "cpcssl/grad_check.hpp"
#include "cpcssl/mac_counter.hpp"
#include "cpcssl/ops.hpp"
#include "cpcssl/parameters.hpp"

using namespace cpcssl;
using namespace cpcssl::ad;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  RngState rng{seed, 0};
  return rng.normal_tensor(std::move(shape));
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Var(Graph&, const std::vector<Var>&)> build;
};

// A fixed random projection turns any output into a scalar so every output
// coordinate carries gradient.
Var project(Graph& g, Var out) {
  RngState rng{99, 0};
  return dot(reshape(out, {out.size()}), g.constant(rng.normal_tensor({out.size()})));
}

const std::vector<OpCase>& op_cases() {
  static const std::vector<OpCase> cases{
      {"matmul", {{3, 4}, {4, 2}}, [](Graph&, const auto& v) { return matmul(v[0], v[1]); }},
      {"matvec", {{3, 4}, {4}}, [](Graph&, const auto& v) { return matvec(v[0], v[1]); }},
      {"add_sub_mul", {{5}, {5}},
       [](Graph&, const auto& v) { return mul(add(v[0], v[1]), sub(v[0], scale(v[1], 2.0))); }},
      {"exp", {{4}}, [](Graph&, const auto& v) { return ad::exp(scale(v[0], 0.5)); }},
      {"square", {{4}}, [](Graph&, const auto& v) { return square(v[0]); }},
      {"sigmoid", {{4}}, [](Graph&, const auto& v) { return sigmoid(v[0]); }},
      {"tanh", {{4}}, [](Graph&, const auto& v) { return ad::tanh(v[0]); }},
      {"relu", {{6}}, [](Graph&, const auto& v) { return relu(add_scalar(v[0], 0.05)); }},
      {"clamp", {{6}}, [](Graph&, const auto& v) { return clamp(v[0], -0.7, 0.9); }},
      {"sum_mean", {{2, 3}}, [](Graph&, const auto& v) { return add(sum(v[0]), scale(mean(square(v[0])), 3.0)); }},
      {"pick", {{5}}, [](Graph&, const auto& v) { return pick(square(v[0]), 3); }},
      {"concat", {{2}, {3}}, [](Graph&, const auto& v) { return concat({v[0], square(v[1])}); }},
      {"row_stack", {{3, 4}},
       [](Graph&, const auto& v) { return stack_rows({row(v[0], 2), square(row(v[0], 0))}); }},
      {"gather_rows", {{3, 2}, {2, 2}},
       [](Graph&, const auto& v) {
         const std::vector<std::pair<int, Index>> refs{{1, 0}, {0, 2}, {0, 2}, {1, 1}};
         return gather_rows({v[0], v[1]}, refs);
       }},
      {"mean_rows", {{4, 3}}, [](Graph&, const auto& v) { return mean_rows(v[0]); }},
      {"log_softmax", {{6}}, [](Graph&, const auto& v) { return log_softmax(v[0]); }},
      {"softmax", {{6}}, [](Graph&, const auto& v) { return softmax(v[0]); }},
      {"conv2d", {{2, 6, 5}, {3, 2, 3, 2}, {3}},
       [](Graph&, const auto& v) { return conv2d(v[0], v[1], v[2], 1); }},
      {"conv2d_stride", {{1, 7, 7}, {2, 1, 3, 3}},
       [](Graph&, const auto& v) { return conv2d(v[0], v[1], Var{}, 2); }},
      {"max_positions", {{3, 2, 4}}, [](Graph&, const auto& v) { return max_positions(v[0]); }},
      {"embed", {{6, 3}},
       [](Graph&, const auto& v) {
         const std::vector<Index> ids{1, 4, 1, 0};
         return embed(v[0], ids);
       }},
      {"gru_cell", {{3}, {2}, {3, 5}, {3}, {3, 5}, {3}, {3, 5}, {3}},
       [](Graph&, const auto& v) { return gru_cell(v[0], v[1], GruWeights{v[2], v[3], v[4], v[5], v[6], v[7]}); }},
  };
  return cases;
}

}  // namespace

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const OpCase& c = op_cases()[GetParam()];
  ParameterStore store;
  std::vector<ParamId> ids;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    ids.push_back(store.add("p" + std::to_string(i), random_tensor(c.shapes[i], 17 + i)));
  }
  const auto fn = [&](Graph& g) {
    std::vector<Var> vars;
    for (ParamId id : ids) vars.push_back(g(id));
    return project(g, c.build(g, vars));
  };
  const GradCheckResult r = grad_check(fn, store);
  EXPECT_LT(r.max_rel_error, 1e-6) << c.name << " worst " << r.worst_param << "[" << r.worst_index
                                   << "] ad " << r.worst_autodiff << " fd " << r.worst_finite_diff;
}

INSTANTIATE_TEST_SUITE_P(Ops, OpGradient, ::testing::Range<std::size_t>(0, op_cases().size()),
                         [](const auto& info) { return std::string(op_cases()[info.param].name); });

TEST(Autodiff, HandComputedValues) {
  Tape tape;
  Var a = tape.parameter(ParamId{0}, Tensor::matrix({{1, 2}, {3, 4}}));
  Var x = tape.parameter(ParamId{1}, Tensor::vector({5, 6}));
  Var y = matvec(a, x);  // (17, 39)
  EXPECT_EQ(y.value()[0], 17.0);
  EXPECT_EQ(y.value()[1], 39.0);
  const GradientMap g = backward(tape, sum(y));
  // d/dA sum(Ax) = 1 x^T, d/dx = A^T 1.
  EXPECT_EQ(g.at(ParamId{0}).mat()(1, 0), 5.0);
  EXPECT_EQ(g.at(ParamId{0}).mat()(0, 1), 6.0);
  EXPECT_EQ(g.at(ParamId{1})[0], 4.0);
  EXPECT_EQ(g.at(ParamId{1})[1], 6.0);
}

TEST(Autodiff, LogSoftmaxIsStable) {
  Tape tape;
  Var l = log_softmax(tape.constant(Tensor::vector({1000.0, 0.0, -1000.0})));
  EXPECT_TRUE(l.value().all_finite());
  EXPECT_NEAR(l.value()[0], 0.0, 1e-12);
  EXPECT_NEAR(l.value()[1], -1000.0, 1e-9);
  Var s = softmax(tape.constant(Tensor::vector({0.0, std::log(3.0)})));
  EXPECT_NEAR(s.value()[1], 0.75, 1e-12);
}

TEST(Autodiff, ConvolutionOracle) {
  Tape tape;
  // 1x3x3 input, one 2x2 kernel of ones: each output sums a 2x2 window.
  Tensor in(Shape{1, 3, 3});
  for (Index i = 0; i < 9; ++i) in[i] = static_cast<double>(i);
  Tensor k(Shape{1, 1, 2, 2});
  k.vec().setOnes();
  Var out = conv2d(tape.constant(in), tape.constant(k), Var{}, 1);
  EXPECT_EQ(out.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(out.value()[0], 0 + 1 + 3 + 4);
  EXPECT_EQ(out.value()[3], 4 + 5 + 7 + 8);
  Var m = max_positions(out);
  EXPECT_EQ(m.value()[0], 24.0);
}

TEST(Autodiff, UnusedParametersGetZeroGradients) {
  Tape tape;
  Var a = tape.parameter(ParamId{0}, Tensor::vector({1, 2}));
  tape.parameter(ParamId{1}, Tensor::vector({3, 4, 5}));
  const GradientMap g = backward(tape, sum(a));
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g.at(ParamId{1}).vec().squaredNorm(), 0.0);
}

TEST(Autodiff, GradientsAccumulateOverReuse) {
  Tape tape;
  Var a = tape.parameter(ParamId{0}, Tensor::vector({3}));
  const GradientMap g = backward(tape, sum(mul(a, a)) + sum(a));
  EXPECT_EQ(g.at(ParamId{0})[0], 7.0);
}

TEST(Autodiff, ShapeErrorsCarryCode) {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2, 3}));
  Var b = tape.constant(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
  }
  EXPECT_THROW(add(a, tape.constant(Tensor(Shape{3}))), Error);
}

TEST(MacCounting, MatmulFamilyOnly) {
  MacTally tally;
  {
    MacRecording rec(tally);
    Tape tape;
    Var a = tape.constant(Tensor(Shape{3, 4}));
    Var b = tape.constant(Tensor(Shape{4, 5}));
    {
      MacComponent c("enc");
      matmul(a, b);  // 60
    }
    {
      MacComponent c("ag");
      matvec(a, tape.constant(Tensor(Shape{4})));  // 12
      dot(row(a, 0), row(a, 1));                   // 4
    }
    add(a, a);
    ad::exp(a);
    {
      MacComponent c("enc");
      conv2d(tape.constant(Tensor(Shape{2, 5, 5})), tape.constant(Tensor(Shape{3, 2, 3, 3})), Var{}, 1);
    }
  }
  EXPECT_EQ(tally["enc"], 60u + 3u * 18u * 9u);
  EXPECT_EQ(tally["ag"], 16u);
  EXPECT_EQ(tally.total(), 60u + 486u + 16u);
}

TEST(MacCounting, InactiveWithoutRecording) {
  MacTally tally;
  {
    MacRecording rec(tally);
  }
  Tape tape;
  matmul(tape.constant(Tensor(Shape{2, 2})), tape.constant(Tensor(Shape{2, 2})));
  EXPECT_EQ(tally.total(), 0u);
}
