#include <gtest/gtest.h>

#include "mile/error.hpp"
#include "mile/ops.hpp"
#include "mile/tensor.hpp"

using namespace mile;

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
}

TEST(Tensor, CopiesAliasClonesDoNot) {
  Tensor a = Tensor::full({3}, 1.0);
  Tensor alias = a;
  Tensor copy = a.clone();
  alias.data()[0] = 7.0;
  EXPECT_EQ(a.data()[0], 7.0);
  EXPECT_EQ(copy.data()[0], 1.0);
}

TEST(Tensor, ItemNeedsOneElement) {
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor::zeros({2}).item(), DimensionError);
}

TEST(Graph, RecordsOnlyWhenActiveAndNeeded) {
  Tensor a = Tensor::full({2}, 1.0, true);
  Tensor b = Tensor::full({2}, 2.0);
  {
    Tensor c = ops::mul(a, b);  // no graph
    EXPECT_FALSE(c.requires_grad());
  }
  Graph g;
  Graph::Scope scope(g);
  Tensor c = ops::mul(b, b);
  EXPECT_EQ(g.size(), 0u);
  Tensor d = ops::sum(ops::mul(a, b));
  EXPECT_EQ(g.size(), 2u);
  g.backward(d);
  EXPECT_EQ(a.grad()[0], 2.0);
  EXPECT_EQ(a.grad()[1], 2.0);
}

TEST(Graph, BackwardNeedsScalar) {
  Tensor a = Tensor::full({2}, 1.0, true);
  Graph g;
  Graph::Scope scope(g);
  Tensor b = ops::scale(a, 3.0);
  EXPECT_THROW(g.backward(b), ContractError);
}

TEST(Graph, GradsAccumulateUntilZeroed) {
  Tensor a = Tensor::full({1}, 3.0, true);
  for (int i = 0; i < 2; ++i) {
    Graph g;
    Graph::Scope scope(g);
    g.backward(ops::sum(ops::mul(a, a)));
  }
  EXPECT_DOUBLE_EQ(a.grad()[0], 12.0);
  a.zero_grad();
  EXPECT_EQ(a.grad()[0], 0.0);
}

TEST(Graph, UnreachableBranchesDoNotContribute) {
  Tensor a = Tensor::full({1}, 2.0, true);
  Tensor b = Tensor::full({1}, 5.0, true);
  Graph g;
  Graph::Scope scope(g);
  Tensor unused = ops::mul(b, b);
  Tensor loss = ops::sum(ops::scale(a, 4.0));
  g.backward(loss);
  EXPECT_EQ(a.grad()[0], 4.0);
  EXPECT_FALSE(b.has_grad());
}

TEST(Graph, NoGradScopeSuspendsRecording) {
  Tensor a = Tensor::full({2}, 1.0, true);
  Graph g;
  Graph::Scope scope(g);
  {
    NoGradScope off;
    EXPECT_EQ(Graph::active(), nullptr);
    Tensor b = ops::scale(a, 2.0);
    EXPECT_FALSE(b.requires_grad());
  }
  EXPECT_EQ(Graph::active(), &g);
  EXPECT_EQ(g.size(), 0u);
}

TEST(Graph, SharedInputGetsBothContributions) {
  // d/dx (x*x + x) = 2x + 1
  Tensor x = Tensor::full({1}, 1.5, true);
  Graph g;
  Graph::Scope scope(g);
  g.backward(ops::sum(ops::add(ops::mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}
