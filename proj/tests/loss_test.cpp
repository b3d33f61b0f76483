#include <gtest/gtest.h>

#include <cmath>

#include "reslt/data.hpp"
#include "reslt/errors.hpp"
#include "reslt/loss.hpp"
#include "reslt/model.hpp"
#include "reslt/rng.hpp"

using namespace reslt;

namespace {

Tensor2D random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor2D t(r, c);
  for (double& v : t.values()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

// Plain CE in long double over an explicitly filtered sub-batch.
double subset_ce(const Tensor2D& logits, const std::vector<Label>& y, const SampleMask& keep) {
  long double total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!keep[i]) continue;
    long double z = 0;
    for (double v : logits.row(i)) z += std::exp(static_cast<long double>(v));
    total += std::log(z) - logits(i, y[i]);
    ++n;
  }
  return n ? static_cast<double>(total / n) : 0.0;
}

Tensor2D filter_rows(const Tensor2D& t, const SampleMask& keep) {
  std::vector<double> v;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    if (!keep[i]) continue;
    v.insert(v.end(), t.row(i).begin(), t.row(i).end());
    ++rows;
  }
  return Tensor2D(rows, t.cols(), std::move(v));
}

struct Batch {
  std::vector<Variable> logits;
  std::vector<Tensor2D> values;
  std::vector<Label> y;
  std::vector<SampleMask> masks;
};

Batch random_batch(std::uint64_t seed, std::size_t n = 12, std::size_t k = 9) {
  Rng rng(seed);
  Batch b;
  for (int g = 0; g < 3; ++g) {
    b.values.push_back(random_tensor(n, k, rng, 3.0));
    b.logits.push_back(Variable::constant(b.values.back()));
  }
  b.y.resize(n);
  for (auto& v : b.y) v = static_cast<Label>(rng.next_u64() % k);
  b.masks = nested_sample_masks(b.y, GroupAssignment::from_starts(k, {0, k / 3, 2 * k / 3}));
  return b;
}

}  // namespace

TEST(FusionLoss, ZeroResidualsEqualPlainCe) {
  Rng rng(1);
  const Tensor2D main = random_tensor(6, 5, rng, 2.0);
  const std::vector<Variable> logits{Variable::constant(main), Variable::constant(Tensor2D(6, 5)),
                                     Variable::constant(Tensor2D(6, 5))};
  const std::vector<Label> y{0, 4, 2, 2, 1, 3};
  EXPECT_EQ(fusion_loss(logits, y).item(), softmax_cross_entropy(Variable::constant(main), y).item());
}

TEST(FusionLoss, MatchesSumThenSoftmaxOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Batch b = random_batch(seed);
    Tensor2D sum(b.values[0].rows(), b.values[0].cols());
    for (const auto& v : b.values)
      for (std::size_t i = 0; i < v.size(); ++i) sum.values()[i] += v.values()[i];
    EXPECT_NEAR(fusion_loss(b.logits, b.y).item(), subset_ce(sum, b.y, SampleMask(b.y.size(), true)), 1e-10);
  }
}

TEST(BranchLoss, MatchesFilterThenCeOracle) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const Batch b = random_batch(seed);
    const auto terms = branch_loss(b.logits, b.y, b.masks);
    ASSERT_EQ(terms.size(), 3u);
    for (std::size_t g = 0; g < 3; ++g) {
      EXPECT_NEAR(terms[g].item(), subset_ce(b.values[g], b.y, b.masks[g]), 1e-10) << seed << "/" << g;
    }
  }
}

TEST(BranchLoss, MaskedEqualsPhysicallyFiltered) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Batch b = random_batch(seed + 100);
    const auto terms = branch_loss(b.logits, b.y, b.masks);
    for (std::size_t g = 0; g < 3; ++g) {
      std::vector<Label> sub;
      for (std::size_t i = 0; i < b.y.size(); ++i)
        if (b.masks[g][i]) sub.push_back(b.y[i]);
      const double filtered =
          sub.empty() ? 0.0
                      : softmax_cross_entropy(Variable::constant(filter_rows(b.values[g], b.masks[g])), sub).item();
      EXPECT_NEAR(terms[g].item(), filtered, 1e-12);
    }
  }
}

TEST(BranchLoss, SingleGroupIsPlainCe) {
  const Batch b = random_batch(3);
  const std::vector<Variable> one{b.logits[0]};
  const auto masks = nested_sample_masks(b.y, GroupAssignment::single(9));
  EXPECT_EQ(branch_loss(one, b.y, masks)[0].item(), softmax_cross_entropy(b.logits[0], b.y).item());
}

TEST(BranchLoss, NoTailSamplesGivesZeroTailTerm) {
  Batch b = random_batch(4);
  for (auto& v : b.y) v %= 6;
  b.masks = nested_sample_masks(b.y, GroupAssignment::from_starts(9, {0, 3, 6}));
  const auto o = total_loss(b.logits, b.y, b.masks, 0.5);
  EXPECT_EQ(o.breakdown.branch_terms[2], 0.0);
  EXPECT_EQ(o.breakdown.masked_in_counts[2], 0u);
}

TEST(TotalLoss, AlphaEndpointsAreExact) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Batch b = random_batch(seed);
    const auto zero = total_loss(b.logits, b.y, b.masks, 0.0);
    EXPECT_EQ(zero.breakdown.total, zero.breakdown.fusion);
    EXPECT_EQ(zero.total.item(), fusion_loss(b.logits, b.y).item());
    const auto one = total_loss(b.logits, b.y, b.masks, 1.0);
    EXPECT_EQ(one.breakdown.total, one.breakdown.branch_sum());
  }
}

TEST(TotalLoss, AffineInAlpha) {
  const Batch b = random_batch(5);
  const double f = total_loss(b.logits, b.y, b.masks, 0.0).total.item();
  const double s = total_loss(b.logits, b.y, b.masks, 1.0).total.item();
  for (double a : {0.0, 0.25, 0.5, 0.75, 1.0, 0.995}) {
    EXPECT_NEAR(total_loss(b.logits, b.y, b.masks, a).total.item(), (1 - a) * f + a * s, 1e-12) << a;
  }
}

TEST(TotalLoss, BreakdownMatchesHandCombination) {
  const Batch b = random_batch(6);
  const auto o = total_loss(b.logits, b.y, b.masks, 0.995);
  double oracle_branch = 0;
  for (std::size_t g = 0; g < 3; ++g) oracle_branch += subset_ce(b.values[g], b.y, b.masks[g]);
  Tensor2D sum(b.values[0].rows(), b.values[0].cols());
  for (const auto& v : b.values)
    for (std::size_t i = 0; i < v.size(); ++i) sum.values()[i] += v.values()[i];
  const double oracle_fusion = subset_ce(sum, b.y, SampleMask(b.y.size(), true));
  EXPECT_NEAR(o.total.item(), 0.005 * oracle_fusion + 0.995 * oracle_branch, 1e-12);
  EXPECT_NEAR(o.breakdown.total, (1 - 0.995) * o.breakdown.fusion + 0.995 * o.breakdown.branch_sum(), 1e-12);
  EXPECT_EQ(o.breakdown.total, o.total.item());
}

TEST(TotalLoss, RejectsAlphaOutsideUnitInterval) {
  const Batch b = random_batch(7);
  EXPECT_THROW(total_loss(b.logits, b.y, b.masks, 1.2), ParameterError);
  EXPECT_THROW(total_loss(b.logits, b.y, b.masks, -0.1), ParameterError);
}

TEST(TotalLoss, HeadOnlyBatchGradientRoutesThroughShortcut) {
  const ModelDims dims{4, {6}, 5, 9};
  Model m = init_model(dims, 3, 8);
  Rng rng(9);
  const Variable x = Variable::constant(random_tensor(8, 4, rng, 2.0));
  const std::vector<Label> y{0, 1, 2, 0, 1, 2, 0, 1};
  const auto groups = GroupAssignment::from_starts(9, {0, 3, 6});
  const auto masks = nested_sample_masks(y, groups);

  auto residual_grads = [&](double alpha) {
    for (auto* p : m.parameters()) p->var.tensor().drop_grad();
    auto o = total_loss(forward(m, x, true), y, masks, alpha);
    o.total.backward();
    double branch_abs = 0, residual_abs = 0;
    for (std::size_t g = 1; g < 3; ++g) {
      for (double v : m.branches[g].weight.tensor().grad()) residual_abs += std::abs(v);
      for (double v : m.branches[g].bias.tensor().grad()) residual_abs += std::abs(v);
    }
    for (double v : m.branches[0].weight.tensor().grad()) branch_abs += std::abs(v);
    return std::pair{residual_abs, branch_abs};
  };
  // L_branch alone: residual transforms see exactly zero gradient.
  const auto [branch_only, main_branch] = residual_grads(1.0);
  EXPECT_EQ(branch_only, 0.0);
  EXPECT_GT(main_branch, 0.0);
  // L_fusion alone reaches them through the summed logits.
  EXPECT_GT(residual_grads(0.0).first, 0.0);
}

TEST(BaselineLoss, SumsDisjointTerms) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Batch b = random_batch(seed);
    const auto masks = disjoint_sample_masks(b.y, GroupAssignment::from_starts(9, {0, 3, 6}));
    const auto o = baseline_loss(b.logits, b.y, masks);
    double oracle = 0;
    for (std::size_t g = 0; g < 3; ++g) oracle += subset_ce(b.values[g], b.y, masks[g]);
    EXPECT_NEAR(o.total.item(), oracle, 1e-10);
  }
}

TEST(BaselineLoss, SingleGroupBatchActivatesOneTerm) {
  Batch b = random_batch(11);
  for (auto& v : b.y) v = 3 + v % 3;
  const auto masks = disjoint_sample_masks(b.y, GroupAssignment::from_starts(9, {0, 3, 6}));
  const auto o = baseline_loss(b.logits, b.y, masks);
  EXPECT_EQ(o.breakdown.branch_terms[0], 0.0);
  EXPECT_GT(o.breakdown.branch_terms[1], 0.0);
  EXPECT_EQ(o.breakdown.branch_terms[2], 0.0);
}

TEST(BaselineLoss, SingleGroupIsPlainCe) {
  const Batch b = random_batch(12);
  const std::vector<Variable> one{b.logits[0]};
  const auto masks = disjoint_sample_masks(b.y, GroupAssignment::single(9));
  EXPECT_EQ(baseline_loss(one, b.y, masks).total.item(), softmax_cross_entropy(b.logits[0], b.y).item());
}

TEST(BaselineLoss, RejectsOverlappingMasks) {
  const Batch b = random_batch(13);
  EXPECT_THROW(baseline_loss(b.logits, b.y, b.masks), ParameterError);
}
