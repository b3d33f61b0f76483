#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "reslt/digest.hpp"
#include "reslt/errors.hpp"
#include "reslt/model.hpp"
#include "reslt/rng.hpp"

using namespace reslt;
namespace fs = std::filesystem;

namespace {

const ModelDims kDims{5, {7}, 6, 4};

Tensor2D random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor2D t(r, c);
  for (double& v : t.values()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

void zero_branch(Model& m, std::size_t g) {
  for (double& v : m.branches[g].weight.tensor().values()) v = 0.0;
  for (double& v : m.branches[g].bias.tensor().values()) v = 0.0;
}

}  // namespace

TEST(Backbone, IdentityLayerPassesNonNegativeInput) {
  Model m = init_model({3, {}, 3, 2}, 1, 0);
  m.backbone[0].weight.tensor() = Tensor2D::identity(3);
  m.backbone[0].bias.tensor() = Tensor2D(1, 3);
  const Tensor2D x(2, 3, {0.0, 1.5, 2.0, 3.0, 0.25, 9.0});
  EXPECT_EQ(backbone_forward(m, Variable::constant(x)).value(), x);
}

TEST(Backbone, ShapeErrorOnWrongInputWidth) {
  const Model m = init_model(kDims, 3, 1);
  EXPECT_THROW(backbone_forward(m, Variable::constant(Tensor2D(2, 4))), ShapeError);
}

TEST(Head, AllZeroBranchesGiveZeroLogits) {
  Model m = init_model(kDims, 3, 2);
  for (std::size_t g = 0; g < 3; ++g) zero_branch(m, g);
  Rng rng(1);
  for (const auto& l : forward(m, Variable::constant(random_tensor(3, 5, rng)), true)) {
    EXPECT_EQ(l.value(), Tensor2D(3, 4));
  }
}

TEST(Head, SingleBranchIsLinearClassifierOnTransform) {
  const Model m = init_model(kDims, 1, 3);
  Rng rng(2);
  const Tensor2D x = random_tensor(4, 5, rng);
  const auto logits = branch_logits(m, x, true);
  ASSERT_EQ(logits.size(), 1u);
  Tensor2D a(4, 7);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      double s = m.backbone[0].bias.tensor()(0, j);
      for (std::size_t k = 0; k < 5; ++k) s += x(i, k) * m.backbone[0].weight.tensor()(j, k);
      a(i, j) = std::max(0.0, s);
    }
  auto dense = [](const Tensor2D& in, const LinearLayer& l) {
    Tensor2D out(in.rows(), l.weight.tensor().rows());
    for (std::size_t i = 0; i < in.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) {
        double s = l.bias.tensor()(0, j);
        for (std::size_t k = 0; k < in.cols(); ++k) s += in(i, k) * l.weight.tensor()(j, k);
        out(i, j) = std::max(0.0, s);
      }
    return out;
  };
  const Tensor2D f = dense(a, m.backbone[1]);
  const Tensor2D b = dense(f, m.branches[0]);
  const Tensor2D want = matmul_nt(b, m.classifier.tensor());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(logits[0].values()[i], want.values()[i], 1e-12);
}

TEST(Head, WithoutSpecializationOutputsAreBitIdentical) {
  const Model m = init_model(kDims, 3, 4);
  Rng rng(3);
  const auto logits = branch_logits(m, random_tensor(5, 5, rng), false);
  ASSERT_EQ(logits.size(), 3u);
  EXPECT_EQ(logits[0], logits[1]);
  EXPECT_EQ(logits[0], logits[2]);
}

TEST(Head, SharedClassifierTouchesEveryBranch) {
  Model m = init_model(kDims, 3, 5);
  Rng rng(4);
  const Tensor2D x = random_tensor(3, 5, rng, 3.0);
  const auto before = branch_logits(m, x, true);
  Model w = m;
  for (double& v : w.classifier.tensor().values()) v += 0.1;
  const auto after_w = branch_logits(w, x, true);
  for (std::size_t g = 0; g < 3; ++g) EXPECT_NE(after_w[g], before[g]) << g;

  Model b = m;
  for (double& v : b.branches[1].bias.tensor().values()) v += 0.5;
  const auto after_b = branch_logits(b, x, true);
  EXPECT_EQ(after_b[0], before[0]);
  EXPECT_NE(after_b[1], before[1]);
  EXPECT_EQ(after_b[2], before[2]);
}

TEST(Fuse, ZeroResidualsLeaveMainBranch) {
  Model m = init_model(kDims, 3, 6);
  zero_branch(m, 1);
  zero_branch(m, 2);
  Rng rng(5);
  const Tensor2D x = random_tensor(6, 5, rng, 2.0);
  const auto logits = branch_logits(m, x, true);
  EXPECT_EQ(fuse(logits, FusionRule::residual_sum), logits[0]);
  EXPECT_EQ(predict(m, x, variant_preset("reslt")), predict(m, x, variant_preset("no_shortcut")));
}

TEST(Fuse, SoftmaxSumRowsSumToBranchCount) {
  Rng rng(6);
  const std::vector<Tensor2D> logits{random_tensor(4, 5, rng, 3), random_tensor(4, 5, rng, 3),
                                     random_tensor(4, 5, rng, 3)};
  const Tensor2D f = fuse(logits, FusionRule::softmax_sum);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (double v : f.row(i)) s += v;
    EXPECT_NEAR(s, 3.0, 1e-12);
  }
}

TEST(Fuse, ElementwiseMaxMatchesScan) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::vector<Tensor2D> logits{random_tensor(3, 4, rng), random_tensor(3, 4, rng),
                                       random_tensor(3, 4, rng)};
    const Tensor2D f = fuse(logits, FusionRule::elementwise_max);
    for (std::size_t i = 0; i < f.size(); ++i) {
      double best = logits[0].values()[i];
      for (const auto& l : logits)
        if (l.values()[i] > best) best = l.values()[i];
      EXPECT_EQ(f.values()[i], best);
    }
  }
}

TEST(Fuse, LogitSumIsElementwiseSum) {
  const std::vector<Tensor2D> logits{Tensor2D(1, 2, {1, 2}), Tensor2D(1, 2, {10, 20})};
  EXPECT_EQ(fuse(logits, FusionRule::logit_sum), Tensor2D(1, 2, {11, 22}));
  EXPECT_EQ(fuse(logits, FusionRule::residual_sum), Tensor2D(1, 2, {11, 22}));
}

TEST(Fuse, ShapeMismatchThrows) {
  const std::vector<Tensor2D> logits{Tensor2D(1, 2), Tensor2D(2, 2)};
  EXPECT_THROW(fuse(logits, FusionRule::logit_sum), ShapeError);
}

TEST(Predict, ArgmaxAndTieRule) {
  EXPECT_EQ(argmax_rows(Tensor2D(1, 3, {0.1, 0.9, 0.2})), std::vector<Label>{1});
  EXPECT_EQ(argmax_rows(Tensor2D(1, 3, {1, 1, 0})), std::vector<Label>{0});
}

TEST(Predict, InvariantToSharedRowOffset) {
  Rng rng(7);
  std::vector<Tensor2D> logits{random_tensor(5, 4, rng), random_tensor(5, 4, rng)};
  const auto before = argmax_rows(fuse(logits, FusionRule::residual_sum));
  for (auto& l : logits)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t k = 0; k < 4; ++k) l(i, k) += 3.0 * i;
  EXPECT_EQ(argmax_rows(fuse(logits, FusionRule::residual_sum)), before);
}

TEST(Predict, NoShortcutUsesMainBranch) {
  const std::vector<Tensor2D> logits{Tensor2D(1, 2, {1, 0}), Tensor2D(1, 2, {0, 5})};
  EXPECT_EQ(argmax_rows(decision_scores(logits, variant_preset("no_shortcut"))), std::vector<Label>{0});
  EXPECT_EQ(argmax_rows(decision_scores(logits, variant_preset("reslt"))), std::vector<Label>{1});
}

TEST(Init, DeterministicAndBounded) {
  const Model a = init_model(kDims, 3, 11), b = init_model(kDims, 3, 11), c = init_model(kDims, 3, 12);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->tensor(), pb[i]->tensor());
    any_diff |= !(pa[i]->tensor() == pc[i]->tensor());
  }
  EXPECT_TRUE(any_diff);
  for (const auto* p : pa) {
    // bias fan-in is the weight's input width
    const std::size_t fan_in = p->name.ends_with(".bias") ? 0 : p->tensor().cols();
    if (fan_in == 0) continue;
    for (double v : p->tensor().values()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(fan_in));
  }
}

TEST(Init, BranchesDiffer) {
  const Model m = init_model(kDims, 3, 13);
  EXPECT_NE(m.branches[0].weight.tensor(), m.branches[1].weight.tensor());
  EXPECT_NE(m.branches[1].weight.tensor(), m.branches[2].weight.tensor());
}

TEST(Init, ParameterOrderAndNames) {
  const Model m = init_model(kDims, 2, 14);
  std::vector<std::string> names;
  for (const auto* p : m.parameters()) names.push_back(p->name);
  EXPECT_EQ(names, (std::vector<std::string>{"backbone.0.weight", "backbone.0.bias", "backbone.1.weight",
                                             "backbone.1.bias", "branch.0.weight", "branch.0.bias",
                                             "branch.1.weight", "branch.1.bias", "classifier.weight"}));
  EXPECT_EQ(m.classifier.tensor().rows(), 4u);
  EXPECT_EQ(m.classifier.tensor().cols(), 6u);
}

TEST(Variants, PresetsAndBranchCounts) {
  EXPECT_TRUE(variant_preset("reslt").is_reslt());
  EXPECT_EQ(variant_names().size(), 8u);
  EXPECT_EQ(ablation_variant_names(),
            (std::vector<std::string>{"reslt", "no_specialization", "no_shortcut", "baseline1", "baseline2",
                                      "baseline3", "ce"}));
  const auto b2 = variant_preset("baseline2");
  EXPECT_EQ(b2.assignment, AssignmentScheme::disjoint);
  EXPECT_EQ(b2.fusion, FusionRule::logit_sum);
  EXPECT_EQ(variant_preset("baseline1").fusion, FusionRule::elementwise_max);
  EXPECT_EQ(variant_preset("baseline3").fusion, FusionRule::softmax_sum);
  EXPECT_EQ(branch_count(variant_preset("ce"), 3), 1u);
  EXPECT_EQ(branch_count(variant_preset("weak_reslt"), 3), 4u);
  EXPECT_EQ(branch_count(variant_preset("reslt"), 4), 4u);
  EXPECT_THROW(variant_preset("nope"), ParameterError);
}

TEST(Checkpoint, RoundTripIsLossless) {
  const Model m = init_model(kDims, 3, 15, {true, false});
  const auto bytes = encode_checkpoint(m);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RLTM");
  const Model back = decode_checkpoint(bytes);
  EXPECT_EQ(back.dims, m.dims);
  ASSERT_TRUE(back.classifier_bias.has_value());
  const auto pa = m.parameters(), pb = back.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->tensor(), pb[i]->tensor());
  }
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const fs::path dir = fs::temp_directory_path() / "reslt_model_test";
  fs::create_directories(dir);
  save_checkpoint(m, dir / "a.rltm");
  save_checkpoint(load_checkpoint(dir / "a.rltm"), dir / "b.rltm");
  EXPECT_EQ(sha256_file(dir / "a.rltm"), sha256_file(dir / "b.rltm"));
}

TEST(Checkpoint, TruncationIsFormatError) {
  auto bytes = encode_checkpoint(init_model(kDims, 2, 16));
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
  bytes[0] = 'Q';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}
