#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "reslt/autodiff.hpp"

namespace reslt {

/// Which samples each branch is trained on.
enum class AssignmentScheme {
  nested,             // branch g sees classes in groups >= g
  disjoint,           // branch g sees group g only
  disjoint_plus_all,  // one all-class branch plus one branch per group
};

enum class FusionRule { residual_sum, elementwise_max, logit_sum, softmax_sum };

/// One point in the ablation space around the residual-fusion head.
struct VariantConfig {
  std::string name = "reslt";
  AssignmentScheme assignment = AssignmentScheme::nested;
  bool shortcut = true;
  bool specialization = true;
  FusionRule fusion = FusionRule::residual_sum;
  /// Forces the group count (the plain cross-entropy baseline uses 1).
  std::optional<std::size_t> fixed_groups;

  bool is_reslt() const noexcept {
    return assignment == AssignmentScheme::nested && shortcut && specialization &&
           fusion == FusionRule::residual_sum && !fixed_groups;
  }

  friend bool operator==(const VariantConfig&, const VariantConfig&) = default;
};

/// Named presets: reslt, no_specialization, no_shortcut, baseline1, baseline2,
/// baseline3, ce, weak_reslt. Throws ParameterError for unknown names.
VariantConfig variant_preset(std::string_view name);
const std::vector<std::string>& variant_names();
/// The seven variants of the standard ablation table.
const std::vector<std::string>& ablation_variant_names();

std::string_view to_string(AssignmentScheme scheme);
std::string_view to_string(FusionRule rule);

/// Groups used for a variant when the experiment asks for `groups`.
std::size_t effective_groups(const VariantConfig& variant, std::size_t groups);
/// Number of head branches a variant needs for `groups` class groups.
std::size_t branch_count(const VariantConfig& variant, std::size_t groups);

struct ModelDims {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t feature = 0;  // c: trunk output width, also branch width
  std::size_t classes = 0;  // K

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// y = x W^T + b with W stored [out x in].
struct LinearLayer {
  Parameter weight;
  Parameter bias;
};

/// MLP trunk, `num_branches` independent c->c branch maps (the grouped
/// transform), and one bias-free classifier w [K x c] shared by every branch.
struct Model {
  ModelDims dims;
  std::vector<LinearLayer> backbone;
  std::vector<LinearLayer> branches;
  Parameter classifier;
  std::optional<Parameter> classifier_bias;

  std::size_t num_branches() const noexcept { return branches.size(); }

  /// Every parameter in declaration order: backbone, branches, classifier.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

struct InitOptions {
  bool classifier_bias = false;
  bool zero_classifier = false;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias; each
/// parameter draws from its own named stream of `seed`.
Model init_model(const ModelDims& dims, std::size_t num_branches, std::uint64_t seed,
                 InitOptions options = {});

/// ReLU after every trunk layer, including the last.
Variable backbone_forward(const Model& model, const Variable& x);

/// Per-branch logits relu(branch_g(features)) w^T. Without specialization the
/// first branch map is applied once and its logits are returned G times.
std::vector<Variable> head_forward(const Model& model, const Variable& features,
                                   bool specialization);

std::vector<Variable> forward(const Model& model, const Variable& x, bool specialization);
/// Inference-only forward returning plain tensors.
std::vector<Tensor2D> branch_logits(const Model& model, const Tensor2D& x, bool specialization);

Tensor2D fuse(std::span<const Tensor2D> logits, FusionRule rule);

/// Row-wise argmax; ties go to the smaller class index.
std::vector<Label> argmax_rows(const Tensor2D& scores);

/// Scores used for the final decision: the fused logits, or the main branch
/// alone when the variant has no shortcut.
Tensor2D decision_scores(std::span<const Tensor2D> logits, const VariantConfig& variant);

std::vector<Label> predict(const Model& model, const Tensor2D& x, const VariantConfig& variant);

std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace reslt
