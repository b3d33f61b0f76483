#include "reslt/loss.hpp"

#include <algorithm>
#include <numeric>

#include "reslt/errors.hpp"

namespace reslt {

double LossBreakdown::branch_sum() const noexcept {
  return std::accumulate(branch_terms.begin(), branch_terms.end(), 0.0);
}

namespace {

Variable sum_logits(std::span<const Variable> branch_logits) {
  if (branch_logits.empty()) throw ShapeError("no branch logits");
  Variable acc = branch_logits.front();
  for (std::size_t g = 1; g < branch_logits.size(); ++g) acc = add(acc, branch_logits[g]);
  return acc;
}

void check_masks(std::span<const Variable> branch_logits, std::span<const SampleMask> masks) {
  if (masks.size() != branch_logits.size()) {
    throw ShapeError(std::to_string(masks.size()) + " sample masks for " +
                     std::to_string(branch_logits.size()) + " branches");
  }
}

std::vector<std::size_t> mask_counts(std::span<const SampleMask> masks) {
  std::vector<std::size_t> counts;
  for (const auto& m : masks) counts.push_back(static_cast<std::size_t>(std::count(m.begin(), m.end(), true)));
  return counts;
}

}  // namespace

Variable fusion_loss(std::span<const Variable> branch_logits, std::span<const Label> targets) {
  return softmax_cross_entropy(sum_logits(branch_logits), targets);
}

std::vector<Variable> branch_loss(std::span<const Variable> branch_logits,
                                  std::span<const Label> targets,
                                  std::span<const SampleMask> masks) {
  check_masks(branch_logits, masks);
  std::vector<Variable> terms;
  terms.reserve(masks.size());
  for (std::size_t g = 0; g < masks.size(); ++g) {
    terms.push_back(softmax_cross_entropy(branch_logits[g], targets, masks[g]));
  }
  return terms;
}

Objective combine(Variable fusion, std::vector<Variable> terms, std::span<const SampleMask> masks,
                  double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  Objective out;
  out.breakdown.fusion = fusion.item();
  for (const auto& t : terms) out.breakdown.branch_terms.push_back(t.item());
  out.breakdown.masked_in_counts = mask_counts(masks);

  std::vector<Variable> all{std::move(fusion)};
  std::vector<double> weights{1.0 - alpha};
  for (auto& t : terms) {
    all.push_back(std::move(t));
    weights.push_back(alpha);
  }
  out.total = linear_combination(all, weights);
  out.breakdown.total = out.total.item();
  return out;
}

Objective total_loss(std::span<const Variable> branch_logits, std::span<const Label> targets,
                     std::span<const SampleMask> masks, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  return combine(fusion_loss(branch_logits, targets), branch_loss(branch_logits, targets, masks),
                 masks, alpha);
}

Objective baseline_loss(std::span<const Variable> branch_logits, std::span<const Label> targets,
                        std::span<const SampleMask> disjoint_masks) {
  check_masks(branch_logits, disjoint_masks);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    std::size_t owners = 0;
    for (const auto& m : disjoint_masks) owners += m.at(i) ? 1 : 0;
    if (owners != 1) {
      throw ParameterError("baseline masks must be disjoint and covering; sample " +
                           std::to_string(i) + " is in " + std::to_string(owners) + " groups");
    }
  }
  auto terms = branch_loss(branch_logits, targets, disjoint_masks);
  Objective out;
  for (const auto& t : terms) out.breakdown.branch_terms.push_back(t.item());
  out.breakdown.masked_in_counts = mask_counts(disjoint_masks);
  out.total = linear_combination(terms, std::vector<double>(terms.size(), 1.0));
  out.breakdown.total = out.total.item();
  return out;
}

}  // namespace reslt
