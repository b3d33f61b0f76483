#pragma once

#include <span>
#include <vector>

#include "reslt/autodiff.hpp"

namespace reslt {

/// Scalar values of one evaluation of the combined objective.
struct LossBreakdown {
  double fusion = 0.0;
  std::vector<double> branch_terms;
  double total = 0.0;
  std::vector<std::size_t> masked_in_counts;

  double branch_sum() const noexcept;
};

/// Differentiable objective plus its scalar breakdown.
struct Objective {
  Variable total;
  LossBreakdown breakdown;
};

/// Cross-entropy of the summed branch logits over the whole batch.
Variable fusion_loss(std::span<const Variable> branch_logits, std::span<const Label> targets);

/// term_g = masked-mean cross-entropy of branch g over the samples selected by
/// masks[g]. Softmax spans all classes; an empty mask gives exactly 0.
std::vector<Variable> branch_loss(std::span<const Variable> branch_logits,
                                  std::span<const Label> targets,
                                  std::span<const SampleMask> masks);

/// (1 - alpha) * fusion + alpha * sum_g term_g. Throws ParameterError unless 0 <= alpha <= 1.
Objective total_loss(std::span<const Variable> branch_logits, std::span<const Label> targets,
                     std::span<const SampleMask> masks, double alpha);

/// Same combination with a caller-supplied fusion term (e.g. main branch only).
Objective combine(Variable fusion, std::vector<Variable> terms, std::span<const SampleMask> masks,
                  double alpha);

/// Sum over g of the masked-mean cross-entropy of branch g on group-g samples.
Objective baseline_loss(std::span<const Variable> branch_logits, std::span<const Label> targets,
                        std::span<const SampleMask> disjoint_masks);

}  // namespace reslt
