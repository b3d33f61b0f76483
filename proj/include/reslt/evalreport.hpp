#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reslt/data.hpp"
#include "reslt/model.hpp"

namespace reslt {

/// Accuracy over all test samples and within each evaluation split.
/// A split with no test samples is reported as absent ("NA"), never as 0.
struct SplitAccuracy {
  double all = 0.0;
  std::optional<double> many;
  std::optional<double> medium;
  std::optional<double> few;

  friend bool operator==(const SplitAccuracy&, const SplitAccuracy&) = default;
};

/// Correct/total counts behind the fused accuracies.
struct SplitCounts {
  std::size_t total = 0, correct = 0;
  std::size_t many = 0, many_correct = 0;
  std::size_t medium = 0, medium_correct = 0;
  std::size_t few = 0, few_correct = 0;

  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

struct EvalReport {
  SplitAccuracy fused;
  std::vector<std::optional<double>> per_class_acc;
  /// One row per branch, scoring that branch's own logits.
  std::vector<SplitAccuracy> per_branch;
  SplitCounts counts;

  double acc_all() const noexcept { return fused.all; }

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Accuracy breakdown of `predictions` against `labels`.
SplitAccuracy score(std::span<const Label> predictions, std::span<const Label> labels,
                    const EvalSplit& split, SplitCounts* counts = nullptr);

/// Scores the variant's decision rule on the test set, plus each branch alone.
EvalReport evaluate(const Model& model, const LongTailDataset& test, const EvalSplit& split,
                    const VariantConfig& variant);

/// Per-branch check of which split each branch favours (requires three branches):
/// branch 0 many >= medium >= few; branch 1 medium >= many; branch 2 few is its maximum.
std::array<bool, 3> branch_dominance_check(const EvalReport& report);

enum class ReportFormat { csv, json };

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
/// Long-format CSV: `scope,index,metric,value` with a single header row.
std::string report_to_csv(const EvalReport& report);
EvalReport report_from_csv(const std::string& text);

void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
EvalReport load_report(const std::filesystem::path& path, ReportFormat format);

/// "%.17g" for finite values, "NA" for absent ones.
std::string format_metric(std::optional<double> value);

}  // namespace reslt
