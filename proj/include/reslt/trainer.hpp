#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "reslt/data.hpp"
#include "reslt/evalreport.hpp"
#include "reslt/loss.hpp"
#include "reslt/model.hpp"

namespace reslt {

/// Linear warm-up from 0 to base_lr over `warmup_epochs`, then step decay at each milestone.
struct WarmupStep {
  std::size_t warmup_epochs = 5;
  std::vector<std::size_t> milestones{45, 55};
  double decay = 0.1;

  friend bool operator==(const WarmupStep&, const WarmupStep&) = default;
};

/// Cosine decay from `start` to `end` over all training steps.
struct Cosine {
  double start = 0.1;
  double end = 0.0;

  friend bool operator==(const Cosine&, const Cosine&) = default;
};

using Schedule = std::variant<WarmupStep, Cosine>;

struct TrainConfig {
  double alpha = 0.995;
  std::size_t groups = 3;
  VariantConfig variant;
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double base_lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 0.0;
  Schedule schedule = WarmupStep{};
  std::uint64_t seed = 1;
  std::vector<std::size_t> hidden{64};
  std::size_t feature_dim = 32;
  bool classifier_bias = false;
  bool zero_init_classifier = false;
  SplitMode split_mode = SplitMode::fixed;
  SplitThresholds split_thresholds;
  /// Evaluate on the test set after every epoch (otherwise only after the last).
  bool eval_every_epoch = true;

  /// Throws ParameterError on any inconsistent field.
  void validate() const;

  /// Scaled-down schedule for the synthetic long-tail task: 60 epochs,
  /// warm-up 5, decay x0.1 at 45 and 55, base learning rate 0.03 (the MLP
  /// trunk has no normalization layers and loses units to dead ReLUs at 0.1).
  static TrainConfig desk_preset();
  /// 200 epochs, warm-up 5, decay x0.1 at 160 and 180, batch 128, lr 0.1, momentum 0.9.
  static TrainConfig cifar_preset();

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Learning rate used for step `step_in_epoch` of `epoch`.
double lr_at(std::size_t epoch, std::size_t step_in_epoch, std::size_t steps_per_epoch,
             const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double fusion_loss = 0.0;
  double branch_loss_sum = 0.0;
  std::optional<double> test_acc_all;
  std::optional<double> test_acc_many;
  std::optional<double> test_acc_medium;
  std::optional<double> test_acc_few;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainResult {
  Model model;
  GroupAssignment groups;
  EvalSplit split;
  std::vector<EpochMetrics> history;
  EvalReport report;
};

/// Group assignment a variant trains with for this dataset and config.
GroupAssignment assignment_for(const LongTailDataset& train, const TrainConfig& config);

/// Sample masks per branch for a batch, following the variant's assignment scheme.
std::vector<SampleMask> branch_masks(std::span<const Label> labels, const GroupAssignment& groups,
                                     const VariantConfig& variant);

/// The variant's training objective on one batch of branch logits.
Objective training_objective(std::span<const Variable> logits, std::span<const Label> targets,
                             std::span<const SampleMask> masks, const TrainConfig& config);

/// Visiting order of the training samples in `epoch`: a seeded permutation of 0..n-1.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains from scratch with uniform instance sampling. Deterministic in
/// (data, config). Throws DivergedError on a non-finite loss.
TrainResult train(const LongTailDataset& train_set, const LongTailDataset& test_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

inline constexpr const char* kMetricsHeader =
    "epoch,lr,train_loss,fusion_loss,branch_loss_sum,test_acc_all,test_acc_many,"
    "test_acc_medium,test_acc_few";

std::string metrics_to_csv(const std::vector<EpochMetrics>& history);
void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::filesystem::path& path);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  SplitAccuracy accuracy;
  EvalReport report;
};

struct AblationSummary {
  std::string variant;
  std::size_t runs = 0;
  double mean_all = 0.0, std_all = 0.0;
  std::optional<double> mean_many, mean_medium, mean_few;
  std::optional<double> std_many, std_medium, std_few;
};

struct AblationTable {
  std::vector<AblationRow> rows;  // variant-major, then seed

  std::vector<AblationSummary> summarize() const;
  const AblationSummary* find(const std::vector<AblationSummary>& summary,
                              const std::string& variant) const;
};

/// Trains every (variant, seed) pair with otherwise identical configuration.
/// Seeds are shared across variants so comparisons are paired. Runs are
/// independent and may execute on up to `threads` workers; results do not
/// depend on the thread count.
AblationTable run_ablation_suite(const LongTailDataset& train_set, const LongTailDataset& test_set,
                                 const TrainConfig& base_config,
                                 const std::vector<std::string>& variants,
                                 const std::vector<std::uint64_t>& seeds, std::size_t threads = 1);

inline constexpr const char* kAblationHeader = "variant,seed,acc_all,acc_many,acc_medium,acc_few";
std::string ablation_to_csv(const AblationTable& table);
std::string ablation_summary_to_csv(const std::vector<AblationSummary>& summary);

}  // namespace reslt
