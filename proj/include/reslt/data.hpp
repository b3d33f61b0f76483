#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "reslt/autodiff.hpp"

namespace reslt {

using ClassCounts = std::vector<std::uint32_t>;

/// Features plus labels with no ordering guarantees (e.g. straight from IDX files).
struct LabeledData {
  Tensor2D features;  // N x d
  std::vector<Label> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  ClassCounts class_counts() const;
};

/// Training or test set whose classes are sorted by non-increasing frequency.
///
/// Construct through `from_parts`, which validates labels and ordering and
/// derives the per-class counts and the imbalance factor.
class LongTailDataset {
public:
  LongTailDataset() = default;

  static LongTailDataset from_parts(Tensor2D features, std::vector<Label> labels,
                                    std::size_t num_classes);

  const Tensor2D& features() const noexcept { return features_; }
  std::span<const Label> labels() const noexcept { return labels_; }
  const ClassCounts& class_counts() const noexcept { return counts_; }
  /// N_min / N_max over classes.
  double beta() const noexcept { return beta_; }

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return features_.cols(); }
  std::size_t num_classes() const noexcept { return counts_.size(); }

  /// Rows `indices` as a new feature batch, with the matching labels.
  Tensor2D gather_features(std::span<const std::size_t> indices) const;
  std::vector<Label> gather_labels(std::span<const std::size_t> indices) const;

  friend bool operator==(const LongTailDataset&, const LongTailDataset&) = default;

private:
  Tensor2D features_;
  std::vector<Label> labels_;
  ClassCounts counts_;
  double beta_ = 1.0;
};

/// Exponential long-tail profile: counts[i] = round(n_max * beta^(i / (K - 1))).
ClassCounts longtail_counts(std::uint32_t n_max, std::size_t num_classes, double beta);

/// Contiguous grouping of frequency-sorted classes into branch groups.
struct GroupAssignment {
  std::size_t num_groups = 0;
  std::vector<std::size_t> group_of_class;
  /// nested_masks[g][c] is true iff class c lies in a group >= g.
  std::vector<std::vector<bool>> nested_masks;

  /// Builds the assignment from group start indices (first must be 0).
  static GroupAssignment from_starts(std::size_t num_classes, std::vector<std::size_t> starts);
  /// Degenerate single-group assignment covering every class.
  static GroupAssignment single(std::size_t num_classes);

  std::size_t num_classes() const noexcept { return group_of_class.size(); }
  std::vector<std::size_t> group_starts() const;
  std::vector<std::size_t> group_sizes() const;

  friend bool operator==(const GroupAssignment&, const GroupAssignment&) = default;
};

/// Spread of per-group log-imbalance, max_g log(max_g/min_g) - min_g log(max_g/min_g),
/// for groups starting at `starts`.
double imbalance_spread(std::span<const std::uint32_t> counts, std::span<const std::size_t> starts);

/// Contiguous partition minimizing the spread of per-group imbalance.
///
/// Ties (within 1e-12) go to the partition whose group sizes differ least,
/// then to the lexicographically earliest boundaries.
GroupAssignment partition_groups(std::span<const std::uint32_t> counts, std::size_t num_groups);

/// mask[g][i] is true iff labels[i] belongs to a group >= g.
std::vector<SampleMask> nested_sample_masks(std::span<const Label> labels,
                                            const GroupAssignment& assignment);
/// mask[g][i] is true iff labels[i] belongs to group g exactly.
std::vector<SampleMask> disjoint_sample_masks(std::span<const Label> labels,
                                              const GroupAssignment& assignment);

enum class SplitMode { threshold, fixed };

/// Many/medium/few-shot evaluation classes. Independent of the branch grouping.
struct EvalSplit {
  std::vector<std::size_t> many;
  std::vector<std::size_t> medium;
  std::vector<std::size_t> few;

  enum class Part { many, medium, few };
  Part part_of(std::size_t cls) const;
  std::size_t num_classes() const noexcept { return many.size() + medium.size() + few.size(); }

  friend bool operator==(const EvalSplit&, const EvalSplit&) = default;
};

struct SplitThresholds {
  std::uint32_t many_above = 100;  // many: count > many_above
  std::uint32_t few_below = 20;    // few: count < few_below

  friend bool operator==(const SplitThresholds&, const SplitThresholds&) = default;
};

/// Threshold mode buckets classes by training count. Fixed mode uses index
/// ranges: 35/35/30 for K = 100, otherwise equal thirds with the remainder
/// going to few-shot (3/3/4 for K = 10).
EvalSplit eval_split(std::span<const std::uint32_t> counts, SplitMode mode,
                     SplitThresholds thresholds = {});

struct SyntheticTask {
  LongTailDataset train;
  LongTailDataset test;
};

/// Isotropic unit-variance Gaussian classes with means at `separation` times
/// a random unit direction. The test set is balanced with `test_per_class`
/// samples per class. Features are rounded to float precision so the native
/// file format round-trips them exactly.
SyntheticTask synth_gaussian(std::size_t num_classes, std::size_t dim, const ClassCounts& counts,
                             double separation, std::uint64_t seed,
                             std::uint32_t test_per_class = 200);

struct SubsampleResult {
  LongTailDataset dataset;
  /// original_class[new_label] = label in the source data.
  std::vector<Label> original_class;
};

/// Draws counts[c] samples of source class c without replacement, then
/// relabels classes by non-increasing count (stable). Rows are copied verbatim.
SubsampleResult subsample_longtail(const LabeledData& source, const ClassCounts& counts,
                                   std::uint64_t seed);

/// Applies a relabeling (new label -> original class) to another split of the
/// same source, e.g. the matching test set. Samples of unmapped classes are dropped.
LabeledData relabel(const LabeledData& data, std::span<const Label> original_class);

// IDX and native dataset files.

LabeledData load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
LabeledData parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> encode_dataset(const LongTailDataset& dataset);
LongTailDataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const LongTailDataset& dataset, const std::filesystem::path& path);
LongTailDataset load_dataset(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace reslt
