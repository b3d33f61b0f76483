#include "reslt/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "reslt/errors.hpp"
#include "reslt/rng.hpp"

namespace reslt {

ClassCounts LabeledData::class_counts() const {
  ClassCounts counts(num_classes, 0);
  for (Label l : labels) {
    if (l >= num_classes) throw LabelError("label " + std::to_string(l) + " >= num_classes");
    ++counts[l];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// LongTailDataset

LongTailDataset LongTailDataset::from_parts(Tensor2D features, std::vector<Label> labels,
                                            std::size_t num_classes) {
  if (features.rows() != labels.size()) {
    throw ShapeError("dataset: " + std::to_string(features.rows()) + " feature rows vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (num_classes == 0) throw ParameterError("dataset: num_classes must be positive");

  ClassCounts counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw LabelError("dataset: label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++counts[labels[i]];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw CapacityError("dataset: class " + std::to_string(c) + " is empty");
    if (c > 0 && counts[c] > counts[c - 1]) {
      throw ParameterError("dataset: class counts must be non-increasing; class " +
                           std::to_string(c) + " has " + std::to_string(counts[c]) + " > " +
                           std::to_string(counts[c - 1]));
    }
  }

  LongTailDataset ds;
  ds.features_ = std::move(features);
  ds.labels_ = std::move(labels);
  ds.beta_ = static_cast<double>(counts.back()) / static_cast<double>(counts.front());
  ds.counts_ = std::move(counts);
  return ds;
}

Tensor2D LongTailDataset::gather_features(std::span<const std::size_t> indices) const {
  const std::size_t d = dim();
  Tensor2D out(indices.size(), d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = features_.row(indices[r]);
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return out;
}

std::vector<Label> LongTailDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<Label> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels_[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Long-tail profile

ClassCounts longtail_counts(std::uint32_t n_max, std::size_t num_classes, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw ParameterError("imbalance factor beta must lie in (0, 1], got " + std::to_string(beta));
  }
  if (num_classes < 2) throw ParameterError("long-tail profile needs at least 2 classes");
  if (n_max < 1) throw ParameterError("n_max must be at least 1");

  ClassCounts counts(num_classes);
  const double last = static_cast<double>(num_classes - 1);
  for (std::size_t i = 0; i < num_classes; ++i) {
    const double n = static_cast<double>(n_max) * std::pow(beta, static_cast<double>(i) / last);
    counts[i] = static_cast<std::uint32_t>(std::llround(n));
  }
  counts.front() = n_max;
  counts.back() = static_cast<std::uint32_t>(std::llround(static_cast<double>(n_max) * beta));
  if (counts.back() == 0) {
    throw ParameterError("n_max * beta rounds to zero samples for the rarest class");
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Group assignment

GroupAssignment GroupAssignment::from_starts(std::size_t num_classes,
                                             std::vector<std::size_t> starts) {
  if (starts.empty() || starts.front() != 0) {
    throw ParameterError("group starts must begin at class 0");
  }
  for (std::size_t g = 1; g < starts.size(); ++g) {
    if (starts[g] <= starts[g - 1] || starts[g] >= num_classes) {
      throw ParameterError("group starts must be strictly increasing and below K");
    }
  }
  GroupAssignment a;
  a.num_groups = starts.size();
  a.group_of_class.assign(num_classes, 0);
  for (std::size_t g = 0; g < starts.size(); ++g) {
    const std::size_t end = g + 1 < starts.size() ? starts[g + 1] : num_classes;
    for (std::size_t c = starts[g]; c < end; ++c) a.group_of_class[c] = g;
  }
  a.nested_masks.assign(a.num_groups, std::vector<bool>(num_classes, false));
  for (std::size_t g = 0; g < a.num_groups; ++g)
    for (std::size_t c = 0; c < num_classes; ++c) a.nested_masks[g][c] = a.group_of_class[c] >= g;
  return a;
}

GroupAssignment GroupAssignment::single(std::size_t num_classes) {
  return from_starts(num_classes, {0});
}

std::vector<std::size_t> GroupAssignment::group_starts() const {
  std::vector<std::size_t> starts;
  for (std::size_t c = 0; c < group_of_class.size(); ++c)
    if (c == 0 || group_of_class[c] != group_of_class[c - 1]) starts.push_back(c);
  return starts;
}

std::vector<std::size_t> GroupAssignment::group_sizes() const {
  std::vector<std::size_t> sizes(num_groups, 0);
  for (std::size_t g : group_of_class) ++sizes[g];
  return sizes;
}

namespace {

double log_imbalance(std::span<const std::uint32_t> counts, std::size_t begin, std::size_t end) {
  const auto [lo, hi] = std::minmax_element(counts.begin() + static_cast<std::ptrdiff_t>(begin),
                                            counts.begin() + static_cast<std::ptrdiff_t>(end));
  return std::log(static_cast<double>(*hi) / static_cast<double>(*lo));
}

constexpr double kTieTolerance = 1e-12;

struct PartitionSearch {
  std::span<const std::uint32_t> counts;
  std::size_t groups;
  std::vector<std::size_t> starts;
  std::vector<std::size_t> best_starts;
  double best_spread = std::numeric_limits<double>::infinity();
  std::size_t best_size_spread = std::numeric_limits<std::size_t>::max();

  // Extends `starts` with group `g` beginning at starts.back(); lo/hi track the
  // extreme imbalances of the completed groups so far.
  void extend(double lo, double hi, std::size_t min_size, std::size_t max_size) {
    const std::size_t k = counts.size();
    const std::size_t begin = starts.back();
    const std::size_t g = starts.size() - 1;
    const std::size_t remaining_after = groups - g - 1;
    if (remaining_after == 0) {
      const double imb = log_imbalance(counts, begin, k);
      const double spread = std::max(hi, imb) - std::min(lo, imb);
      const std::size_t size = k - begin;
      const std::size_t size_spread = std::max(max_size, size) - std::min(min_size, size);
      if (spread < best_spread - kTieTolerance ||
          (spread <= best_spread + kTieTolerance && size_spread < best_size_spread)) {
        best_spread = spread;
        best_size_spread = size_spread;
        best_starts = starts;
      }
      return;
    }
    for (std::size_t end = begin + 1; end + remaining_after <= k; ++end) {
      const double imb = log_imbalance(counts, begin, end);
      const double nlo = std::min(lo, imb), nhi = std::max(hi, imb);
      if (nhi - nlo > best_spread + kTieTolerance) continue;
      const std::size_t size = end - begin;
      starts.push_back(end);
      extend(nlo, nhi, std::min(min_size, size), std::max(max_size, size));
      starts.pop_back();
    }
  }
};

}  // namespace

double imbalance_spread(std::span<const std::uint32_t> counts, std::span<const std::size_t> starts) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t g = 0; g < starts.size(); ++g) {
    const std::size_t end = g + 1 < starts.size() ? starts[g + 1] : counts.size();
    const double imb = log_imbalance(counts, starts[g], end);
    lo = std::min(lo, imb);
    hi = std::max(hi, imb);
  }
  return hi - lo;
}

GroupAssignment partition_groups(std::span<const std::uint32_t> counts, std::size_t num_groups) {
  if (num_groups < 2) throw ParameterError("partition_groups needs G >= 2");
  if (counts.size() < num_groups) {
    throw ParameterError("cannot split " + std::to_string(counts.size()) + " classes into " +
                         std::to_string(num_groups) + " groups");
  }
  for (std::uint32_t c : counts)
    if (c == 0) throw ParameterError("partition_groups: class counts must be positive");

  PartitionSearch search{counts, num_groups, {0}, {}};
  search.extend(std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                std::numeric_limits<std::size_t>::max(), 0);
  return GroupAssignment::from_starts(counts.size(), search.best_starts);
}

std::vector<SampleMask> nested_sample_masks(std::span<const Label> labels,
                                            const GroupAssignment& assignment) {
  std::vector<SampleMask> masks(assignment.num_groups, SampleMask(labels.size(), false));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= assignment.num_classes()) {
      throw LabelError("label " + std::to_string(labels[i]) + " outside group assignment");
    }
    const std::size_t group = assignment.group_of_class[labels[i]];
    for (std::size_t g = 0; g <= group; ++g) masks[g][i] = true;
  }
  return masks;
}

std::vector<SampleMask> disjoint_sample_masks(std::span<const Label> labels,
                                              const GroupAssignment& assignment) {
  std::vector<SampleMask> masks(assignment.num_groups, SampleMask(labels.size(), false));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= assignment.num_classes()) {
      throw LabelError("label " + std::to_string(labels[i]) + " outside group assignment");
    }
    masks[assignment.group_of_class[labels[i]]][i] = true;
  }
  return masks;
}

// ---------------------------------------------------------------------------
// Evaluation splits

EvalSplit::Part EvalSplit::part_of(std::size_t cls) const {
  auto has = [cls](const std::vector<std::size_t>& v) {
    return std::find(v.begin(), v.end(), cls) != v.end();
  };
  if (has(many)) return Part::many;
  if (has(medium)) return Part::medium;
  if (has(few)) return Part::few;
  throw LabelError("class " + std::to_string(cls) + " not covered by evaluation split");
}

EvalSplit eval_split(std::span<const std::uint32_t> counts, SplitMode mode,
                     SplitThresholds thresholds) {
  EvalSplit split;
  const std::size_t k = counts.size();
  if (mode == SplitMode::threshold) {
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > thresholds.many_above) {
        split.many.push_back(c);
      } else if (counts[c] < thresholds.few_below) {
        split.few.push_back(c);
      } else {
        split.medium.push_back(c);
      }
    }
    return split;
  }

  std::size_t many = k / 3, medium = k / 3;
  if (k == 100) many = medium = 35;
  for (std::size_t c = 0; c < k; ++c) {
    if (c < many) {
      split.many.push_back(c);
    } else if (c < many + medium) {
      split.medium.push_back(c);
    } else {
      split.few.push_back(c);
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic data and subsampling

namespace {

LongTailDataset gaussian_samples(const std::vector<std::vector<double>>& means,
                                 std::span<const std::uint32_t> counts, Rng rng) {
  const std::size_t d = means.front().size();
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  Tensor2D features(n, d);
  std::vector<Label> labels;
  labels.reserve(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::uint32_t s = 0; s < counts[c]; ++s, ++row) {
      for (std::size_t j = 0; j < d; ++j) {
        features(row, j) = static_cast<float>(means[c][j] + rng.normal());
      }
      labels.push_back(static_cast<Label>(c));
    }
  }
  return LongTailDataset::from_parts(std::move(features), std::move(labels), counts.size());
}

}  // namespace

SyntheticTask synth_gaussian(std::size_t num_classes, std::size_t dim, const ClassCounts& counts,
                             double separation, std::uint64_t seed, std::uint32_t test_per_class) {
  if (counts.size() != num_classes) {
    throw ShapeError("synth_gaussian: " + std::to_string(counts.size()) + " counts for " +
                     std::to_string(num_classes) + " classes");
  }
  if (dim == 0) throw ParameterError("synth_gaussian: dimension must be positive");
  if (test_per_class == 0) throw ParameterError("synth_gaussian: test_per_class must be positive");

  const Rng root(seed);
  Rng mean_rng = root.split("means");
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim));
  for (auto& mean : means) {
    double norm = 0.0;
    while (norm == 0.0) {
      for (double& v : mean) v = mean_rng.normal();
      norm = std::sqrt(std::inner_product(mean.begin(), mean.end(), mean.begin(), 0.0));
    }
    for (double& v : mean) v *= separation / norm;
  }

  const ClassCounts test_counts(num_classes, test_per_class);
  return {gaussian_samples(means, counts, root.split("train")),
          gaussian_samples(means, test_counts, root.split("test"))};
}

SubsampleResult subsample_longtail(const LabeledData& source, const ClassCounts& counts,
                                   std::uint64_t seed) {
  if (counts.size() != source.num_classes) {
    throw ShapeError("subsample: " + std::to_string(counts.size()) + " counts for " +
                     std::to_string(source.num_classes) + " classes");
  }
  std::vector<std::vector<std::size_t>> by_class(source.num_classes);
  for (std::size_t i = 0; i < source.labels.size(); ++i) {
    if (source.labels[i] >= source.num_classes) {
      throw LabelError("subsample: label " + std::to_string(source.labels[i]) + " out of range");
    }
    by_class[source.labels[i]].push_back(i);
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw ParameterError("subsample: class " + std::to_string(c) + " count 0");
    if (counts[c] > by_class[c].size()) {
      throw CapacityError("subsample: class " + std::to_string(c) + " has " +
                          std::to_string(by_class[c].size()) + " samples, " +
                          std::to_string(counts[c]) + " requested");
    }
  }

  std::vector<Label> original(source.num_classes);
  std::iota(original.begin(), original.end(), Label{0});
  std::stable_sort(original.begin(), original.end(),
                   [&](Label a, Label b) { return counts[a] > counts[b]; });

  const Rng root(seed);
  std::vector<std::size_t> rows;
  std::vector<Label> labels;
  for (std::size_t new_label = 0; new_label < original.size(); ++new_label) {
    const Label c = original[new_label];
    auto pool = by_class[c];
    Rng rng = root.split(static_cast<std::uint64_t>(c));
    std::shuffle(pool.begin(), pool.end(), rng.engine());
    pool.resize(counts[c]);
    std::sort(pool.begin(), pool.end());
    for (std::size_t i : pool) {
      rows.push_back(i);
      labels.push_back(static_cast<Label>(new_label));
    }
  }

  const std::size_t d = source.features.cols();
  Tensor2D features(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = source.features.row(rows[r]);
    std::copy(src.begin(), src.end(), features.values().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return {LongTailDataset::from_parts(std::move(features), std::move(labels), source.num_classes),
          std::move(original)};
}

LabeledData relabel(const LabeledData& data, std::span<const Label> original_class) {
  std::vector<std::int64_t> new_of(data.num_classes, -1);
  for (std::size_t n = 0; n < original_class.size(); ++n) {
    if (original_class[n] >= data.num_classes) throw LabelError("relabel: class out of range");
    new_of[original_class[n]] = static_cast<std::int64_t>(n);
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.labels.size(); ++i)
    if (new_of.at(data.labels[i]) >= 0) keep.push_back(i);

  LabeledData out;
  out.num_classes = original_class.size();
  const std::size_t d = data.features.cols();
  out.features = Tensor2D(keep.size(), d);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto src = data.features.row(keep[r]);
    std::copy(src.begin(), src.end(), out.features.values().begin() + static_cast<std::ptrdiff_t>(r * d));
    out.labels.push_back(static_cast<Label>(new_of[data.labels[keep[r]]]));
  }
  return out;
}

}  // namespace reslt
