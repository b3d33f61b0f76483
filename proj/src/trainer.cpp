#include "reslt/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "reslt/errors.hpp"
#include "reslt/rng.hpp"

namespace reslt {

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ParameterError("train config: " + what); };
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1], got " + std::to_string(alpha));
  if (groups < 1) fail("groups must be at least 1");
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(base_lr > 0.0)) fail("base_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (feature_dim == 0) fail("feature_dim must be positive");
  for (std::size_t h : hidden)
    if (h == 0) fail("hidden widths must be positive");
  if (const auto* ws = std::get_if<WarmupStep>(&schedule)) {
    for (std::size_t i = 0; i < ws->milestones.size(); ++i) {
      if (ws->milestones[i] >= epochs) fail("milestones must be below epochs");
      if (i > 0 && ws->milestones[i] <= ws->milestones[i - 1]) fail("milestones must be strictly increasing");
    }
    if (!(ws->decay > 0.0)) fail("decay must be positive");
  } else {
    const auto& cos = std::get<Cosine>(schedule);
    if (!(cos.start > 0.0) || cos.end < 0.0 || cos.end > cos.start) fail("cosine needs start > 0 and 0 <= end <= start");
  }
}

TrainConfig TrainConfig::desk_preset() { return TrainConfig{}; }

TrainConfig TrainConfig::cifar_preset() {
  TrainConfig c;
  c.epochs = 200;
  c.batch_size = 128;
  c.base_lr = 0.1;
  c.momentum = 0.9;
  c.schedule = WarmupStep{5, {160, 180}, 0.1};
  return c;
}

double lr_at(std::size_t epoch, std::size_t step_in_epoch, std::size_t steps_per_epoch,
             const TrainConfig& config) {
  const std::size_t global = epoch * steps_per_epoch + step_in_epoch;
  if (const auto* ws = std::get_if<WarmupStep>(&config.schedule)) {
    if (epoch < ws->warmup_epochs) {
      const double ramp = static_cast<double>(ws->warmup_epochs * steps_per_epoch);
      return config.base_lr * static_cast<double>(global + 1) / ramp;
    }
    const auto passed = std::count_if(ws->milestones.begin(), ws->milestones.end(),
                                      [epoch](std::size_t m) { return epoch >= m; });
    return config.base_lr * std::pow(ws->decay, static_cast<double>(passed));
  }
  const auto& cos = std::get<Cosine>(config.schedule);
  const double total = static_cast<double>(config.epochs * steps_per_epoch);
  const double t = static_cast<double>(global);
  return cos.end + (cos.start - cos.end) * 0.5 * (1.0 + std::cos(std::numbers::pi * t / total));
}

// ---------------------------------------------------------------------------
// Objective plumbing

GroupAssignment assignment_for(const LongTailDataset& train, const TrainConfig& config) {
  const std::size_t g = effective_groups(config.variant, config.groups);
  if (g == 1) return GroupAssignment::single(train.num_classes());
  return partition_groups(train.class_counts(), g);
}

std::vector<SampleMask> branch_masks(std::span<const Label> labels, const GroupAssignment& groups,
                                     const VariantConfig& variant) {
  switch (variant.assignment) {
    case AssignmentScheme::nested:
      return nested_sample_masks(labels, groups);
    case AssignmentScheme::disjoint:
      return disjoint_sample_masks(labels, groups);
    case AssignmentScheme::disjoint_plus_all: {
      auto masks = disjoint_sample_masks(labels, groups);
      masks.insert(masks.begin(), SampleMask(labels.size(), true));
      return masks;
    }
  }
  return {};
}

Objective training_objective(std::span<const Variable> logits, std::span<const Label> targets,
                             std::span<const SampleMask> masks, const TrainConfig& config) {
  const auto& variant = config.variant;
  if (variant.assignment == AssignmentScheme::disjoint) return baseline_loss(logits, targets, masks);
  if (!variant.shortcut) {
    // Without the additive shortcut only the main branch is ever decoded, so
    // the fusion term scores it alone; the other branches act through L_branch.
    return combine(softmax_cross_entropy(logits.front(), targets),
                   branch_loss(logits, targets, masks), masks, config.alpha);
  }
  return total_loss(logits, targets, masks, config.alpha);
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle = Rng(seed).split("shuffle").split(static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), shuffle.engine());
  return order;
}

TrainResult train(const LongTailDataset& train_set, const LongTailDataset& test_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0) throw ParameterError("training set is empty");
  if (test_set.num_classes() != train_set.num_classes() || test_set.dim() != train_set.dim()) {
    throw ShapeError("train/test sets disagree on classes or dimension");
  }

  const Rng root(config.seed);
  TrainResult result;
  result.groups = assignment_for(train_set, config);
  result.split = eval_split(train_set.class_counts(), config.split_mode, config.split_thresholds);

  const ModelDims dims{train_set.dim(), config.hidden, config.feature_dim, train_set.num_classes()};
  result.model = init_model(dims, branch_count(config.variant, config.groups), root.split("model").seed(),
                            InitOptions{config.classifier_bias, config.zero_init_classifier});
  Model& model = result.model;
  const auto params = model.parameters();

  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(n, config.seed, epoch);

    EpochMetrics m;
    m.epoch = epoch;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t begin = step * config.batch_size;
      const std::size_t end = std::min(n, begin + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);

      const Tensor2D x = train_set.gather_features(idx);
      const std::vector<Label> y = train_set.gather_labels(idx);
      const auto masks = branch_masks(y, result.groups, config.variant);
      const auto logits = forward(model, Variable::constant(x), config.variant.specialization);
      Objective obj = training_objective(logits, y, masks, config);
      if (!std::isfinite(obj.breakdown.total)) throw DivergedError(epoch, step);

      obj.total.backward();
      if (config.weight_decay > 0.0) {
        for (Parameter* p : params) {
          auto g = p->tensor().grad();
          const auto v = p->tensor().values();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += config.weight_decay * v[i];
        }
      }
      m.lr = lr_at(epoch, step, steps_per_epoch, config);
      sgd_step(params, m.lr, config.momentum);

      const double w = static_cast<double>(idx.size());
      m.train_loss += w * obj.breakdown.total;
      m.fusion_loss += w * obj.breakdown.fusion;
      m.branch_loss_sum += w * obj.breakdown.branch_sum();
    }
    m.train_loss /= static_cast<double>(n);
    m.fusion_loss /= static_cast<double>(n);
    m.branch_loss_sum /= static_cast<double>(n);

    if (config.eval_every_epoch || epoch + 1 == config.epochs) {
      result.report = evaluate(model, test_set, result.split, config.variant);
      m.test_acc_all = result.report.fused.all;
      m.test_acc_many = result.report.fused.many;
      m.test_acc_medium = result.report.fused.medium;
      m.test_acc_few = result.report.fused.few;
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

std::string metrics_to_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const auto& m : history) {
    out << m.epoch << ',' << format_metric(m.lr) << ',' << format_metric(m.train_loss) << ','
        << format_metric(m.fusion_loss) << ',' << format_metric(m.branch_loss_sum) << ','
        << format_metric(m.test_acc_all) << ',' << format_metric(m.test_acc_many) << ','
        << format_metric(m.test_acc_medium) << ',' << format_metric(m.test_acc_few) << '\n';
  }
  return out.str();
}

void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics to " + path.string());
  out << metrics_to_csv(history);
}

// ---------------------------------------------------------------------------
// Ablation suite

AblationTable run_ablation_suite(const LongTailDataset& train_set, const LongTailDataset& test_set,
                                 const TrainConfig& base_config,
                                 const std::vector<std::string>& variants,
                                 const std::vector<std::uint64_t>& seeds, std::size_t threads) {
  struct Job {
    std::string variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& v : variants) {
    variant_preset(v);  // reject unknown names before any training starts
    for (std::uint64_t s : seeds) jobs.push_back({v, s});
  }

  AblationTable table;
  table.rows.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        TrainConfig cfg = base_config;
        cfg.variant = variant_preset(jobs[i].variant);
        cfg.seed = jobs[i].seed;
        cfg.eval_every_epoch = false;
        TrainResult r = train(train_set, test_set, cfg);
        table.rows[i] = {jobs[i].variant, jobs[i].seed, r.report.fused, std::move(r.report)};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(jobs.size(), 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return table;
}

namespace {

struct MeanStd {
  std::optional<double> mean, std;
};

MeanStd mean_std(const std::vector<std::optional<double>>& values) {
  if (values.empty()) return {};
  for (const auto& v : values)
    if (!v) return {};
  double sum = 0.0;
  for (const auto& v : values) sum += *v;
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (const auto& v : values) ss += (*v - mean) * (*v - mean);
  const double sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
  return {mean, sd};
}

}  // namespace

std::vector<AblationSummary> AblationTable::summarize() const {
  std::vector<AblationSummary> out;
  for (const auto& row : rows) {
    if (std::none_of(out.begin(), out.end(), [&](const auto& s) { return s.variant == row.variant; })) {
      AblationSummary s;
      s.variant = row.variant;
      out.push_back(std::move(s));
    }
  }
  for (auto& s : out) {
    std::vector<std::optional<double>> all, many, medium, few;
    for (const auto& row : rows) {
      if (row.variant != s.variant) continue;
      all.emplace_back(row.accuracy.all);
      many.push_back(row.accuracy.many);
      medium.push_back(row.accuracy.medium);
      few.push_back(row.accuracy.few);
    }
    s.runs = all.size();
    const auto a = mean_std(all);
    s.mean_all = *a.mean;
    s.std_all = *a.std;
    const auto mm = mean_std(many), md = mean_std(medium), mf = mean_std(few);
    s.mean_many = mm.mean;
    s.std_many = mm.std;
    s.mean_medium = md.mean;
    s.std_medium = md.std;
    s.mean_few = mf.mean;
    s.std_few = mf.std;
  }
  return out;
}

const AblationSummary* AblationTable::find(const std::vector<AblationSummary>& summary,
                                           const std::string& variant) const {
  for (const auto& s : summary)
    if (s.variant == variant) return &s;
  return nullptr;
}

std::string ablation_to_csv(const AblationTable& table) {
  std::ostringstream out;
  out << kAblationHeader << '\n';
  for (const auto& r : table.rows) {
    out << r.variant << ',' << r.seed << ',' << format_metric(r.accuracy.all) << ','
        << format_metric(r.accuracy.many) << ',' << format_metric(r.accuracy.medium) << ','
        << format_metric(r.accuracy.few) << '\n';
  }
  return out.str();
}

std::string ablation_summary_to_csv(const std::vector<AblationSummary>& summary) {
  std::ostringstream out;
  out << "variant,runs,mean_all,std_all,mean_many,std_many,mean_medium,std_medium,mean_few,std_few\n";
  for (const auto& s : summary) {
    out << s.variant << ',' << s.runs << ',' << format_metric(s.mean_all) << ','
        << format_metric(s.std_all) << ',' << format_metric(s.mean_many) << ','
        << format_metric(s.std_many) << ',' << format_metric(s.mean_medium) << ','
        << format_metric(s.std_medium) << ',' << format_metric(s.mean_few) << ','
        << format_metric(s.std_few) << '\n';
  }
  return out.str();
}

}  // namespace reslt
