#include "reslt/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "reslt/config.hpp"
#include "reslt/data.hpp"
#include "reslt/digest.hpp"
#include "reslt/errors.hpp"
#include "reslt/rng.hpp"
#include "reslt/trainer.hpp"

namespace fs = std::filesystem;

namespace reslt::cli {

namespace {

/// Missing or unreadable input; maps to kMissingInput.
class MissingInput : public Error {
public:
  using Error::Error;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string pct(std::optional<double> v) {
  if (!v) return "NA";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * *v;
  return s.str();
}

std::string join(const ClassCounts& counts) {
  std::string s;
  for (std::size_t i = 0; i < counts.size(); ++i) s += (i ? " " : "") + std::to_string(counts[i]);
  return s;
}

// "" is the empty list.
std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || item[0] == '-')
      throw ParameterError(flag + ": \"" + item + "\" is not a non-negative integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (text.back() == ',') throw ParameterError(flag + ": trailing comma");
  return out;
}

fs::path default_run_dir(std::uint64_t seed) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return fs::path("runs") / (std::string(buf) + "-seed" + std::to_string(seed));
}

LongTailDataset load_input(const fs::path& path) {
  if (!fs::exists(path)) throw MissingInput("dataset not found: " + path.string());
  try {
    return load_dataset(path);
  } catch (const FormatError& e) {
    throw MissingInput("unreadable dataset " + path.string() + ": " + e.what());
  }
}

// Data location and TrainConfig overrides shared by `train` and `ablate`.
struct RunOptions {
  std::string data_dir;
  std::string train_path;
  std::string test_path;
  std::string config_path;
  std::string out_dir;
  std::optional<std::string> variant;
  std::optional<double> alpha;
  std::optional<std::size_t> groups;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<double> momentum;
  std::optional<double> weight_decay;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> hidden;
  std::optional<std::size_t> feature_dim;
  std::optional<std::string> schedule;
  std::optional<std::size_t> warmup_epochs;
  std::optional<std::string> milestones;
  std::optional<std::string> split;

  void attach(CLI::App& app, bool with_variant) {
    app.add_option("--data-dir", data_dir, "Directory holding train.rltd and test.rltd");
    app.add_option("--train", train_path, "Training dataset file (overrides --data-dir)");
    app.add_option("--test", test_path, "Test dataset file (overrides --data-dir)");
    app.add_option("--config", config_path, "JSON config; flags override its values");
    app.add_option("--out-dir", out_dir, "Run directory (default runs/<timestamp>-seed<seed>)");
    if (with_variant) app.add_option("--variant", variant, "Variant preset name");
    app.add_option("--alpha", alpha, "Weight of the branch loss, in [0, 1]");
    app.add_option("--groups", groups, "Number of class groups / branches");
    app.add_option("--epochs", epochs);
    app.add_option("--batch-size", batch_size);
    app.add_option("--lr", lr, "Base learning rate");
    app.add_option("--momentum", momentum);
    app.add_option("--weight-decay", weight_decay);
    app.add_option("--seed", seed);
    app.add_option("--hidden", hidden, "Comma-separated hidden widths of the trunk (\"\" for none)");
    app.add_option("--feature-dim", feature_dim, "Trunk output width c");
    app.add_option("--schedule", schedule, "desk | cifar | cosine");
    app.add_option("--warmup-epochs", warmup_epochs, "Warm-up length of the step schedule");
    app.add_option("--milestones", milestones, "Comma-separated decay epochs of the step schedule (\"\" for none)");
    app.add_option("--split", split, "Evaluation split mode: fixed | threshold");
  }

  TrainConfig config() const {
    TrainConfig c = TrainConfig::desk_preset();
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw MissingInput("config not found: " + config_path);
      c = load_config(config_path, c);
    }
    if (schedule) {
      if (*schedule == "desk") {
        c.schedule = WarmupStep{};
      } else if (*schedule == "cifar") {
        const TrainConfig preset = TrainConfig::cifar_preset();
        c.schedule = preset.schedule;
        c.epochs = preset.epochs;
        c.base_lr = preset.base_lr;
      } else if (*schedule == "cosine") {
        c.schedule = Cosine{c.base_lr, 0.0};
      } else {
        throw ParameterError("unknown schedule \"" + *schedule + "\"");
      }
    }
    if (variant) c.variant = variant_preset(*variant);
    if (alpha) c.alpha = *alpha;
    if (groups) c.groups = *groups;
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (lr) {
      c.base_lr = *lr;
      if (auto* cos = std::get_if<Cosine>(&c.schedule)) cos->start = *lr;
    }
    if (warmup_epochs || milestones) {
      auto* ws = std::get_if<WarmupStep>(&c.schedule);
      if (!ws) throw ParameterError("--warmup-epochs/--milestones need a step schedule");
      if (warmup_epochs) ws->warmup_epochs = *warmup_epochs;
      if (milestones) ws->milestones = parse_size_list(*milestones, "--milestones");
    }
    if (momentum) c.momentum = *momentum;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (seed) c.seed = *seed;
    if (hidden) c.hidden = parse_size_list(*hidden, "--hidden");
    if (feature_dim) c.feature_dim = *feature_dim;
    if (split) {
      if (*split == "fixed") {
        c.split_mode = SplitMode::fixed;
      } else if (*split == "threshold") {
        c.split_mode = SplitMode::threshold;
      } else {
        throw ParameterError("unknown split mode \"" + *split + "\"");
      }
    }
    c.validate();
    return c;
  }

  std::pair<fs::path, fs::path> data_paths() const {
    fs::path train = train_path, test = test_path;
    if (train.empty()) {
      if (data_dir.empty()) throw ParameterError("need --data-dir or --train/--test");
      train = fs::path(data_dir) / "train.rltd";
    }
    if (test.empty()) {
      if (data_dir.empty()) throw ParameterError("need --data-dir or --test");
      test = fs::path(data_dir) / "test.rltd";
    }
    return {train, test};
  }

  fs::path run_dir(std::uint64_t s) const { return out_dir.empty() ? default_run_dir(s) : fs::path(out_dir); }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

nlohmann::ordered_json file_entry(const fs::path& path) {
  return {{"path", path.string()}, {"sha256", sha256_file(path)}};
}

// Run outputs are recorded relative to the run directory so the manifest
// does not depend on where the run was written.
nlohmann::ordered_json output_entry(const fs::path& path) {
  return {{"path", path.filename().string()}, {"sha256", sha256_file(path)}};
}

// ---------------------------------------------------------------------------
// make-data

struct MakeDataOptions {
  bool synth = false;
  std::string idx_images, idx_labels, idx_test_images, idx_test_labels;
  std::size_t k = 9;
  std::size_t dims = 16;
  std::uint32_t nmax = 600;
  std::optional<double> beta;
  double sep = 4.0;
  std::uint64_t seed = 1;
  std::uint32_t test_per_class = 200;
  std::string out_dir = "data";
};

int cmd_make_data(const MakeDataOptions& o, std::ostream& out) {
  if (!o.beta) throw ParameterError("--beta is required");
  const bool idx = !o.idx_images.empty() || !o.idx_labels.empty();
  if (o.synth == idx) throw ParameterError("choose exactly one of --synth or --idx-images/--idx-labels");

  LongTailDataset train_set, test_set;
  if (o.synth) {
    const ClassCounts counts = longtail_counts(o.nmax, o.k, *o.beta);
    auto task = synth_gaussian(o.k, o.dims, counts, o.sep, o.seed, o.test_per_class);
    train_set = std::move(task.train);
    test_set = std::move(task.test);
  } else {
    if (o.idx_labels.empty() || o.idx_test_images.empty() || o.idx_test_labels.empty()) {
      throw ParameterError("IDX input needs --idx-images, --idx-labels, --idx-test-images, --idx-test-labels");
    }
    for (const auto& p : {o.idx_images, o.idx_labels, o.idx_test_images, o.idx_test_labels}) {
      if (!fs::exists(p)) throw MissingInput("IDX file not found: " + p);
    }
    const LabeledData source = load_idx(o.idx_images, o.idx_labels);
    const ClassCounts available = source.class_counts();
    const std::uint32_t nmax = std::min(o.nmax, *std::min_element(available.begin(), available.end()));
    const ClassCounts counts = longtail_counts(nmax, source.num_classes, *o.beta);
    auto sub = subsample_longtail(source, counts, o.seed);
    train_set = std::move(sub.dataset);

    // Balanced test set: every class truncated to the rarest class's size.
    LabeledData test = relabel(load_idx(o.idx_test_images, o.idx_test_labels), sub.original_class);
    const ClassCounts test_counts = test.class_counts();
    const std::uint32_t per_class = *std::min_element(test_counts.begin(), test_counts.end());
    test.num_classes = sub.original_class.size();
    test_set = subsample_longtail(test, ClassCounts(test.num_classes, per_class), o.seed).dataset;
  }

  fs::create_directories(o.out_dir);
  const fs::path train_path = fs::path(o.out_dir) / "train.rltd";
  const fs::path test_path = fs::path(o.out_dir) / "test.rltd";
  save_dataset(train_set, train_path);
  save_dataset(test_set, test_path);

  out << "counts: " << join(train_set.class_counts()) << "\n";
  out << "beta: " << fmt(train_set.beta(), 6) << "\n";
  out << "train: " << train_path.string() << " (" << train_set.size() << " samples, sha256 "
      << sha256_file(train_path) << ")\n";
  out << "test: " << test_path.string() << " (" << test_set.size() << " samples, sha256 "
      << sha256_file(test_path) << ")\n";
  return kSuccess;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunOptions& o, std::ostream& out) {
  const TrainConfig config = o.config();
  const auto [train_path, test_path] = o.data_paths();
  const LongTailDataset train_set = load_input(train_path);
  const LongTailDataset test_set = load_input(test_path);

  const fs::path dir = o.run_dir(config.seed);
  fs::create_directories(dir);

  out << "variant " << config.variant.name << ", alpha " << config.alpha << ", groups "
      << effective_groups(config.variant, config.groups) << ", seed " << config.seed << "\n";
  const TrainResult result = train(train_set, test_set, config, [&](const EpochMetrics& m) {
    if ((m.epoch + 1) % 10 == 0 || m.epoch + 1 == config.epochs) {
      out << "epoch " << m.epoch + 1 << "/" << config.epochs << "  lr " << fmt(m.lr) << "  loss "
          << fmt(m.train_loss) << "  acc " << pct(m.test_acc_all) << "\n";
    }
  });

  const fs::path checkpoint = dir / "checkpoint.rltm";
  const fs::path metrics = dir / "metrics.csv";
  const fs::path report_json = dir / "report.json";
  const fs::path report_csv = dir / "report.csv";
  const fs::path config_json = dir / "config.json";
  save_checkpoint(result.model, checkpoint);
  write_metrics_csv(result.history, metrics);
  emit_report(result.report, report_json, ReportFormat::json);
  emit_report(result.report, report_csv, ReportFormat::csv);
  write_text(config_json, config_to_json(config).dump(2) + "\n");

  nlohmann::ordered_json manifest;
  manifest["tool"] = "reslt";
  manifest["version"] = kToolVersion;
  manifest["command"] = "train";
  manifest["seed"] = config.seed;
  manifest["config"] = config_to_json(config);
  manifest["train_data"] = file_entry(train_path);
  manifest["test_data"] = file_entry(test_path);
  manifest["groups"] = result.groups.group_sizes();
  manifest["outputs"] = {{"checkpoint", output_entry(checkpoint)},
                         {"metrics", output_entry(metrics)},
                         {"report_json", output_entry(report_json)},
                         {"report_csv", output_entry(report_csv)},
                         {"config", output_entry(config_json)}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  const auto& r = result.report.fused;
  out << "test accuracy: all " << pct(r.all) << "  many " << pct(r.many) << "  medium "
      << pct(r.medium) << "  few " << pct(r.few) << "\n";
  for (std::size_t g = 0; g < result.report.per_branch.size(); ++g) {
    const auto& b = result.report.per_branch[g];
    out << "  branch " << g << ": all " << pct(b.all) << "  many " << pct(b.many) << "  medium "
        << pct(b.medium) << "  few " << pct(b.few) << "\n";
  }
  out << "wrote " << dir.string() << "\n";
  return kSuccess;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const RunOptions& o, const std::vector<std::string>& variants, std::size_t n_seeds,
               const std::vector<std::uint64_t>& seed_list, std::size_t threads, std::ostream& out) {
  const TrainConfig config = o.config();
  const auto [train_path, test_path] = o.data_paths();
  const LongTailDataset train_set = load_input(train_path);
  const LongTailDataset test_set = load_input(test_path);

  std::vector<std::uint64_t> seeds = seed_list;
  if (seeds.empty()) {
    for (std::uint64_t s = 0; s < n_seeds; ++s) seeds.push_back(config.seed + s);
  }
  const AblationTable table = run_ablation_suite(train_set, test_set, config, variants, seeds, threads);
  const auto summary = table.summarize();

  const fs::path dir = o.run_dir(config.seed);
  fs::create_directories(dir);
  write_text(dir / "ablation.csv", ablation_to_csv(table));
  write_text(dir / "ablation_summary.csv", ablation_summary_to_csv(summary));
  write_text(dir / "config.json", config_to_json(config).dump(2) + "\n");

  out << std::left << std::setw(20) << "variant" << std::setw(16) << "all" << std::setw(16) << "many"
      << std::setw(16) << "medium" << "few\n";
  auto cell = [](std::optional<double> m, std::optional<double> s) {
    return m ? pct(m) + " +- " + pct(s) : std::string("NA");
  };
  for (const auto& s : summary) {
    out << std::left << std::setw(20) << s.variant << std::setw(16) << cell(s.mean_all, s.std_all)
        << std::setw(16) << cell(s.mean_many, s.std_many) << std::setw(16)
        << cell(s.mean_medium, s.std_medium) << cell(s.mean_few, s.std_few) << "\n";
  }
  out << "wrote " << (dir / "ablation.csv").string() << "\n";
  return kSuccess;
}

}  // namespace

// ---------------------------------------------------------------------------
// gradcheck

GradCheckResult objective_grad_check(const GradCheckOptions& o) {
  if (o.classes < o.groups) throw ParameterError("gradcheck: need at least as many classes as groups");
  TrainConfig config;
  config.alpha = o.alpha;
  config.groups = o.groups;
  config.variant = variant_preset(o.variant);
  config.hidden = {o.hidden};
  config.feature_dim = o.feature;
  config.validate();

  const Rng root(o.seed);
  Model model = init_model({o.input, {o.hidden}, o.feature, o.classes},
                           branch_count(config.variant, o.groups), root.split("model").seed());

  Tensor2D x(o.batch, o.input);
  Rng xr = root.split("inputs");
  for (double& v : x.values()) v = xr.normal();
  std::vector<Label> y(o.batch);
  for (std::size_t i = 0; i < o.batch; ++i) y[i] = static_cast<Label>(i % o.classes);
  Rng yr = root.split("labels");
  std::shuffle(y.begin(), y.end(), yr.engine());

  const std::size_t g = effective_groups(config.variant, o.groups);
  const GroupAssignment groups =
      g == 1 ? GroupAssignment::single(o.classes)
             : partition_groups(longtail_counts(100, o.classes, 0.1), g);
  const auto masks = branch_masks(y, groups, config.variant);
  const Variable input = Variable::constant(x);

  auto loss = [&] {
    const auto logits = forward(model, input, config.variant.specialization);
    return training_objective(logits, y, masks, config).total;
  };
  const auto params = model.parameters();
  return grad_check(loss, params, o.epsilon);
}

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual-fusion long-tailed classification laboratory", "reslt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  MakeDataOptions make;
  auto* make_cmd = app.add_subcommand("make-data", "Build a long-tailed train set and balanced test set");
  make_cmd->add_flag("--synth", make.synth, "Gaussian-mixture synthetic data");
  make_cmd->add_option("--idx-images", make.idx_images);
  make_cmd->add_option("--idx-labels", make.idx_labels);
  make_cmd->add_option("--idx-test-images", make.idx_test_images);
  make_cmd->add_option("--idx-test-labels", make.idx_test_labels);
  make_cmd->add_option("--k", make.k, "Number of classes (synthetic)");
  make_cmd->add_option("--dims", make.dims, "Feature dimension (synthetic)");
  make_cmd->add_option("--nmax", make.nmax, "Samples in the most frequent class");
  make_cmd->add_option("--beta", make.beta, "Imbalance factor N_min / N_max");
  make_cmd->add_option("--sep", make.sep, "Class-mean separation (synthetic)");
  make_cmd->add_option("--seed", make.seed);
  make_cmd->add_option("--test-per-class", make.test_per_class);
  make_cmd->add_option("--out-dir", make.out_dir);

  RunOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train one variant and write checkpoint, metrics and report");
  train_opts.attach(*train_cmd, true);

  RunOptions ablate_opts;
  std::vector<std::string> variants = ablation_variant_names();
  std::size_t n_seeds = 3;
  std::vector<std::uint64_t> seed_list;
  std::size_t threads = 1;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train the ablation variants over paired seeds");
  ablate_opts.attach(*ablate_cmd, false);
  ablate_cmd->add_option("--variants", variants, "Comma-separated variant names")->delimiter(',');
  ablate_cmd->add_option("--seeds", n_seeds, "Number of seeds, counting up from --seed");
  ablate_cmd->add_option("--seed-list", seed_list, "Explicit comma-separated seeds")->delimiter(',');
  ablate_cmd->add_option("--threads", threads, "Worker threads for independent runs");

  GradCheckOptions gc;
  std::optional<double> gc_alpha;
  double threshold = 1e-3;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full objective");
  gc_cmd->add_option("--alpha", gc_alpha, "Single alpha (default: 0, 0.5, 0.995, 1)");
  gc_cmd->add_option("--epsilon", gc.epsilon);
  gc_cmd->add_option("--threshold", threshold, "Pass iff max relative error < threshold");
  gc_cmd->add_option("--seed", gc.seed);
  gc_cmd->add_option("--variant", gc.variant);
  gc_cmd->add_option("--dims", gc.input);
  gc_cmd->add_option("--hidden", gc.hidden);
  gc_cmd->add_option("--feature-dim", gc.feature);
  gc_cmd->add_option("--k", gc.classes);
  gc_cmd->add_option("--groups", gc.groups);
  gc_cmd->add_option("--batch", gc.batch);

  std::vector<std::string> argv_tail(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(argv_tail.begin(), argv_tail.end());  // CLI11 consumes a reversed vector
  try {
    app.parse(argv_tail);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (*make_cmd) return cmd_make_data(make, out);
    if (*train_cmd) return cmd_train(train_opts, out);
    if (*ablate_cmd) return cmd_ablate(ablate_opts, variants, n_seeds, seed_list, threads, out);
    if (*gc_cmd) {
      const std::vector<double> alphas = gc_alpha ? std::vector<double>{*gc_alpha}
                                                  : std::vector<double>{0.0, 0.5, 0.995, 1.0};
      bool ok = true;
      for (double a : alphas) {
        GradCheckOptions opt = gc;
        opt.alpha = a;
        const auto r = objective_grad_check(opt);
        const bool pass = r.max_relative_error < threshold;
        ok = ok && pass;
        out << "alpha " << a << ": max relative error " << std::scientific << std::setprecision(3)
            << r.max_relative_error << std::defaultfloat << " over " << r.checked << " parameters ("
            << (pass ? "PASS" : "FAIL") << ", threshold " << threshold << ")\n";
      }
      return ok ? kSuccess : kFailure;
    }
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const MissingInput& e) {
    err << "error: " << e.what() << "\n";
    return kMissingInput;
  } catch (const DivergedError& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace reslt::cli
