#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "reslt/cli.hpp"
#include "reslt/digest.hpp"
#include "reslt/evalreport.hpp"
#include "reslt/model.hpp"

using namespace reslt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "reslt");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "reslt_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small long-tailed task shared by the training tests.
fs::path small_data() {
  static const fs::path dir = [] {
    const fs::path d = fresh_dir("small_data");
    const auto r = run({"make-data", "--synth", "--k", "6", "--dims", "5", "--nmax", "60", "--beta", "0.1",
                        "--sep", "4", "--seed", "2", "--test-per-class", "10", "--out-dir", d.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

}  // namespace

TEST(CliMakeData, SyntheticEchoesBetaAndWritesFiles) {
  const fs::path d = fresh_dir("make");
  const auto r = run({"make-data", "--synth", "--k", "9", "--dims", "16", "--nmax", "600", "--beta", "0.02",
                      "--sep", "4", "--seed", "1", "--out-dir", d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("beta: 0.02\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("counts: 600 368 226 138 85 52 32 20 12"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(d / "train.rltd"));
  EXPECT_TRUE(fs::exists(d / "test.rltd"));
}

TEST(CliMakeData, SameArgumentsGiveSameDigests) {
  const fs::path a = fresh_dir("make_a"), b = fresh_dir("make_b");
  for (const auto& d : {a, b}) {
    ASSERT_EQ(run({"make-data", "--synth", "--k", "4", "--dims", "3", "--nmax", "40", "--beta", "0.25",
                   "--seed", "8", "--out-dir", d.string()})
                  .code,
              0);
  }
  EXPECT_EQ(sha256_file(a / "train.rltd"), sha256_file(b / "train.rltd"));
  EXPECT_EQ(sha256_file(a / "test.rltd"), sha256_file(b / "test.rltd"));
}

TEST(CliMakeData, MissingBetaIsUsageError) {
  const auto r = run({"make-data", "--synth", "--out-dir", fresh_dir("nobeta").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("beta"), std::string::npos);
}

TEST(CliMakeData, BadBetaIsUsageError) {
  EXPECT_EQ(run({"make-data", "--synth", "--beta", "1.5", "--out-dir", fresh_dir("badbeta").string()}).code, 2);
}

TEST(CliMakeData, IdxRoute) {
  const fs::path d = fresh_dir("idx");
  auto be32 = [](std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  };
  auto write_pair = [&](const std::string& stem, std::size_t per_class) {
    std::vector<std::uint8_t> img, lbl;
    const std::uint32_t n = static_cast<std::uint32_t>(3 * per_class);
    be32(img, 0x803);
    be32(img, n);
    be32(img, 2);
    be32(img, 2);
    be32(lbl, 0x801);
    be32(lbl, n);
    for (std::uint32_t i = 0; i < n; ++i) {
      for (int p = 0; p < 4; ++p) img.push_back(static_cast<std::uint8_t>((i * 7 + p) % 256));
      lbl.push_back(static_cast<std::uint8_t>(i % 3));
    }
    std::ofstream(d / (stem + "-images.idx"), std::ios::binary).write(reinterpret_cast<char*>(img.data()), img.size());
    std::ofstream(d / (stem + "-labels.idx"), std::ios::binary).write(reinterpret_cast<char*>(lbl.data()), lbl.size());
  };
  write_pair("train", 20);
  write_pair("test", 5);
  const auto r = run({"make-data", "--idx-images", (d / "train-images.idx").string(), "--idx-labels",
                      (d / "train-labels.idx").string(), "--idx-test-images", (d / "test-images.idx").string(),
                      "--idx-test-labels", (d / "test-labels.idx").string(), "--nmax", "20", "--beta", "0.5",
                      "--out-dir", (d / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto train = load_dataset(d / "out" / "train.rltd");
  EXPECT_EQ(train.class_counts(), (ClassCounts{20, 14, 10}));
  EXPECT_EQ(train.dim(), 4u);
  EXPECT_EQ(load_dataset(d / "out" / "test.rltd").class_counts(), ClassCounts(3, 5));

  EXPECT_EQ(run({"make-data", "--idx-images", (d / "missing.idx").string(), "--idx-labels",
                 (d / "train-labels.idx").string(), "--idx-test-images", (d / "test-images.idx").string(),
                 "--idx-test-labels", (d / "test-labels.idx").string(), "--beta", "0.5"})
                .code,
            3);
}

TEST(CliTrain, WritesArtifactsAndManifest) {
  const fs::path out = fresh_dir("train_run");
  const auto r = run({"train", "--data-dir", small_data().string(), "--epochs", "4", "--warmup-epochs", "1", "--milestones", "3", "--out-dir", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"checkpoint.rltm", "metrics.csv", "report.json", "report.csv", "config.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["train_data"]["sha256"], sha256_file(small_data() / "train.rltd"));
  EXPECT_EQ(manifest["outputs"]["checkpoint"]["sha256"], sha256_file(out / "checkpoint.rltm"));
  EXPECT_EQ(manifest["config"]["epochs"], 4);
  EXPECT_EQ(manifest["version"], cli::kToolVersion);
  const auto metrics = slurp(out / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')),
            "epoch,lr,train_loss,fusion_loss,branch_loss_sum,test_acc_all,test_acc_many,test_acc_medium,test_acc_few");
  EXPECT_NO_THROW(load_report(out / "report.json", ReportFormat::json));
  EXPECT_NO_THROW(load_checkpoint(out / "checkpoint.rltm"));
}

TEST(CliTrain, RepeatRunsAreBitIdentical) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  for (const auto& d : {a, b}) {
    ASSERT_EQ(run({"train", "--data-dir", small_data().string(), "--epochs", "3", "--warmup-epochs", "1", "--milestones", "2", "--seed", "7", "--out-dir",
                   d.string()})
                  .code,
              0);
  }
  for (const char* f : {"checkpoint.rltm", "metrics.csv", "report.json", "manifest.json"})
    EXPECT_EQ(sha256_file(a / f), sha256_file(b / f)) << f;
}

TEST(CliTrain, AlphaOutOfRangeIsUsageError) {
  const auto r = run({"train", "--data-dir", small_data().string(), "--alpha", "1.2", "--out-dir",
                      fresh_dir("alpha").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("alpha"), std::string::npos);
}

TEST(CliTrain, MissingDatasetExitsThreeWithPath) {
  const auto r = run({"train", "--data-dir", "/no/such/dir", "--out-dir", fresh_dir("missing").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("/no/such/dir/train.rltd"), std::string::npos) << r.err;
}

TEST(CliTrain, DivergenceExitsFourNamingEpoch) {
  const auto r = run({"train", "--data-dir", small_data().string(), "--lr", "1e8", "--epochs", "3", "--warmup-epochs", "1", "--milestones", "2", "--out-dir",
                      fresh_dir("diverge").string()});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("epoch"), std::string::npos) << r.err;
}

TEST(CliTrain, VariantBaselineTwoUsesLogitSum) {
  const fs::path out = fresh_dir("b2");
  ASSERT_EQ(run({"train", "--data-dir", small_data().string(), "--variant", "baseline2", "--epochs", "2", "--warmup-epochs", "1", "--milestones", "1",
                 "--out-dir", out.string()})
                .code,
            0);
  const auto cfg = nlohmann::json::parse(slurp(out / "config.json"));
  EXPECT_EQ(cfg["variant"]["assignment"], "disjoint");
  EXPECT_EQ(cfg["variant"]["fusion"], "logit_sum");
}

TEST(CliTrain, FlagsOverrideConfigFile) {
  const fs::path out = fresh_dir("cfg");
  std::ofstream(out / "c.json") << R"({"epochs": 2, "alpha": 0.5, "variant": "no_shortcut", "hidden": [8],
                                 "schedule": {"type": "warmup_step", "warmup_epochs": 1, "milestones": []}})";
  ASSERT_EQ(run({"train", "--data-dir", small_data().string(), "--config", (out / "c.json").string(), "--alpha",
                 "0.9", "--out-dir", out.string()})
                .code,
            0);
  const auto cfg = nlohmann::json::parse(slurp(out / "config.json"));
  EXPECT_EQ(cfg["epochs"], 2);
  EXPECT_EQ(cfg["alpha"], 0.9);
  EXPECT_EQ(cfg["variant"]["name"], "no_shortcut");
  EXPECT_EQ(cfg["hidden"], nlohmann::json::array({8}));

  std::ofstream(out / "bad.json") << R"({"epochs": 2, "alhpa": 0.5})";
  EXPECT_EQ(run({"train", "--data-dir", small_data().string(), "--config", (out / "bad.json").string()}).code, 2);
}

TEST(CliTrain, ListFlags) {
  const fs::path out = fresh_dir("lists");
  ASSERT_EQ(run({"train", "--data-dir", small_data().string(), "--epochs", "2", "--warmup-epochs", "0",
                 "--milestones", "", "--hidden", "12,6", "--out-dir", out.string()})
                .code,
            0);
  const auto cfg = nlohmann::json::parse(slurp(out / "config.json"));
  EXPECT_EQ(cfg["schedule"]["milestones"], nlohmann::json::array());
  EXPECT_EQ(cfg["hidden"], nlohmann::json::array({12, 6}));

  ASSERT_EQ(run({"train", "--data-dir", small_data().string(), "--epochs", "2", "--warmup-epochs", "1",
                 "--milestones", "1", "--hidden", "", "--out-dir", out.string()})
                .code,
            0);
  EXPECT_EQ(nlohmann::json::parse(slurp(out / "config.json"))["hidden"], nlohmann::json::array());

  for (const char* bad : {"x", "3,", "-1", "2,,3"})
    EXPECT_EQ(run({"train", "--data-dir", small_data().string(), "--hidden", bad}).code, 2) << bad;
}

TEST(CliGradcheck, DefaultPasses) {
  const auto r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 4);
}

TEST(CliGradcheck, ZeroThresholdFails) { EXPECT_EQ(run({"gradcheck", "--threshold", "0"}).code, 1); }

TEST(CliGradcheck, AlphaEndpointsPass) {
  EXPECT_EQ(run({"gradcheck", "--alpha", "0"}).code, 0);
  EXPECT_EQ(run({"gradcheck", "--alpha", "1"}).code, 0);
}

TEST(CliAblate, TableShapeAndPairedSeeds) {
  const fs::path out = fresh_dir("ablate");
  const auto r = run({"ablate", "--data-dir", small_data().string(), "--epochs", "2", "--warmup-epochs", "1", "--milestones", "1", "--seeds", "3", "--threads",
                      "2", "--out-dir", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(out / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "variant,seed,acc_all,acc_many,acc_medium,acc_few");
  std::map<std::string, std::vector<std::string>> seeds;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    seeds[line.substr(0, c1)].push_back(line.substr(c1 + 1, c2 - c1 - 1));
    ++rows;
  }
  EXPECT_EQ(rows, 21u);
  std::vector<std::string> names;
  for (const auto& [v, s] : seeds) {
    names.push_back(v);
    EXPECT_EQ(s, (std::vector<std::string>{"1", "2", "3"})) << v;
  }
  std::vector<std::string> want = ablation_variant_names();
  std::sort(want.begin(), want.end());
  EXPECT_EQ(names, want);
  EXPECT_TRUE(fs::exists(out / "ablation_summary.csv"));
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"train", "--variant", "nope", "--data-dir", small_data().string()}).code, 2);
}
