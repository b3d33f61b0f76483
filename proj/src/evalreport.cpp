#include "reslt/evalreport.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "reslt/errors.hpp"

namespace reslt {

namespace {

std::optional<double> ratio(std::size_t correct, std::size_t total) {
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

SplitAccuracy score(std::span<const Label> predictions, std::span<const Label> labels,
                    const EvalSplit& split, SplitCounts* counts_out) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("score: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ShapeError("score: empty test set");

  std::vector<EvalSplit::Part> part_of(split.num_classes());
  for (std::size_t c = 0; c < part_of.size(); ++c) part_of[c] = split.part_of(c);

  SplitCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= part_of.size()) {
      throw LabelError("score: label " + std::to_string(labels[i]) + " outside evaluation split");
    }
    const bool hit = predictions[i] == labels[i];
    ++c.total;
    c.correct += hit;
    switch (part_of[labels[i]]) {
      case EvalSplit::Part::many:
        ++c.many;
        c.many_correct += hit;
        break;
      case EvalSplit::Part::medium:
        ++c.medium;
        c.medium_correct += hit;
        break;
      case EvalSplit::Part::few:
        ++c.few;
        c.few_correct += hit;
        break;
    }
  }
  if (counts_out) *counts_out = c;
  return {*ratio(c.correct, c.total), ratio(c.many_correct, c.many),
          ratio(c.medium_correct, c.medium), ratio(c.few_correct, c.few)};
}

EvalReport evaluate(const Model& model, const LongTailDataset& test, const EvalSplit& split,
                    const VariantConfig& variant) {
  if (test.num_classes() != model.dims.classes) {
    throw ShapeError("evaluate: test set has " + std::to_string(test.num_classes()) +
                     " classes, model " + std::to_string(model.dims.classes));
  }
  const auto logits = branch_logits(model, test.features(), variant.specialization);
  const auto predictions = argmax_rows(decision_scores(logits, variant));

  EvalReport report;
  report.fused = score(predictions, test.labels(), split, &report.counts);

  std::vector<std::size_t> per_total(test.num_classes(), 0), per_correct(test.num_classes(), 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    ++per_total[test.labels()[i]];
    per_correct[test.labels()[i]] += predictions[i] == test.labels()[i];
  }
  for (std::size_t c = 0; c < per_total.size(); ++c) {
    report.per_class_acc.push_back(ratio(per_correct[c], per_total[c]));
  }

  for (const auto& l : logits) report.per_branch.push_back(score(argmax_rows(l), test.labels(), split));
  return report;
}

std::array<bool, 3> branch_dominance_check(const EvalReport& report) {
  if (report.per_branch.size() != 3) {
    throw ParameterError("branch dominance check needs exactly 3 branches, got " +
                         std::to_string(report.per_branch.size()));
  }
  std::array<bool, 3> out{false, false, false};
  const auto& main = report.per_branch[0];
  if (main.many && main.medium && main.few) {
    out[0] = *main.many >= *main.medium && *main.medium >= *main.few;
  }
  const auto& mid = report.per_branch[1];
  if (mid.many && mid.medium) out[1] = *mid.medium >= *mid.many;
  const auto& tail = report.per_branch[2];
  if (tail.few) {
    out[2] = (!tail.many || *tail.few >= *tail.many) && (!tail.medium || *tail.few >= *tail.medium);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string format_metric(std::optional<double> value) {
  if (!value) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *value);
  return buf;
}

namespace {

using nlohmann::ordered_json;

ordered_json metric_json(std::optional<double> v) {
  return v ? ordered_json(*v) : ordered_json("NA");
}

std::optional<double> metric_from_json(const ordered_json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() != "NA") throw FormatError("report: unexpected string metric", 0);
    return std::nullopt;
  }
  return j.get<double>();
}

ordered_json split_json(const SplitAccuracy& s) {
  ordered_json j;
  j["acc_all"] = s.all;
  j["acc_many"] = metric_json(s.many);
  j["acc_medium"] = metric_json(s.medium);
  j["acc_few"] = metric_json(s.few);
  return j;
}

SplitAccuracy split_from_json(const ordered_json& j) {
  return {j.at("acc_all").get<double>(), metric_from_json(j.at("acc_many")),
          metric_from_json(j.at("acc_medium")), metric_from_json(j.at("acc_few"))};
}

std::optional<double> parse_metric(const std::string& s) {
  if (s == "NA") return std::nullopt;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw FormatError("report: bad number \"" + s + "\"", 0);
  return v;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  ordered_json j = split_json(report.fused);
  j["per_class_acc"] = ordered_json::array();
  for (const auto& v : report.per_class_acc) j["per_class_acc"].push_back(metric_json(v));
  j["per_branch"] = ordered_json::array();
  for (const auto& b : report.per_branch) j["per_branch"].push_back(split_json(b));
  const auto& c = report.counts;
  j["counts"] = {{"total", c.total},   {"correct", c.correct},
                 {"many", c.many},     {"many_correct", c.many_correct},
                 {"medium", c.medium}, {"medium_correct", c.medium_correct},
                 {"few", c.few},       {"few_correct", c.few_correct}};
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    EvalReport r;
    r.fused = split_from_json(j);
    for (const auto& v : j.at("per_class_acc")) r.per_class_acc.push_back(metric_from_json(v));
    for (const auto& b : j.at("per_branch")) r.per_branch.push_back(split_from_json(b));
    const auto& c = j.at("counts");
    r.counts = {c.at("total"),  c.at("correct"),        c.at("many"), c.at("many_correct"),
                c.at("medium"), c.at("medium_correct"), c.at("few"),  c.at("few_correct")};
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report json: ") + e.what(), 0);
  }
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "scope,index,metric,value\n";
  auto split_rows = [&](const std::string& scope, const std::string& index, const SplitAccuracy& s) {
    out << scope << ',' << index << ",acc_all," << format_metric(s.all) << '\n';
    out << scope << ',' << index << ",acc_many," << format_metric(s.many) << '\n';
    out << scope << ',' << index << ",acc_medium," << format_metric(s.medium) << '\n';
    out << scope << ',' << index << ",acc_few," << format_metric(s.few) << '\n';
  };
  split_rows("fused", "", report.fused);
  for (std::size_t c = 0; c < report.per_class_acc.size(); ++c) {
    out << "class," << c << ",acc," << format_metric(report.per_class_acc[c]) << '\n';
  }
  for (std::size_t g = 0; g < report.per_branch.size(); ++g) {
    split_rows("branch", std::to_string(g), report.per_branch[g]);
  }
  const auto& c = report.counts;
  const std::pair<const char*, std::size_t> counts[] = {
      {"total", c.total},   {"correct", c.correct},        {"many", c.many},
      {"many_correct", c.many_correct}, {"medium", c.medium}, {"medium_correct", c.medium_correct},
      {"few", c.few},       {"few_correct", c.few_correct}};
  for (const auto& [name, v] : counts) out << "count,," << name << ',' << v << '\n';
  return out.str();
}

EvalReport report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "scope,index,metric,value") {
    throw FormatError("report csv: missing header", 0);
  }
  EvalReport r;
  std::map<std::string, std::size_t> count_fields;
  auto assign = [](SplitAccuracy& s, const std::string& metric, std::optional<double> v) {
    if (metric == "acc_all") {
      if (!v) throw FormatError("report csv: acc_all cannot be NA", 0);
      s.all = *v;
    } else if (metric == "acc_many") {
      s.many = v;
    } else if (metric == "acc_medium") {
      s.medium = v;
    } else if (metric == "acc_few") {
      s.few = v;
    } else {
      throw FormatError("report csv: unknown metric " + metric, 0);
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw FormatError("report csv: malformed row \"" + line + "\"", 0);
    const auto& [scope, index, metric, value] = std::tie(f[0], f[1], f[2], f[3]);
    if (scope == "fused") {
      assign(r.fused, metric, parse_metric(value));
    } else if (scope == "class") {
      const std::size_t c = std::stoul(index);
      if (r.per_class_acc.size() <= c) r.per_class_acc.resize(c + 1);
      r.per_class_acc[c] = parse_metric(value);
    } else if (scope == "branch") {
      const std::size_t g = std::stoul(index);
      if (r.per_branch.size() <= g) r.per_branch.resize(g + 1);
      assign(r.per_branch[g], metric, parse_metric(value));
    } else if (scope == "count") {
      count_fields[metric] = std::stoul(value);
    } else {
      throw FormatError("report csv: unknown scope " + scope, 0);
    }
  }
  auto get = [&](const char* k) { return count_fields.count(k) ? count_fields.at(k) : 0; };
  r.counts = {get("total"),  get("correct"),        get("many"), get("many_correct"),
              get("medium"), get("medium_correct"), get("few"),  get("few_correct")};
  return r;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report to " + path.string());
  out << (format == ReportFormat::json ? report_to_json(report) : report_to_csv(report));
  if (!out) throw IoError("error writing report to " + path.string());
}

EvalReport load_report(const std::filesystem::path& path, ReportFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return format == ReportFormat::json ? report_from_json(buf.str()) : report_from_csv(buf.str());
}

}  // namespace reslt
