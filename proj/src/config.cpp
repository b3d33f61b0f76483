#include "reslt/config.hpp"

#include <fstream>
#include <set>

#include "reslt/errors.hpp"

namespace reslt {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

AssignmentScheme scheme_from(const std::string& s) {
  if (s == "nested") return AssignmentScheme::nested;
  if (s == "disjoint") return AssignmentScheme::disjoint;
  if (s == "disjoint_plus_all") return AssignmentScheme::disjoint_plus_all;
  throw ParameterError("unknown assignment scheme \"" + s + "\"");
}

FusionRule fusion_from(const std::string& s) {
  if (s == "residual_sum") return FusionRule::residual_sum;
  if (s == "elementwise_max") return FusionRule::elementwise_max;
  if (s == "logit_sum") return FusionRule::logit_sum;
  if (s == "softmax_sum") return FusionRule::softmax_sum;
  throw ParameterError("unknown fusion rule \"" + s + "\"");
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ParameterError(where + ": unknown key \"" + key + "\"");
  }
}

}  // namespace

ordered_json variant_to_json(const VariantConfig& v) {
  ordered_json j;
  j["name"] = v.name;
  j["assignment"] = std::string(to_string(v.assignment));
  j["shortcut"] = v.shortcut;
  j["specialization"] = v.specialization;
  j["fusion"] = std::string(to_string(v.fusion));
  j["fixed_groups"] = v.fixed_groups ? ordered_json(*v.fixed_groups) : ordered_json(nullptr);
  return j;
}

VariantConfig variant_from_json(const json& j) {
  if (j.is_string()) return variant_preset(j.get<std::string>());
  if (!j.is_object()) throw ParameterError("variant must be a preset name or an object");
  reject_unknown(j, {"name", "assignment", "shortcut", "specialization", "fusion", "fixed_groups"},
                 "variant");
  VariantConfig v = j.contains("name") ? variant_preset(j["name"].get<std::string>()) : VariantConfig{};
  if (j.contains("assignment")) v.assignment = scheme_from(j["assignment"].get<std::string>());
  if (j.contains("shortcut")) v.shortcut = j["shortcut"].get<bool>();
  if (j.contains("specialization")) v.specialization = j["specialization"].get<bool>();
  if (j.contains("fusion")) v.fusion = fusion_from(j["fusion"].get<std::string>());
  if (j.contains("fixed_groups")) {
    v.fixed_groups = j["fixed_groups"].is_null() ? std::nullopt
                                                 : std::optional<std::size_t>(j["fixed_groups"].get<std::size_t>());
  }
  return v;
}

ordered_json config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["alpha"] = c.alpha;
  j["groups"] = c.groups;
  j["variant"] = variant_to_json(c.variant);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["base_lr"] = c.base_lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  if (const auto* ws = std::get_if<WarmupStep>(&c.schedule)) {
    j["schedule"] = {{"type", "warmup_step"},
                     {"warmup_epochs", ws->warmup_epochs},
                     {"milestones", ws->milestones},
                     {"decay", ws->decay}};
  } else {
    const auto& cos = std::get<Cosine>(c.schedule);
    j["schedule"] = {{"type", "cosine"}, {"start", cos.start}, {"end", cos.end}};
  }
  j["seed"] = c.seed;
  j["hidden"] = c.hidden;
  j["feature_dim"] = c.feature_dim;
  j["classifier_bias"] = c.classifier_bias;
  j["zero_init_classifier"] = c.zero_init_classifier;
  j["split_mode"] = c.split_mode == SplitMode::fixed ? "fixed" : "threshold";
  j["split_thresholds"] = {{"many_above", c.split_thresholds.many_above},
                           {"few_below", c.split_thresholds.few_below}};
  j["eval_every_epoch"] = c.eval_every_epoch;
  return j;
}

TrainConfig config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ParameterError("config must be a JSON object");
  reject_unknown(j,
                 {"alpha", "groups", "variant", "epochs", "batch_size", "base_lr", "momentum",
                  "weight_decay", "schedule", "seed", "hidden", "feature_dim", "classifier_bias",
                  "zero_init_classifier", "split_mode", "split_thresholds", "eval_every_epoch"},
                 "config");
  try {
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("groups")) c.groups = j["groups"].get<std::size_t>();
    if (j.contains("variant")) c.variant = variant_from_json(j["variant"]);
    if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("base_lr")) c.base_lr = j["base_lr"].get<double>();
    if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      const std::string type = s.at("type").get<std::string>();
      if (type == "warmup_step") {
        reject_unknown(s, {"type", "warmup_epochs", "milestones", "decay"}, "schedule");
        WarmupStep ws;
        if (s.contains("warmup_epochs")) ws.warmup_epochs = s["warmup_epochs"].get<std::size_t>();
        if (s.contains("milestones")) ws.milestones = s["milestones"].get<std::vector<std::size_t>>();
        if (s.contains("decay")) ws.decay = s["decay"].get<double>();
        c.schedule = ws;
      } else if (type == "cosine") {
        reject_unknown(s, {"type", "start", "end"}, "schedule");
        Cosine cos;
        if (s.contains("start")) cos.start = s["start"].get<double>();
        if (s.contains("end")) cos.end = s["end"].get<double>();
        c.schedule = cos;
      } else {
        throw ParameterError("unknown schedule type \"" + type + "\"");
      }
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("hidden")) c.hidden = j["hidden"].get<std::vector<std::size_t>>();
    if (j.contains("feature_dim")) c.feature_dim = j["feature_dim"].get<std::size_t>();
    if (j.contains("classifier_bias")) c.classifier_bias = j["classifier_bias"].get<bool>();
    if (j.contains("zero_init_classifier")) c.zero_init_classifier = j["zero_init_classifier"].get<bool>();
    if (j.contains("split_mode")) {
      const auto mode = j["split_mode"].get<std::string>();
      if (mode == "fixed") {
        c.split_mode = SplitMode::fixed;
      } else if (mode == "threshold") {
        c.split_mode = SplitMode::threshold;
      } else {
        throw ParameterError("unknown split_mode \"" + mode + "\"");
      }
    }
    if (j.contains("split_thresholds")) {
      const auto& t = j["split_thresholds"];
      if (t.contains("many_above")) c.split_thresholds.many_above = t["many_above"].get<std::uint32_t>();
      if (t.contains("few_below")) c.split_thresholds.few_below = t["few_below"].get<std::uint32_t>();
    }
    if (j.contains("eval_every_epoch")) c.eval_every_epoch = j["eval_every_epoch"].get<bool>();
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
  return c;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return config_from_json(json::parse(in), std::move(base));
  } catch (const json::parse_error& e) {
    throw ParameterError("config " + path.string() + ": " + e.what());
  }
}

}  // namespace reslt
