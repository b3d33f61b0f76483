#include "reslt/model.hpp"

#include <algorithm>
#include <cmath>

#include "byte_io.hpp"
#include "reslt/data.hpp"
#include "reslt/errors.hpp"
#include "reslt/rng.hpp"

namespace reslt {

// ---------------------------------------------------------------------------
// Variants

VariantConfig variant_preset(std::string_view name) {
  VariantConfig v;
  v.name = std::string(name);
  if (name == "reslt") return v;
  if (name == "no_specialization") {
    v.specialization = false;
    return v;
  }
  if (name == "no_shortcut") {
    v.shortcut = false;
    return v;
  }
  if (name == "baseline1" || name == "baseline2" || name == "baseline3") {
    v.assignment = AssignmentScheme::disjoint;
    v.fusion = name == "baseline1"   ? FusionRule::elementwise_max
               : name == "baseline2" ? FusionRule::logit_sum
                                     : FusionRule::softmax_sum;
    return v;
  }
  if (name == "ce") {
    v.fixed_groups = 1;
    return v;
  }
  if (name == "weak_reslt") {
    v.assignment = AssignmentScheme::disjoint_plus_all;
    return v;
  }
  throw ParameterError("unknown variant \"" + std::string(name) + "\"");
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"reslt",     "no_specialization", "no_shortcut",
                                              "baseline1", "baseline2",         "baseline3",
                                              "ce",        "weak_reslt"};
  return names;
}

const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names{"reslt",     "no_specialization", "no_shortcut",
                                              "baseline1", "baseline2",         "baseline3",
                                              "ce"};
  return names;
}

std::string_view to_string(AssignmentScheme scheme) {
  switch (scheme) {
    case AssignmentScheme::nested: return "nested";
    case AssignmentScheme::disjoint: return "disjoint";
    case AssignmentScheme::disjoint_plus_all: return "disjoint_plus_all";
  }
  return "?";
}

std::string_view to_string(FusionRule rule) {
  switch (rule) {
    case FusionRule::residual_sum: return "residual_sum";
    case FusionRule::elementwise_max: return "elementwise_max";
    case FusionRule::logit_sum: return "logit_sum";
    case FusionRule::softmax_sum: return "softmax_sum";
  }
  return "?";
}

std::size_t effective_groups(const VariantConfig& variant, std::size_t groups) {
  return variant.fixed_groups.value_or(groups);
}

std::size_t branch_count(const VariantConfig& variant, std::size_t groups) {
  const std::size_t g = effective_groups(variant, groups);
  return variant.assignment == AssignmentScheme::disjoint_plus_all ? g + 1 : g;
}

// ---------------------------------------------------------------------------
// Model

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : backbone) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  for (auto& l : branches) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&classifier);
  if (classifier_bias) out.push_back(&*classifier_bias);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

namespace {

Tensor2D uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng rng) {
  Tensor2D t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

LinearLayer make_linear(const std::string& name, std::size_t in, std::size_t out, const Rng& root) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return {Parameter(name + ".weight", uniform_tensor(out, in, bound, root.split(name + ".weight"))),
          Parameter(name + ".bias", uniform_tensor(1, out, bound, root.split(name + ".bias")))};
}

Variable linear_forward(const LinearLayer& layer, const Variable& x) {
  return add_row_bias(matmul_nt(x, layer.weight.var), layer.bias.var);
}

Variable classify(const Model& model, const Variable& h) {
  Variable logits = matmul_nt(h, model.classifier.var);
  if (model.classifier_bias) logits = add_row_bias(logits, model.classifier_bias->var);
  return logits;
}

}  // namespace

Model init_model(const ModelDims& dims, std::size_t num_branches, std::uint64_t seed,
                 InitOptions options) {
  if (dims.input == 0 || dims.feature == 0 || dims.classes == 0) {
    throw ParameterError("model dimensions must be positive");
  }
  if (num_branches == 0) throw ParameterError("model needs at least one branch");

  const Rng root(seed);
  Model m;
  m.dims = dims;
  std::size_t in = dims.input;
  std::vector<std::size_t> widths = dims.hidden;
  widths.push_back(dims.feature);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    m.backbone.push_back(make_linear("backbone." + std::to_string(i), in, widths[i], root));
    in = widths[i];
  }
  for (std::size_t g = 0; g < num_branches; ++g) {
    m.branches.push_back(make_linear("branch." + std::to_string(g), dims.feature, dims.feature, root));
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(dims.feature));
  m.classifier = Parameter("classifier.weight",
                           options.zero_classifier
                               ? Tensor2D(dims.classes, dims.feature)
                               : uniform_tensor(dims.classes, dims.feature, bound,
                                                root.split("classifier.weight")));
  if (options.classifier_bias) {
    m.classifier_bias = Parameter("classifier.bias",
                                  options.zero_classifier
                                      ? Tensor2D(1, dims.classes)
                                      : uniform_tensor(1, dims.classes, bound,
                                                       root.split("classifier.bias")));
  }
  return m;
}

Variable backbone_forward(const Model& model, const Variable& x) {
  if (x.value().cols() != model.dims.input) {
    throw ShapeError("backbone expects " + std::to_string(model.dims.input) +
                     " input features, got " + x.value().shape_string());
  }
  Variable h = x;
  for (const auto& layer : model.backbone) h = relu(linear_forward(layer, h));
  return h;
}

std::vector<Variable> head_forward(const Model& model, const Variable& features,
                                   bool specialization) {
  if (features.value().cols() != model.dims.feature) {
    throw ShapeError("head expects " + std::to_string(model.dims.feature) + " features, got " +
                     features.value().shape_string());
  }
  std::vector<Variable> logits;
  logits.reserve(model.num_branches());
  if (!specialization) {
    Variable shared = classify(model, relu(linear_forward(model.branches.front(), features)));
    logits.assign(model.num_branches(), shared);
    return logits;
  }
  for (const auto& branch : model.branches) {
    logits.push_back(classify(model, relu(linear_forward(branch, features))));
  }
  return logits;
}

std::vector<Variable> forward(const Model& model, const Variable& x, bool specialization) {
  return head_forward(model, backbone_forward(model, x), specialization);
}

std::vector<Tensor2D> branch_logits(const Model& model, const Tensor2D& x, bool specialization) {
  std::vector<Tensor2D> out;
  for (const auto& v : forward(model, Variable::constant(x), specialization)) out.push_back(v.value());
  return out;
}

// ---------------------------------------------------------------------------
// Fusion and prediction

Tensor2D fuse(std::span<const Tensor2D> logits, FusionRule rule) {
  if (logits.empty()) throw ShapeError("fuse: no branch logits");
  const std::size_t rows = logits.front().rows(), cols = logits.front().cols();
  for (const auto& l : logits) {
    if (l.rows() != rows || l.cols() != cols) {
      throw ShapeError("fuse: branch shapes differ: " + logits.front().shape_string() + " vs " +
                       l.shape_string());
    }
  }

  Tensor2D out(rows, cols);
  auto acc = out.values();
  switch (rule) {
    case FusionRule::residual_sum:
    case FusionRule::logit_sum:
      std::copy(logits.front().values().begin(), logits.front().values().end(), acc.begin());
      for (std::size_t g = 1; g < logits.size(); ++g) {
        const auto v = logits[g].values();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
      }
      break;
    case FusionRule::elementwise_max:
      std::copy(logits.front().values().begin(), logits.front().values().end(), acc.begin());
      for (std::size_t g = 1; g < logits.size(); ++g) {
        const auto v = logits[g].values();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = std::max(acc[i], v[i]);
      }
      break;
    case FusionRule::softmax_sum:
      for (const auto& l : logits) {
        const Tensor2D p = softmax_rows(l);
        const auto v = p.values();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
      }
      break;
  }
  return out;
}

std::vector<Label> argmax_rows(const Tensor2D& scores) {
  std::vector<Label> out(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto r = scores.row(i);
    // max_element returns the first maximum, i.e. the smallest index on ties.
    out[i] = static_cast<Label>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

Tensor2D decision_scores(std::span<const Tensor2D> logits, const VariantConfig& variant) {
  if (logits.empty()) throw ShapeError("decision_scores: no branch logits");
  if (!variant.shortcut) return logits.front();
  return fuse(logits, variant.fusion);
}

std::vector<Label> predict(const Model& model, const Tensor2D& x, const VariantConfig& variant) {
  const auto logits = branch_logits(model, x, variant.specialization);
  return argmax_rows(decision_scores(logits, variant));
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// "RLTM", u32 version, u32 input, u32 #hidden, #hidden x u32, u32 feature,
// u32 classes, u32 branches, u32 classifier_bias, u32 #params, then per
// parameter u32 rows, u32 cols, rows*cols x f64. Little-endian.

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  detail::ByteWriter w;
  w.magic("RLTM");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.dims.input));
  w.u32(static_cast<std::uint32_t>(model.dims.hidden.size()));
  for (std::size_t h : model.dims.hidden) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(model.dims.feature));
  w.u32(static_cast<std::uint32_t>(model.dims.classes));
  w.u32(static_cast<std::uint32_t>(model.num_branches()));
  w.u32(model.classifier_bias ? 1 : 0);
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.u32(static_cast<std::uint32_t>(p->tensor().rows()));
    w.u32(static_cast<std::uint32_t>(p->tensor().cols()));
    for (double v : p->tensor().values()) w.f64(v);
  }
  return w.take();
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  r.expect_magic("RLTM");
  const std::size_t version_at = r.offset();
  if (const auto version = r.u32(); version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), version_at);
  }
  ModelDims dims;
  dims.input = r.u32();
  const std::uint32_t n_hidden = r.u32();
  for (std::uint32_t i = 0; i < n_hidden; ++i) dims.hidden.push_back(r.u32());
  dims.feature = r.u32();
  dims.classes = r.u32();
  const std::uint32_t branches = r.u32();
  const std::uint32_t has_bias = r.u32();

  Model m = [&] {
    try {
      return init_model(dims, branches, 0, InitOptions{has_bias != 0, true});
    } catch (const Error& e) {
      throw FormatError(std::string("checkpoint: ") + e.what(), r.offset());
    }
  }();
  auto params = m.parameters();
  const std::size_t count_at = r.offset();
  if (r.u32() != params.size()) {
    throw FormatError("checkpoint: parameter count does not match header dims", count_at);
  }
  for (Parameter* p : params) {
    const std::size_t at = r.offset();
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows != p->tensor().rows() || cols != p->tensor().cols()) {
      throw FormatError("checkpoint: " + p->name + " has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", expected " + p->tensor().shape_string(),
                        at);
    }
    for (double& v : p->tensor().values()) v = r.f64();
  }
  r.expect_end();
  return m;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace reslt
