#include "reslt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "reslt/errors.hpp"

namespace reslt {

// ---------------------------------------------------------------------------
// Tensor2D

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw ShapeError("tensor of shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " given " + std::to_string(values_.size()) + " values");
  }
}

Tensor2D Tensor2D::identity(std::size_t n) {
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::span<double> Tensor2D::grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
  return grad_;
}

void Tensor2D::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

bool Tensor2D::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor2D::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

// ---------------------------------------------------------------------------
// Plain kernels

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape_string() + " * " + b.shape_string());
  }
  Tensor2D c(a.rows(), b.cols());
  const std::size_t n = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt shape mismatch: " + a.shape_string() + " * " + b.shape_string() +
                     "^T");
  }
  Tensor2D c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      c(i, j) = s;
    }
  }
  return c;
}

Tensor2D relu(const Tensor2D& a) {
  Tensor2D out(a.rows(), a.cols());
  auto src = a.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return out;
}

Tensor2D softmax_rows(const Tensor2D& logits) {
  Tensor2D out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      out(i, j) = std::exp(r[j] - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) /= z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph

Variable Variable::leaf(Tensor2D value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->tensor = std::move(value);
  node->requires_grad = requires_grad;
  return Variable(std::move(node));
}

Variable Variable::make(Tensor2D value, std::vector<Variable> parents,
                        std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->tensor = std::move(value);
  for (auto& p : parents) {
    node->requires_grad = node->requires_grad || p.node_->requires_grad;
    node->parents.push_back(p.node_);
  }
  if (node->requires_grad) node->backward_fn = std::move(backward_fn);
  return Variable(std::move(node));
}

double Variable::item() const {
  if (value().size() != 1) {
    throw ShapeError("item() on non-scalar tensor " + value().shape_string());
  }
  return value().values()[0];
}

void Variable::backward() {
  if (value().size() != 1) {
    throw ShapeError("backward() root must be 1x1, got " + value().shape_string());
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->tensor.grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  // Intermediate gradients are scratch space; only leaves keep theirs.
  for (Node* n : order) {
    if (n->backward_fn) n->tensor.drop_grad();
  }
}

namespace {

template <typename Node>
Tensor2D* grad_target(const std::shared_ptr<Node>& p) {
  return p->requires_grad ? &p->tensor : nullptr;
}

}  // namespace

Variable matmul(const Variable& a, const Variable& b) {
  Tensor2D out = matmul(a.value(), b.value());
  return Variable::make(std::move(out), {a, b}, [](Variable::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const Tensor2D& av = pa->tensor;
    const Tensor2D& bv = pb->tensor;
    const auto dc = self.tensor.grad();
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    if (auto* ta = grad_target(pa)) {
      auto da = ta->grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += dc[i * m + j] * bv(p, j);
          da[i * k + p] += s;
        }
    }
    if (auto* tb = grad_target(pb)) {
      auto db = tb->grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) db[p * m + j] += aip * dc[i * m + j];
        }
    }
  });
}

Variable matmul_nt(const Variable& a, const Variable& b) {
  Tensor2D out = matmul_nt(a.value(), b.value());
  return Variable::make(std::move(out), {a, b}, [](Variable::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const Tensor2D& av = pa->tensor;
    const Tensor2D& bv = pb->tensor;
    const auto dc = self.tensor.grad();
    const std::size_t n = av.rows(), k = av.cols(), m = bv.rows();
    // C = A B^T: dA = dC B, dB = dC^T A.
    if (auto* ta = grad_target(pa)) {
      auto da = ta->grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double g = dc[i * m + j];
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) da[i * k + p] += g * bv(j, p);
        }
    }
    if (auto* tb = grad_target(pb)) {
      auto db = tb->grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double g = dc[i * m + j];
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) db[j * k + p] += g * av(i, p);
        }
    }
  });
}

Variable add(const Variable& a, const Variable& b) {
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols()) {
    throw ShapeError("add shape mismatch: " + a.value().shape_string() + " + " +
                     b.value().shape_string());
  }
  Tensor2D out = a.value();
  out.drop_grad();
  auto dst = out.values();
  auto src = b.value().values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return Variable::make(std::move(out), {a, b}, [](Variable::Node& self) {
    const auto dc = self.tensor.grad();
    for (auto& p : self.parents) {
      if (auto* t = grad_target(p)) {
        auto d = t->grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i];
      }
    }
  });
}

Variable add_row_bias(const Variable& a, const Variable& bias) {
  const Tensor2D& av = a.value();
  const Tensor2D& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ShapeError("bias shape mismatch: " + av.shape_string() + " + row " + bv.shape_string());
  }
  Tensor2D out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j) + bv(0, j);
  return Variable::make(std::move(out), {a, bias}, [](Variable::Node& self) {
    const auto dc = self.tensor.grad();
    const std::size_t cols = self.tensor.cols();
    if (auto* ta = grad_target(self.parents[0])) {
      auto d = ta->grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i];
    }
    if (auto* tb = grad_target(self.parents[1])) {
      auto d = tb->grad();
      for (std::size_t i = 0; i < dc.size(); ++i) d[i % cols] += dc[i];
    }
  });
}

Variable relu(const Variable& a) {
  Tensor2D out = relu(a.value());
  return Variable::make(std::move(out), {a}, [](Variable::Node& self) {
    auto* ta = grad_target(self.parents[0]);
    if (!ta) return;
    const auto dc = self.tensor.grad();
    const auto x = ta->values();
    auto d = ta->grad();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (x[i] > 0.0) d[i] += dc[i];
  });
}

Variable softmax_cross_entropy(const Variable& logits, std::span<const Label> targets,
                               const SampleMask& mask) {
  const Tensor2D& z = logits.value();
  const std::size_t n = z.rows(), k = z.cols();
  if (targets.size() != n || mask.size() != n) {
    throw ShapeError("cross-entropy: logits " + z.shape_string() + " vs " +
                     std::to_string(targets.size()) + " targets and " +
                     std::to_string(mask.size()) + " mask entries");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= k) {
      throw LabelError("cross-entropy: target " + std::to_string(targets[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
  }

  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  // Probabilities of masked-in rows, kept for the backward pass.
  auto probs = std::make_shared<Tensor2D>(n, k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(r[j] - mx);
    const double lse = mx + std::log(sum);
    total += lse - r[targets[i]];
    for (std::size_t j = 0; j < k; ++j) (*probs)(i, j) = std::exp(r[j] - lse);
  }
  const double loss = count == 0 ? 0.0 : total / static_cast<double>(count);

  std::vector<Label> tgt(targets.begin(), targets.end());
  return Variable::make(
      Tensor2D(1, 1, loss), {logits},
      [probs, tgt = std::move(tgt), mask, count](Variable::Node& self) {
        auto* tz = grad_target(self.parents[0]);
        if (!tz || count == 0) return;
        const double g = self.tensor.grad()[0] / static_cast<double>(count);
        const std::size_t cols = tz->cols();
        auto d = tz->grad();
        for (std::size_t i = 0; i < tgt.size(); ++i) {
          if (!mask[i]) continue;
          for (std::size_t j = 0; j < cols; ++j) {
            const double onehot = j == tgt[i] ? 1.0 : 0.0;
            d[i * cols + j] += g * ((*probs)(i, j) - onehot);
          }
        }
      });
}

Variable softmax_cross_entropy(const Variable& logits, std::span<const Label> targets) {
  return softmax_cross_entropy(logits, targets, SampleMask(logits.value().rows(), true));
}

Variable linear_combination(std::span<const Variable> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) {
    throw ShapeError("linear_combination: " + std::to_string(terms.size()) + " terms vs " +
                     std::to_string(weights.size()) + " weights");
  }
  double value = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) value += weights[i] * terms[i].item();
  std::vector<double> w(weights.begin(), weights.end());
  return Variable::make(Tensor2D(1, 1, value), std::vector<Variable>(terms.begin(), terms.end()),
                        [w = std::move(w)](Variable::Node& self) {
                          const double g = self.tensor.grad()[0];
                          for (std::size_t i = 0; i < self.parents.size(); ++i) {
                            if (auto* t = grad_target(self.parents[i])) t->grad()[0] += w[i] * g;
                          }
                        });
}

// ---------------------------------------------------------------------------
// Parameters and optimizer

Parameter::Parameter(const Parameter& other)
    : name(other.name),
      var(Variable::leaf(Tensor2D(other.tensor().rows(), other.tensor().cols(),
                                  std::vector<double>(other.tensor().values().begin(),
                                                      other.tensor().values().end())),
                         true)),
      momentum_buffer(other.momentum_buffer) {}

Parameter& Parameter::operator=(const Parameter& other) {
  if (this != &other) *this = Parameter(other);
  return *this;
}

void sgd_step(std::span<Parameter* const> params, double lr, double momentum) {
  for (Parameter* p : params) {
    Tensor2D& t = p->tensor();
    // A parameter that never received a gradient has g = 0.
    if (!t.has_grad() && p->momentum_buffer.empty()) continue;
    if (p->momentum_buffer.empty()) p->momentum_buffer.assign(t.size(), 0.0);
    auto g = t.grad();
    auto v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      p->momentum_buffer[i] = momentum * p->momentum_buffer[i] + g[i];
      v[i] -= lr * p->momentum_buffer[i];
    }
    t.zero_grad();
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->tensor().zero_grad();
}

GradCheckResult grad_check(const std::function<Variable()>& loss_fn,
                           std::span<Parameter* const> params, double epsilon) {
  zero_grads(params);
  Variable root = loss_fn();
  const double reference = root.item();
  const double again = loss_fn().item();
  if (reference != again) {
    throw DeterminismError("loss function is not deterministic: " + std::to_string(reference) +
                           " vs " + std::to_string(again));
  }
  root.backward();

  GradCheckResult result;
  for (Parameter* p : params) {
    Tensor2D& t = p->tensor();
    const std::vector<double> analytic = t.has_grad()
                                             ? std::vector<double>(t.grad().begin(), t.grad().end())
                                             : std::vector<double>(t.size(), 0.0);
    auto values = t.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double plus = loss_fn().item();
      values[i] = saved - epsilon;
      const double minus = loss_fn().item();
      values[i] = saved;

      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++result.checked;
      if (rel > result.max_relative_error || result.checked == 1) {
        result.max_relative_error = rel;
        result.worst_parameter = p->name;
        result.worst_index = i;
        result.worst_analytic = analytic[i];
        result.worst_numeric = numeric;
      }
    }
  }
  zero_grads(params);
  return result;
}

}  // namespace reslt
