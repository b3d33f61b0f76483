#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace reslt {

using Label = std::uint32_t;

/// Per-sample inclusion flags for masked reductions.
using SampleMask = std::vector<bool>;

/// Dense row-major matrix of doubles with an optional gradient buffer.
class Tensor2D {
public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor2D identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Allocates a zero gradient if none exists yet.
  std::span<double> grad();
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad();
  void drop_grad() noexcept { grad_.clear(); }

  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor2D& a, const Tensor2D& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
  }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
  std::vector<double> grad_;
};

/// Handle to a node in a reverse-mode computation graph.
///
/// Copies share the same node. Leaves created with `requires_grad` accumulate
/// gradients across `backward()` calls until zeroed; intermediate nodes keep
/// their parents alive, so a graph lives as long as its root handle does.
class Variable {
public:
  Variable() = default;

  static Variable leaf(Tensor2D value, bool requires_grad = false);
  static Variable constant(Tensor2D value) { return leaf(std::move(value), false); }

  const Tensor2D& value() const { return node_->tensor; }
  Tensor2D& tensor() { return node_->tensor; }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const noexcept { return node_ != nullptr; }

  /// Scalar value of a 1x1 result.
  double item() const;

  /// Seeds d(root)/d(root) = 1 and propagates through the graph. Root must be 1x1.
  void backward();

  bool same_node(const Variable& other) const noexcept { return node_ == other.node_; }

private:
  struct Node {
    Tensor2D tensor;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
  };

  using NodePtr = std::shared_ptr<Node>;

  explicit Variable(NodePtr node) : node_(std::move(node)) {}

  static Variable make(Tensor2D value, std::vector<Variable> parents,
                       std::function<void(Node&)> backward_fn);

  NodePtr node_;

  friend Variable matmul(const Variable&, const Variable&);
  friend Variable matmul_nt(const Variable&, const Variable&);
  friend Variable add(const Variable&, const Variable&);
  friend Variable add_row_bias(const Variable&, const Variable&);
  friend Variable relu(const Variable&);
  friend Variable softmax_cross_entropy(const Variable&, std::span<const Label>, const SampleMask&);
  friend Variable linear_combination(std::span<const Variable>, std::span<const double>);
};

/// C = A * B.
Variable matmul(const Variable& a, const Variable& b);
/// C = A * B^T. Used for layers whose weight is stored [out x in].
Variable matmul_nt(const Variable& a, const Variable& b);
Variable add(const Variable& a, const Variable& b);
/// Adds a 1 x cols bias row to every row of `a`.
Variable add_row_bias(const Variable& a, const Variable& bias);
/// Elementwise max(0, x); gradient gate is strict (x > 0), so the subgradient at 0 is 0.
Variable relu(const Variable& a);

/// Mean over masked-in rows of -log softmax(logits_i)[target_i], as a 1x1 result.
///
/// Uses max-subtracted log-sum-exp. With no masked-in rows the result is exactly
/// 0 and contributes a zero gradient.
Variable softmax_cross_entropy(const Variable& logits, std::span<const Label> targets,
                               const SampleMask& mask);
Variable softmax_cross_entropy(const Variable& logits, std::span<const Label> targets);

/// sum_i weights[i] * terms[i] over 1x1 terms.
Variable linear_combination(std::span<const Variable> terms, std::span<const double> weights);

// Plain (non-differentiable) kernels shared by the graph ops and inference paths.
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);
Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b);
Tensor2D relu(const Tensor2D& a);
/// Row-wise softmax with max subtraction.
Tensor2D softmax_rows(const Tensor2D& logits);

/// Trainable tensor plus its SGD momentum buffer.
///
/// Copying a Parameter copies its values into a fresh leaf; copies never share
/// gradient state.
struct Parameter {
  std::string name;
  Variable var;
  /// Empty until the first optimizer step.
  std::vector<double> momentum_buffer;

  Parameter() = default;
  Parameter(std::string name, Tensor2D value)
      : name(std::move(name)), var(Variable::leaf(std::move(value), true)) {}

  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  Tensor2D& tensor() { return var.tensor(); }
  const Tensor2D& tensor() const { return var.value(); }
};

/// v <- momentum * v + g; p <- p - lr * v; then zeroes every gradient.
void sgd_step(std::span<Parameter* const> params, double lr, double momentum);

void zero_grads(std::span<Parameter* const> params);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients against central differences for every scalar
/// in `params`. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
/// denominator. Throws DeterminismError if two evaluations at the same point differ.
GradCheckResult grad_check(const std::function<Variable()>& loss_fn,
                           std::span<Parameter* const> params, double epsilon);

}  // namespace reslt
