#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mvcl/tensor.hpp"

namespace mvcl {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

/// Handle onto a node of the dynamic gradient tape. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  /// Direct write access for optimizer updates and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  /// Reverse sweep from this scalar; gradients accumulate into leaves.
  void backward() const;

  const char* op() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return node_ != nullptr; }

 private:
  std::shared_ptr<Node> node_;
};

/// While alive, ops on this thread record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Tensor value);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Elementwise (identical shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& a);

/// x[m,n] + b[n] broadcast over rows.
Var add_bias(const Var& x, const Var& bias);
/// x[m,n] + e[k,n] where row r receives e[r % k]; m must be a multiple of k.
Var add_tiled(const Var& x, const Var& e);

/// Row-wise layer normalization with learned gain and shift.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& x);
/// Each row divided by its Euclidean norm; a zero row is a DegenerateInput error.
Var l2_normalize_rows(const Var& x);
/// Row-wise log-sum-exp over entries where mask != 0. Output shape [m].
Var masked_logsumexp_rows(const Var& x, std::span<const std::uint8_t> mask);

Var sum(const Var& x);
/// Σ x∘w with a constant weight tensor of equal size.
Var weighted_sum(const Var& x, const Tensor& weights);

/// Mean over consecutive blocks of rows: [segments*L, n] -> [segments, n].
Var segment_mean(const Var& x, std::size_t segments);
Var concat_cols(const Var& a, const Var& b);
/// Stacks rank-1 or rank-2 inputs along rows.
Var concat_rows(std::span<const Var> parts);
/// k inputs of shape [B, n] -> [B*k, n] with row b*k + j = parts[j][b].
Var interleave_rows(std::span<const Var> parts);

/// Scaled dot-product multi-head attention over `batch` independent items.
/// q: [batch*lq, d], k and v: [batch*lk, d]; d split into `heads` slices.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t heads);

/// Cosine similarity of two vectors (rank 1 or single-row) as a scalar.
Var cosine_sim(const Var& a, const Var& b);

/// While alive, every relu evaluated on this thread appends one on/off flag
/// per input element. Finite-difference probes compare the patterns of their
/// two evaluations to notice when a step crossed a kink.
class ReluPatternRecorder {
 public:
  ReluPatternRecorder();
  ~ReluPatternRecorder();
  ReluPatternRecorder(const ReluPatternRecorder&) = delete;
  ReluPatternRecorder& operator=(const ReluPatternRecorder&) = delete;

  const std::vector<std::uint8_t>& pattern() const { return pattern_; }

 private:
  std::vector<std::uint8_t> pattern_;
  std::vector<std::uint8_t>* previous_;
};

namespace testing_hooks {
/// Identity in the forward pass whose backward scales the gradient; used to
/// confirm that the gradient checker detects a wrong derivative.
Var wrong_gradient_identity(const Var& x, double factor);
}  // namespace testing_hooks

}  // namespace mvcl
