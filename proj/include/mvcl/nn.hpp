#pragma once

#include <string>
#include <vector>

#include "mvcl/autodiff.hpp"
#include "mvcl/gradcheck.hpp"
#include "mvcl/rng.hpp"

namespace mvcl {

using ParamList = std::vector<NamedVar>;

/// Fresh trainable leaf with Xavier-uniform entries.
Var xavier_param(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Var filled_param(Shape shape, double value);

/// y = x W + b.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  Var forward(const Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  std::size_t in_dim() const { return weight_.value().rows(); }
  std::size_t out_dim() const { return weight_.value().cols(); }
  Var& weight() { return weight_; }
  Var& bias() { return bias_; }

 private:
  Var weight_;
  Var bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  Var forward(const Var& x) const { return layer_norm(x, gamma_, beta_); }
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  Var gamma_;
  Var beta_;
};

/// Multi-head attention with separate query and key/value sources. The key
/// projection carries no bias: a key bias shifts every score of a query row
/// by the same amount and has identically zero gradient.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng);

  /// query: [batch*lq, width]; source: [batch*lk, width].
  Var forward(const Var& query, const Var& source, std::size_t batch) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  Linear wq_, wk_, wv_, wo_;
  std::size_t heads_ = 1;
};

/// Position-wise two-layer perceptron with ReLU.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t width, std::size_t hidden, std::size_t out, Rng& rng);

  Var forward(const Var& x) const { return down_.forward(relu(up_.forward(x))); }
  void collect(ParamList& out, const std::string& prefix) const;

  Linear& up() { return up_; }
  Linear& down() { return down_; }

 private:
  Linear up_, down_;
};

}  // namespace mvcl
