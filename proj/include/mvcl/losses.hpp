#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvcl/nn.hpp"

namespace mvcl {

enum class Reduction { Sum, Mean };

struct ContrastiveConfig {
  double temperature = 0.2;
  /// Sum reproduces the printed objective; Mean divides by the number of
  /// contributing anchors and is what training uses.
  Reduction reduction = Reduction::Mean;

  void validate() const;
};

/// Supervised contrastive loss over rows of z [N, P]. Positives of anchor i
/// are the other rows sharing its label; anchors without positives are
/// skipped. Throws BatchTooSmall for N < 2 and DegenerateBatch when no
/// anchor has a positive.
Var supcon_loss(const Var& z, std::span<const std::int64_t> labels, const ContrastiveConfig& cfg);
Var supcon_loss(std::span<const Var> z, std::span<const std::int64_t> labels,
                const ContrastiveConfig& cfg);

/// Two-view contrastive loss where row i of `view` and row i of `other` form
/// the positive pair. Each anchor's denominator covers every cross-view row
/// (positive included) plus every other same-view row; the result is the
/// sum of both directions.
Var pairwise_sscl_loss(const Var& view, const Var& other, const ContrastiveConfig& cfg);
Var pairwise_sscl_loss(std::span<const Var> view, std::span<const Var> other,
                       const ContrastiveConfig& cfg);

/// Sum of the three per-modality two-view losses, in t, a, v order.
Var sscl_total(const std::array<std::pair<Var, Var>, 3>& views, const ContrastiveConfig& cfg);

/// y = W_o ReLU(W_f x + b_f) + b_o, raw scores.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, Rng& rng);

  /// x: [batch, in_dim] or [in_dim] -> [batch, out_dim].
  Var forward(const Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  Var& w_f() { return mlp_.up().weight(); }
  Var& b_f() { return mlp_.up().bias(); }
  Var& w_o() { return mlp_.down().weight(); }
  Var& b_o() { return mlp_.down().bias(); }

 private:
  FeedForward mlp_;
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
};

/// Softmax cross-entropy averaged over the batch. scores: [N, C], C >= 2.
Var ce_loss(const Var& scores, std::span<const std::int64_t> labels);
/// (1/N) Σ (pred_i - target_i)^2 for pred of N elements.
Var mse_loss(const Var& pred, const Tensor& target);

/// Maps real scores onto contrastive class ids: scores equal after rounding
/// to `granularity` share a class.
std::vector<std::int64_t> contrastive_classes(std::span<const double> scores, double granularity);

}  // namespace mvcl
