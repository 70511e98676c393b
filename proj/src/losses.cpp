#include "mvcl/losses.hpp"

#include <cmath>

#include "mvcl/error.hpp"

namespace mvcl {

namespace {

Var similarity_matrix(const Var& a_normed, const Var& b_normed, double temperature) {
  return scale(matmul(a_normed, transpose(b_normed)), 1.0 / temperature);
}

void require_rows(const Var& z, const char* what) {
  if (z.value().rank() != 2)
    fail(ErrorKind::Shape, std::string(what) + " expects a [N, P] matrix of projections");
}

}  // namespace

void ContrastiveConfig::validate() const {
  require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::Config,
          "temperature must be > 0");
}

Var supcon_loss(const Var& z, std::span<const std::int64_t> labels, const ContrastiveConfig& cfg) {
  cfg.validate();
  require_rows(z, "supcon_loss");
  const std::size_t n = z.value().rows();
  require(labels.size() == n, ErrorKind::Shape, "supcon_loss: labels/projections length mismatch");
  require(n >= 2, ErrorKind::BatchTooSmall, "supcon_loss needs at least 2 samples");

  Tensor anchor_weight({n});
  Tensor positive_weight({n, n});
  std::vector<std::uint8_t> others(n * n, 1);
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    others[i * n + i] = 0;
    std::size_t positives = 0;
    for (std::size_t p = 0; p < n; ++p)
      if (p != i && labels[p] == labels[i]) ++positives;
    if (positives == 0) continue;
    ++anchors;
    anchor_weight[i] = 1.0;
    for (std::size_t p = 0; p < n; ++p)
      if (p != i && labels[p] == labels[i])
        positive_weight(i, p) = 1.0 / static_cast<double>(positives);
  }
  require(anchors > 0, ErrorKind::DegenerateBatch,
          "supcon_loss: no anchor in the batch has a positive");

  const Var zn = l2_normalize_rows(z);
  const Var sim = similarity_matrix(zn, zn, cfg.temperature);
  const Var log_denominator = masked_logsumexp_rows(sim, others);
  const Var total =
      sub(weighted_sum(log_denominator, anchor_weight), weighted_sum(sim, positive_weight));
  return cfg.reduction == Reduction::Mean ? scale(total, 1.0 / static_cast<double>(anchors))
                                          : total;
}

Var supcon_loss(std::span<const Var> z, std::span<const std::int64_t> labels,
                const ContrastiveConfig& cfg) {
  require(z.size() >= 2, ErrorKind::BatchTooSmall, "supcon_loss needs at least 2 samples");
  return supcon_loss(concat_rows(z), labels, cfg);
}

Var pairwise_sscl_loss(const Var& view, const Var& other, const ContrastiveConfig& cfg) {
  cfg.validate();
  require_rows(view, "pairwise_sscl_loss");
  require_rows(other, "pairwise_sscl_loss");
  const std::size_t n = view.value().rows();
  require(other.value().rows() == n && n >= 1, ErrorKind::Shape,
          "pairwise_sscl_loss: view lists must have equal non-zero length");

  // Denominator columns: [cross-view k in I | same-view j != i].
  std::vector<std::uint8_t> mask(n * 2 * n, 1);
  for (std::size_t i = 0; i < n; ++i) mask[i * 2 * n + n + i] = 0;
  Tensor twice_diagonal({n, n});
  for (std::size_t i = 0; i < n; ++i) twice_diagonal(i, i) = 2.0;

  const Var zn = l2_normalize_rows(view);
  const Var zn_other = l2_normalize_rows(other);
  const Var cross = similarity_matrix(zn, zn_other, cfg.temperature);
  const Var within = similarity_matrix(zn, zn, cfg.temperature);
  const Var within_other = similarity_matrix(zn_other, zn_other, cfg.temperature);

  const Var forward_lse = masked_logsumexp_rows(concat_cols(cross, within), mask);
  const Var backward_lse = masked_logsumexp_rows(concat_cols(transpose(cross), within_other), mask);
  const Var total =
      sub(add(sum(forward_lse), sum(backward_lse)), weighted_sum(cross, twice_diagonal));
  return cfg.reduction == Reduction::Mean ? scale(total, 1.0 / static_cast<double>(2 * n)) : total;
}

Var pairwise_sscl_loss(std::span<const Var> view, std::span<const Var> other,
                       const ContrastiveConfig& cfg) {
  require(view.size() == other.size() && !view.empty(), ErrorKind::Shape,
          "pairwise_sscl_loss: view lists must have equal non-zero length");
  return pairwise_sscl_loss(concat_rows(view), concat_rows(other), cfg);
}

Var sscl_total(const std::array<std::pair<Var, Var>, 3>& views, const ContrastiveConfig& cfg) {
  Var total = pairwise_sscl_loss(views[0].first, views[0].second, cfg);
  for (std::size_t m = 1; m < views.size(); ++m)
    total = add(total, pairwise_sscl_loss(views[m].first, views[m].second, cfg));
  return total;
}

ClassifierHead::ClassifierHead(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                               Rng& rng)
    : mlp_(in_dim, hidden, out_dim, rng), in_dim_(in_dim), out_dim_(out_dim) {
  require(in_dim >= 1 && hidden >= 1 && out_dim >= 1, ErrorKind::Config,
          "classifier head dimensions must be >= 1");
}

Var ClassifierHead::forward(const Var& x) const {
  if (x.value().cols() != in_dim_)
    fail(ErrorKind::Shape, "classifier input width " + std::to_string(x.value().cols()) +
                               " != " + std::to_string(in_dim_));
  if (x.value().rank() == 1) {
    return mlp_.forward(concat_rows(std::span<const Var>(&x, 1)));
  }
  return mlp_.forward(x);
}

void ClassifierHead::collect(ParamList& out, const std::string& prefix) const {
  mlp_.collect(out, prefix);
}

Var ce_loss(const Var& scores, std::span<const std::int64_t> labels) {
  require(scores.value().rank() == 2, ErrorKind::Shape, "ce_loss expects [N, C] scores");
  const std::size_t n = scores.value().rows();
  const std::size_t c = scores.value().cols();
  require(c >= 2, ErrorKind::Shape, "ce_loss needs at least two classes");
  require(labels.size() == n && n >= 1, ErrorKind::Shape, "ce_loss: label count mismatch");
  Tensor one_hot({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      fail(ErrorKind::Label, "ce_loss: label " + std::to_string(labels[i]) + " outside [0, " +
                                 std::to_string(c) + ")");
    one_hot(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  const std::vector<std::uint8_t> all(n * c, 1);
  const Var lse = masked_logsumexp_rows(scores, all);
  return scale(sub(sum(lse), weighted_sum(scores, one_hot)), 1.0 / static_cast<double>(n));
}

Var mse_loss(const Var& pred, const Tensor& target) {
  const std::size_t n = pred.value().numel();
  require(target.numel() == n && n >= 1, ErrorKind::Shape,
          "mse_loss: prediction/target length mismatch");
  const Var diff = sub(pred, constant(target.reshaped(pred.shape())));
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(n));
}

std::vector<std::int64_t> contrastive_classes(std::span<const double> scores, double granularity) {
  require(granularity > 0.0, ErrorKind::Config, "label granularity must be > 0");
  std::vector<std::int64_t> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(static_cast<std::int64_t>(std::llround(s / granularity)));
  return out;
}

}  // namespace mvcl
