#include "mvcl/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "mvcl/error.hpp"
#include "mvcl/rng.hpp"

namespace mvcl {

namespace {

void require_pair(std::span<const double> pred, std::span<const double> target, std::size_t min_len,
                  const char* what) {
  require(pred.size() == target.size(), ErrorKind::Shape,
          std::string(what) + ": prediction/target length mismatch");
  require(pred.size() >= min_len, ErrorKind::InvalidArgument,
          std::string(what) + ": needs at least " + std::to_string(min_len) + " samples");
}

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double precision =
      tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

}  // namespace

Acc2F1 acc2_f1(std::span<const double> pred, std::span<const double> target,
               const BinaryMetricOptions& opts) {
  require_pair(pred, target, 1, "acc2_f1");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (opts.exclude_zero && target[i] == 0.0) continue;
    const bool p = pred[i] >= 0.0;
    const bool t = target[i] >= 0.0;
    if (p && t)
      ++tp;
    else if (p && !t)
      ++fp;
    else if (!p && t)
      ++fn;
    else
      ++tn;
  }
  const std::size_t n = tp + fp + fn + tn;
  require(n > 0, ErrorKind::InvalidArgument, "acc2_f1: no samples left after excluding zeros");

  Acc2F1 out;
  out.acc2 = static_cast<double>(tp + tn) / static_cast<double>(n);
  const double f1_pos = f1_score(tp, fp, fn);
  if (opts.weighted_f1) {
    const double f1_neg = f1_score(tn, fn, fp);
    out.f1 = (f1_pos * static_cast<double>(tp + fn) + f1_neg * static_cast<double>(tn + fp)) /
             static_cast<double>(n);
  } else {
    out.f1 = f1_pos;
  }
  return out;
}

double mae(std::span<const double> pred, std::span<const double> target) {
  require_pair(pred, target, 1, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

std::optional<double> pearson(std::span<const double> pred, std::span<const double> target) {
  require_pair(pred, target, 2, "pearson");
  const double n = static_cast<double>(pred.size());
  const double mp = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  const double mt = std::accumulate(target.begin(), target.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i] - mp;
    const double dy = target[i] - mt;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

MetricReport evaluate_predictions(std::span<const double> pred, std::span<const double> target,
                                  const BinaryMetricOptions& opts) {
  MetricReport r;
  const Acc2F1 bin = acc2_f1(pred, target, opts);
  r.acc2 = bin.acc2;
  r.f1 = bin.f1;
  r.mae = mae(pred, target);
  if (pred.size() >= 2) r.corr = pearson(pred, target);
  return r;
}

double linear_probe_accuracy(const Tensor& vectors, std::span<const std::int64_t> labels,
                             std::uint64_t seed) {
  using Eigen::Index;
  using Eigen::MatrixXd;
  const std::size_t n = vectors.rows();
  const std::size_t d = vectors.cols();
  require(vectors.rank() == 2 && labels.size() == n && n >= 3, ErrorKind::Shape,
          "linear probe needs an [N, D] matrix with N >= 3 and one label per row");

  std::map<std::int64_t, Index> class_index;
  for (auto y : labels) class_index.emplace(y, 0);
  require(class_index.size() >= 2, ErrorKind::InvalidArgument,
          "linear probe needs at least two classes");
  Index next = 0;
  for (auto& [label, idx] : class_index) idx = next++;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t n_fit = std::max<std::size_t>(1, (2 * n) / 3);
  const std::size_t n_eval = n - n_fit;

  MatrixXd x_fit(static_cast<Index>(n_fit), static_cast<Index>(d + 1));
  MatrixXd y_fit = MatrixXd::Zero(static_cast<Index>(n_fit), next);
  for (std::size_t r = 0; r < n_fit; ++r) {
    const std::size_t i = order[r];
    for (std::size_t c = 0; c < d; ++c)
      x_fit(static_cast<Index>(r), static_cast<Index>(c)) = vectors(i, c);
    x_fit(static_cast<Index>(r), static_cast<Index>(d)) = 1.0;
    y_fit(static_cast<Index>(r), class_index[labels[i]]) = 1.0;
  }
  const MatrixXd w = x_fit.completeOrthogonalDecomposition().solve(y_fit);

  std::size_t correct = 0;
  for (std::size_t r = n_fit; r < n; ++r) {
    const std::size_t i = order[r];
    Eigen::RowVectorXd xi(static_cast<Index>(d + 1));
    for (std::size_t c = 0; c < d; ++c) xi(static_cast<Index>(c)) = vectors(i, c);
    xi(static_cast<Index>(d)) = 1.0;
    Index best = 0;
    (xi * w).maxCoeff(&best);
    if (best == class_index[labels[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n_eval);
}

RepresentationDiagnostics representation_diagnostics(const Tensor& vectors,
                                                     std::span<const std::int64_t> labels,
                                                     std::uint64_t seed) {
  const std::size_t n = vectors.rows();
  const std::size_t d = vectors.cols();
  require(vectors.rank() == 2 && labels.size() == n, ErrorKind::Shape,
          "diagnostics need an [N, D] matrix and one label per row");
  require(std::any_of(labels.begin(), labels.end(), [&](auto y) { return y != labels[0]; }),
          ErrorKind::InvalidArgument, "diagnostics need at least two classes");

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += vectors(i, c) * vectors(i, c);
    norms[i] = std::sqrt(s);
    require(norms[i] > 0.0, ErrorKind::DegenerateInput, "zero vector in diagnostics input");
  }

  double within = 0.0, between = 0.0;
  std::size_t n_within = 0, n_between = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += vectors(i, c) * vectors(j, c);
      const double cosine = dot / (norms[i] * norms[j]);
      if (labels[i] == labels[j]) {
        within += cosine;
        ++n_within;
      } else {
        between += cosine;
        ++n_between;
      }
    }
  }

  RepresentationDiagnostics out;
  out.within_cosine = n_within ? within / static_cast<double>(n_within) : 0.0;
  out.between_cosine = between / static_cast<double>(n_between);
  out.probe_accuracy = linear_probe_accuracy(vectors, labels, seed);
  return out;
}

}  // namespace mvcl
