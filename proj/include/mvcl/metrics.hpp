#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "mvcl/tensor.hpp"

namespace mvcl {

struct BinaryMetricOptions {
  /// Drop samples whose target is exactly zero before binarizing.
  bool exclude_zero = false;
  /// Support-weighted F1 over both classes instead of binary F1.
  bool weighted_f1 = false;
};

struct Acc2F1 {
  double acc2 = 0.0;
  double f1 = 0.0;
};

/// Sign-binarized accuracy and F1; negative (< 0) vs non-negative (>= 0),
/// the non-negative class is the positive one.
Acc2F1 acc2_f1(std::span<const double> pred, std::span<const double> target,
               const BinaryMetricOptions& opts = {});
double mae(std::span<const double> pred, std::span<const double> target);
/// Sample Pearson coefficient; nullopt when either input is constant.
std::optional<double> pearson(std::span<const double> pred, std::span<const double> target);

struct MetricReport {
  double acc2 = 0.0;
  double f1 = 0.0;
  double mae = 0.0;
  std::optional<double> corr;
};

MetricReport evaluate_predictions(std::span<const double> pred, std::span<const double> target,
                                  const BinaryMetricOptions& opts = {});

struct RepresentationDiagnostics {
  double within_cosine = 0.0;
  double between_cosine = 0.0;
  double probe_accuracy = 0.0;
};

/// Least-squares one-vs-rest linear classifier (with bias) fitted on a
/// seeded 2/3 held-in split and scored on the held-out remainder.
double linear_probe_accuracy(const Tensor& vectors, std::span<const std::int64_t> labels,
                             std::uint64_t seed = 0);

/// Mean pairwise cosine within and between classes over all pairs, plus the
/// linear-probe accuracy. vectors: [N, D].
RepresentationDiagnostics representation_diagnostics(const Tensor& vectors,
                                                     std::span<const std::int64_t> labels,
                                                     std::uint64_t seed = 0);

}  // namespace mvcl
