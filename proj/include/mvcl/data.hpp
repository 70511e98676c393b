#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvcl/tensor.hpp"

namespace mvcl {

enum class TaskKind : std::uint8_t { Classification = 0, Regression = 1 };

struct ModalityShape {
  std::uint32_t length = 1;
  std::uint32_t dim = 1;

  friend bool operator==(const ModalityShape&, const ModalityShape&) = default;
};

struct DatasetHeader {
  std::uint32_t count = 0;
  std::array<ModalityShape, 3> shapes{};  // t, a, v
  TaskKind task = TaskKind::Classification;
  std::uint32_t num_classes = 0;  // 0 for regression
  bool multi_task = false;

  void validate() const;
  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct SampleRecord {
  std::array<Tensor, 3> features;                        // [L_m, d_m] per modality, t/a/v order
  std::optional<std::array<double, 3>> modality_labels;  // y_t, y_a, y_v
  double label = 0.0;                                    // class id or real score
};

struct Dataset {
  DatasetHeader header;
  std::vector<SampleRecord> records;
};

/// Bitwise equality of headers, labels and every feature payload.
bool bitwise_equal(const Dataset& a, const Dataset& b);

struct SynthConfig {
  std::uint32_t classes = 2;
  std::size_t train = 600;
  std::size_t val = 200;
  std::size_t test = 200;
  std::array<ModalityShape, 3> shapes{{{6, 12}, {5, 8}, {4, 10}}};
  double mean_scale = 1.0;
  double noise = 0.1;
  double consistency = 1.0;  // chance a modality's latent class equals y
  TaskKind task = TaskKind::Regression;
  bool multi_task = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Per-class, per-modality mean vectors broadcast over the sequence plus
/// Gaussian noise. Values are rounded to float32 so files round-trip exactly.
DatasetSplits generate_synthetic(const SynthConfig& cfg);

/// Sentiment score assigned to class c of C: evenly spaced in [-1, 1].
double class_score(std::int64_t c, std::uint32_t num_classes);

// MVCL1 feature files.
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

enum class BatchMode { Contrastive, Evaluation };

/// Seeded shuffle split into batches. Contrastive mode drops the final short
/// batch and requires batch_size >= 2; evaluation mode keeps it.
std::vector<std::vector<std::size_t>> make_batch_indices(std::size_t count, std::size_t batch_size,
                                                         std::uint64_t seed, BatchMode mode);

struct Batch {
  std::vector<std::size_t> indices;
  std::array<Tensor, 3> features;  // [size * L_m, d_m]
  std::vector<double> labels;
  std::array<std::vector<double>, 3> modality_labels;  // empty in single-task mode

  std::size_t size() const { return indices.size(); }
};

Batch stack_batch(const Dataset& ds, std::span<const std::size_t> indices);
std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                BatchMode mode);

}  // namespace mvcl
