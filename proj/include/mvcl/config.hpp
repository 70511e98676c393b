#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "mvcl/data.hpp"
#include "mvcl/model.hpp"
#include "mvcl/pipeline.hpp"

namespace mvcl {

/// Everything one command needs. A single seed drives synthesis, model
/// initialization and batch order.
struct RunConfig {
  std::string preset = "desk";
  ModelConfig model;  // inputs/task are taken from the dataset header
  TrainConfig train;
  SynthConfig synth;
  std::size_t gradcheck_seeds = 5;
  std::uint64_t seed = 0;

  /// "desk" or "paper"; anything else is a Config error.
  static RunConfig from_preset(std::string_view name);

  /// Strict: unknown keys and unparsable values throw Config.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  void set_seed(std::uint64_t s);
  void validate() const;

  /// Copies shapes and task from a dataset into the model config.
  ModelConfig model_for(const DatasetHeader& header) const;
};

struct ConfigKey {
  const char* name;
  const char* help;
};

std::span<const ConfigKey> config_keys();

}  // namespace mvcl
