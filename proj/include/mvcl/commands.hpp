#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "mvcl/config.hpp"
#include "mvcl/gradcheck_suite.hpp"

namespace mvcl {

inline constexpr const char* kSplitFiles[3] = {"train.mvcl", "val.mvcl", "test.mvcl"};

/// Reads DIR/train.mvcl, DIR/val.mvcl and DIR/test.mvcl; the headers must
/// agree on shapes and task.
DatasetSplits load_splits(const std::filesystem::path& dir);

/// Worker threads for evaluation: hardware concurrency, capped by
/// MVCL_THREADS when set.
std::size_t worker_threads();

/// Writes the three split files into `out_dir` and returns a header summary.
std::string cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Runs `stage` (1, 2, 3, cls or all), resuming from the previous stage's
/// checkpoint in `out_dir` when needed. Appends the report line to
/// out_dir/report.jsonl and returns it.
std::string cmd_train(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                      const std::filesystem::path& out_dir, std::string_view stage);

/// Test-split metrics of a checkpoint, as one report line.
std::string cmd_eval(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                     const std::filesystem::path& checkpoint);

GradcheckTable cmd_gradcheck(const RunConfig& cfg, std::string_view fault = {});

}  // namespace mvcl
