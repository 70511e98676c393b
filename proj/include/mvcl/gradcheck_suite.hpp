#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mvcl {

struct GradcheckRow {
  std::string check;
  std::size_t seeds = 0;
  std::size_t entries = 0;  // parameter entries probed per seed
  std::size_t kinks = 0;    // entries skipped at a relu kink, over all seeds
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradcheckTable {
  std::vector<GradcheckRow> rows;
  double tolerance = 1e-4;
  double seconds = 0.0;

  bool passed() const;
  std::string render() const;
};

/// Names of every check in table order.
std::span<const std::string_view> gradcheck_names();

/// Runs each check on `seeds` independent random draws derived from
/// `base_seed`. A non-empty `fault` must name a check; that check's output
/// is routed through a deliberately wrong backward rule.
GradcheckTable run_gradcheck_suite(std::size_t seeds, std::uint64_t base_seed,
                                   std::string_view fault = {});

}  // namespace mvcl
