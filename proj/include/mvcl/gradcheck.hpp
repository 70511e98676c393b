#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvcl/autodiff.hpp"

namespace mvcl {

struct ParamCheck {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  /// Entries left unchecked because every step down to 1e-7 straddled a
  /// relu kink.
  std::size_t kinks = 0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tolerance = 0.0;

  double max_rel_error() const;
  bool passed() const { return max_rel_error() < tolerance; }
};

struct NamedVar {
  std::string name;
  Var var;
};

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences (f(p+eps) - f(p-eps)) / 2eps for every entry of every param.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8). Steps start at `epsilon`
/// and shrink tenfold while the two probes disagree on any relu's on/off
/// state.
GradCheckReport grad_check(const std::function<Var()>& f, std::vector<NamedVar> params,
                           double epsilon = 1e-5, double tolerance = 1e-4);

double relative_error(double analytic, double numeric);

}  // namespace mvcl
