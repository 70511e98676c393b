#include "mvcl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mvcl/error.hpp"

namespace mvcl {

namespace {
constexpr double kMinStep = 1e-7;
}  // namespace

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Var()>& f, std::vector<NamedVar> params,
                           double epsilon, double tolerance) {
  require(epsilon >= kMinStep && epsilon <= 1e-3, ErrorKind::InvalidArgument,
          "grad_check epsilon must lie in [1e-7, 1e-3]");
  for (auto& p : params) {
    p.var.set_requires_grad(true);
    p.var.zero_grad();
  }

  const Var out = f();
  require(out.value().numel() == 1, ErrorKind::Shape, "grad_check needs a scalar function");
  out.backward();

  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& p : params) {
    ParamCheck check{p.name, p.var.value().numel(), 0.0, 0};
    const Tensor analytic = p.var.has_grad() ? p.var.grad() : Tensor(p.var.shape());
    Tensor& value = p.var.mutable_value();
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double original = value[i];
      double numeric = 0.0;
      bool resolved = false;
      // A step that flips any relu between the two probes straddles a kink;
      // shrink it until both sides share one linear piece.
      for (double h = epsilon; h >= kMinStep * 0.999; h *= 0.1) {
        double plus = 0.0;
        double minus = 0.0;
        std::vector<std::uint8_t> pattern_plus;
        std::vector<std::uint8_t> pattern_minus;
        try {
          NoGradGuard no_grad;
          {
            ReluPatternRecorder rec;
            value[i] = original + h;
            plus = f().value().item();
            pattern_plus = rec.pattern();
          }
          {
            ReluPatternRecorder rec;
            value[i] = original - h;
            minus = f().value().item();
            pattern_minus = rec.pattern();
          }
        } catch (...) {
          value[i] = original;
          throw;
        }
        value[i] = original;
        numeric = (plus - minus) / (2.0 * h);
        if (pattern_plus == pattern_minus) {
          resolved = true;
          break;
        }
      }
      if (!resolved) {
        ++check.kinks;
        continue;
      }
      const double err = relative_error(analytic[i], numeric);
      if (err > check.max_rel_error || std::isnan(err)) {
        check.max_rel_error = err;
        check.worst_index = i;
      }
    }
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace mvcl
