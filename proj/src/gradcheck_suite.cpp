#include "mvcl/gradcheck_suite.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

#include "mvcl/crossmodal.hpp"
#include "mvcl/encoders.hpp"
#include "mvcl/error.hpp"
#include "mvcl/gradcheck.hpp"
#include "mvcl/losses.hpp"

namespace mvcl {

namespace {

constexpr std::array<std::string_view, 7> kNames = {
    "supcon_loss", "pairwise_sscl_loss", "sscl_total", "ce_loss",
    "mse_loss",    "encode_project",     "refine_fuse"};

constexpr std::size_t kWidth = 8;
constexpr std::size_t kHeads = 2;
constexpr std::size_t kFfn = 16;
constexpr std::size_t kProj = 4;
constexpr double kFaultFactor = 1.5;
// Initial central-difference step. Smaller steps let float64 round-off in
// the deeper compositions swamp entries whose gradient is near 1e-7.
constexpr double kStep = 5e-5;

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

Var input(std::size_t rows, std::size_t cols, Rng& rng) {
  return Var(random_matrix(rows, cols, rng), true);
}

// One seeded instance of a check: the scalar function and what to probe.
struct Case {
  std::function<Var()> f;
  ParamList params;
};

using Builder = Case (*)(Rng&, bool);

Var maybe_fault(const Var& x, bool fault) {
  return fault ? testing_hooks::wrong_gradient_identity(x, kFaultFactor) : x;
}

Case supcon_case(Rng& rng, bool fault) {
  const std::size_t n = 6;
  Var z = input(n, kProj, rng);
  std::vector<std::int64_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::int64_t>(i % 3);
  const ContrastiveConfig cfg{0.2, Reduction::Mean};
  return {[=] { return maybe_fault(supcon_loss(z, labels, cfg), fault); }, {{"z", z}}};
}

Case pairwise_case(Rng& rng, bool fault) {
  Var a = input(5, kProj, rng);
  Var b = input(5, kProj, rng);
  const ContrastiveConfig cfg{0.2, Reduction::Mean};
  return {[=] { return maybe_fault(pairwise_sscl_loss(a, b, cfg), fault); },
          {{"view", a}, {"other", b}}};
}

Case sscl_total_case(Rng& rng, bool fault) {
  std::array<std::pair<Var, Var>, 3> views;
  ParamList params;
  for (std::size_t m = 0; m < 3; ++m) {
    views[m] = {input(4, kProj, rng), input(4, kProj, rng)};
    params.push_back({"z" + std::to_string(m), views[m].first});
    params.push_back({"z'" + std::to_string(m), views[m].second});
  }
  const ContrastiveConfig cfg{0.2, Reduction::Mean};
  return {[=] { return maybe_fault(sscl_total(views, cfg), fault); }, params};
}

Case ce_case(Rng& rng, bool fault) {
  const std::size_t n = 5;
  const std::size_t c = 3;
  Var scores = input(n, c, rng);
  std::vector<std::int64_t> labels(n);
  for (auto& l : labels) l = static_cast<std::int64_t>(rng.below(c));
  return {[=] { return maybe_fault(ce_loss(scores, labels), fault); }, {{"scores", scores}}};
}

Case mse_case(Rng& rng, bool fault) {
  Var pred = input(5, 1, rng);
  const Tensor target = random_matrix(5, 1, rng);
  return {[=] { return maybe_fault(mse_loss(pred, target), fault); }, {{"pred", pred}}};
}

Case encode_project_case(Rng& rng, bool fault) {
  const std::size_t batch = 3;
  const std::size_t length = 3;
  const EncoderConfig cfg{5, kWidth, 2, kHeads, kFfn, length};
  auto encoder = std::make_shared<Encoder>(cfg, rng);
  auto head = std::make_shared<ProjectionHead>(kWidth, kProj, rng);
  Var x = input(batch * length, cfg.input_dim, rng);
  const Tensor w = random_matrix(batch, kProj, rng);
  ParamList params{{"x", x}};
  encoder->collect(params, "encoder");
  head->collect(params, "proj");
  return {[=] {
            const Var z = head->forward(encoder->encode(x, batch).pooled);
            return weighted_sum(maybe_fault(z, fault), w);
          },
          params};
}

Case refine_fuse_case(Rng& rng, bool fault) {
  const std::size_t batch = 2;
  const std::array<std::size_t, 3> lengths{4, 3, 5};
  const CrossModalConfig cfg{kWidth, kHeads, kFfn, 1, true};
  auto refiner = std::make_shared<CrossModalRefiner>(cfg, rng);
  auto fusion = std::make_shared<Fusion>(cfg, rng);
  std::array<Var, 3> h;
  ParamList params;
  for (std::size_t m = 0; m < 3; ++m) {
    h[m] = input(batch * lengths[m], kWidth, rng);
    params.push_back({std::string("h_") + modality_letter(kModalities[m]), h[m]});
  }
  refiner->collect(params, "crossmodal");
  fusion->collect(params, "fusion");
  const Tensor w = random_matrix(batch, kWidth, rng);
  return {[=] {
            std::array<HiddenRepresentation, 3> reps;
            for (std::size_t m = 0; m < 3; ++m)
              reps[m] = {h[m], segment_mean(h[m], batch), batch, lengths[m]};
            const Var f = fusion->fuse(refiner->refine(reps[0], reps[1], reps[2]));
            return weighted_sum(maybe_fault(f, fault), w);
          },
          params};
}

constexpr std::array<Builder, 7> kBuilders = {supcon_case,     pairwise_case, sscl_total_case,
                                              ce_case,         mse_case,      encode_project_case,
                                              refine_fuse_case};

}  // namespace

bool GradcheckTable::passed() const {
  return !rows.empty() &&
         std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.passed; });
}

std::string GradcheckTable::render() const {
  std::ostringstream os;
  os << std::left << std::setw(20) << "check" << std::setw(7) << "seeds" << std::setw(9)
     << "entries" << std::setw(7) << "kinks" << std::setw(14) << "max_rel_err" << "result\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(20) << r.check << std::setw(7) << r.seeds << std::setw(9)
       << r.entries << std::setw(7) << r.kinks << std::setw(14) << std::scientific
       << std::setprecision(3) << r.max_rel_error << std::defaultfloat
       << (r.passed ? "PASS" : "FAIL") << "\n";
  }
  os << "tolerance " << std::scientific << std::setprecision(0) << tolerance << std::defaultfloat
     << ", " << (passed() ? "all checks passed" : "FAILED") << "\n";
  return os.str();
}

std::span<const std::string_view> gradcheck_names() { return kNames; }

GradcheckTable run_gradcheck_suite(std::size_t seeds, std::uint64_t base_seed,
                                   std::string_view fault) {
  require(seeds >= 1, ErrorKind::Config, "gradcheck needs at least one seed");
  require(fault.empty() || std::find(kNames.begin(), kNames.end(), fault) != kNames.end(),
          ErrorKind::InvalidArgument,
          "unknown gradcheck fault target '" + std::string(fault) + "'");
  const auto start = std::chrono::steady_clock::now();
  GradcheckTable table;
  const Rng root(base_seed);
  for (std::size_t k = 0; k < kNames.size(); ++k) {
    GradcheckRow row{std::string(kNames[k]), seeds, 0, 0, 0.0, true};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng = root.split(k).split(s);
      Case c = kBuilders[k](rng, fault == kNames[k]);
      std::size_t entries = 0;
      for (const auto& p : c.params) entries += p.var.value().numel();
      row.entries = entries;
      const GradCheckReport report = grad_check(c.f, c.params, kStep, table.tolerance);
      for (const auto& p : report.params) row.kinks += p.kinks;
      const double err = report.max_rel_error();
      row.max_rel_error = std::isnan(err) ? err : std::max(row.max_rel_error, err);
      row.passed = row.passed && report.passed();
    }
    table.rows.push_back(std::move(row));
  }
  table.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return table;
}

}  // namespace mvcl
