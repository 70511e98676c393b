#include "mvcl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "mvcl/error.hpp"

namespace mvcl {

namespace {

constexpr std::size_t kEvalBatch = 64;

// Runs body(i) for i in [0, n), striding work over up to `threads` workers.
// Each worker records no gradient tape.
template <class Body>
void parallel_for(std::size_t n, std::size_t threads, Body body) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      NoGradGuard no_grad;
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::vector<std::size_t>> ordered_chunks(std::size_t n) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += kEvalBatch) {
    std::vector<std::size_t> idx(std::min(kEvalBatch, n - b));
    std::iota(idx.begin(), idx.end(), b);
    out.push_back(std::move(idx));
  }
  return out;
}

// Copies rows of `part` into `dst` at row block `first_item * rows_per_item`.
void scatter_rows(Tensor& dst, const Tensor& part, std::size_t first_item,
                  std::size_t rows_per_item) {
  std::copy(
      part.data().begin(), part.data().end(),
      dst.data().begin() + static_cast<std::ptrdiff_t>(first_item * rows_per_item * dst.cols()));
}

std::array<Tensor, 3> modality_tables(const Dataset& ds) {
  std::vector<std::size_t> all(ds.records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return stack_batch(ds, all).features;
}

std::vector<std::string> plus(std::vector<std::string> a, std::initializer_list<std::string> b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<std::string> complement(const std::vector<std::string>& trainable) {
  std::vector<std::string> out;
  for (auto& g : groups::all())
    if (std::find(trainable.begin(), trainable.end(), g) == trainable.end()) out.push_back(g);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void TrainConfig::validate() const {
  require(batch_size >= 2, ErrorKind::Config, "batch_size must be >= 2 for contrastive stages");
  require(temperature > 0.0, ErrorKind::Config, "temperature must be > 0");
  require(lr > 0.0, ErrorKind::Config, "lr must be > 0");
  require(clip_norm > 0.0, ErrorKind::Config, "clip_norm must be > 0");
  require(label_granularity > 0.0, ErrorKind::Config, "label_granularity must be > 0");
  require(threads >= 1, ErrorKind::Config, "threads must be >= 1");
}

const StageSpec& StagePlan::get(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return s;
  fail(ErrorKind::InvalidArgument, "no stage named '" + name + "' in plan");
}

StagePlan default_stage_plan(const TrainConfig& cfg) {
  StagePlan plan;
  const auto add = [&](std::string name, StageId id, std::vector<std::string> trainable,
                       StageLoss loss, std::optional<Modality> m, std::size_t epochs) {
    StageSpec s;
    s.name = std::move(name);
    s.id = id;
    s.frozen = complement(trainable);
    s.trainable = std::move(trainable);
    s.loss = loss;
    s.modality = m;
    s.epochs = epochs;
    s.lr = cfg.lr;
    s.clip_norm = cfg.clip_norm;
    plan.stages.push_back(std::move(s));
  };

  for (auto m : kModalities) {
    add(std::string("stage1.") + modality_letter(m), StageId::Stage1,
        {groups::encoder(m), groups::unimodal_proj(m)}, StageLoss::UnimodalSupcon, m,
        cfg.epochs[0]);
  }
  std::vector<std::string> stage2{std::string(groups::kCrossModal)};
  for (auto m : kModalities) stage2.push_back(groups::view_proj(m));
  add("stage2", StageId::Stage2, stage2, StageLoss::CrossModalSscl, std::nullopt, cfg.epochs[1]);
  add("stage3", StageId::Stage3, {std::string(groups::kFusion), std::string(groups::kFusedProj)},
      StageLoss::FusedSupcon, std::nullopt, cfg.epochs[2]);

  std::vector<std::string> finetune;
  for (auto m : kModalities) finetune.push_back(groups::encoder(m));
  finetune = plus(finetune, {std::string(groups::kCrossModal), std::string(groups::kFusion),
                             std::string(groups::kMultimodalHead)});
  add("cls.mm", StageId::Classifier, finetune, StageLoss::MultimodalTask, std::nullopt,
      cfg.epochs[3]);
  for (auto m : kModalities) {
    add(std::string("cls.") + modality_letter(m), StageId::Classifier, {groups::unimodal_head(m)},
        StageLoss::UnimodalTask, m, cfg.epochs[3]);
  }
  return plan;
}

Adam::Adam(ParamList params, double lr, double clip_norm, double beta1, double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      clip_norm_(clip_norm),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void Adam::step() {
  double sq = 0.0;
  for (const auto& p : params_)
    if (p.var.has_grad())
      for (double g : p.var.grad().data()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = norm > clip_norm_ ? clip_norm_ / norm : 1.0;

  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var& p = params_[k].var;
    if (!p.has_grad()) continue;
    Tensor& w = p.mutable_value();
    const Tensor& g = p.grad();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i] * clip;
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * gi;
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * gi * gi;
      w[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
    }
    p.zero_grad();
  }
}

Pipeline::Pipeline(Model& model, TrainConfig cfg, const DatasetSplits& data)
    : model_(model), cfg_(cfg), data_(data), plan_(default_stage_plan(cfg)), rng_(cfg.seed) {
  cfg_.validate();
}

void Pipeline::require_completed(StageId needed, const char* stage) const {
  require(static_cast<std::uint32_t>(completed_) >= static_cast<std::uint32_t>(needed),
          ErrorKind::MissingCheckpoint,
          std::string(stage) + " requires a stage-" + stage_name(needed) + " checkpoint");
}

std::uint64_t Pipeline::epoch_seed(const StageSpec& spec, std::size_t epoch) const {
  std::uint64_t h = 0;
  for (char c : spec.name) h = mix64(h ^ static_cast<unsigned char>(c));
  return rng_.split(h).split(epoch).next_u64();
}

std::vector<std::int64_t> Pipeline::contrastive_labels(const Dataset& ds,
                                                       std::span<const std::size_t> items,
                                                       std::optional<Modality> m) const {
  std::vector<double> raw;
  raw.reserve(items.size());
  for (auto i : items) {
    const SampleRecord& r = ds.records.at(i);
    raw.push_back(m && r.modality_labels ? (*r.modality_labels)[index_of(*m)] : r.label);
  }
  const double granularity =
      ds.header.task == TaskKind::Classification ? 1.0 : cfg_.label_granularity;
  return contrastive_classes(raw, granularity);
}

Var Pipeline::task_loss(const Var& out, const Dataset& ds, std::span<const std::size_t> items,
                        std::optional<Modality> m) const {
  std::vector<double> targets;
  for (auto i : items) {
    const SampleRecord& r = ds.records.at(i);
    targets.push_back(m && r.modality_labels ? (*r.modality_labels)[index_of(*m)] : r.label);
  }
  if (ds.header.task == TaskKind::Regression) return mse_loss(out, Tensor::vector(targets));
  std::vector<std::int64_t> ids;
  for (double t : targets) ids.push_back(std::llround(t));
  return ce_loss(out, ids);
}

StageReport Pipeline::run_unimodal_contrastive(const StageSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const Modality m = *spec.modality;
  const Dataset& train = data_.train;
  const Tensor table = modality_tables(train)[index_of(m)];
  const std::size_t length = train.header.shapes[index_of(m)].length;
  const auto cfg = cfg_.contrastive();

  model_.set_trainable(spec.trainable);
  ParamList trainable;
  for (const auto& g : spec.trainable)
    for (auto& p : model_.group(g)) trainable.push_back(p);
  Adam opt(trainable, spec.lr, spec.clip_norm);

  StageReport report{spec.name, spec.id, {}, 0, 0.0, {}};
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    double total = 0.0;
    std::size_t used = 0;
    for (const auto& idx : make_batch_indices(train.records.size(), cfg_.batch_size,
                                              epoch_seed(spec, epoch), BatchMode::Contrastive)) {
      const auto labels = contrastive_labels(train, idx, m);
      try {
        const auto h = model_.encode(m, gather_blocks(table, idx, length), idx.size());
        const Var loss = supcon_loss(model_.project_unimodal(m, h.pooled), labels, cfg);
        loss.backward();
        opt.step();
        total += loss.value().item();
        ++used;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateBatch) throw;
        ++report.skipped_batches;
      }
    }
    report.loss_curve.push_back(used ? total / static_cast<double>(used) : 0.0);
  }
  model_.set_trainable({});
  report.seconds = seconds_since(start);
  return report;
}

std::vector<StageReport> Pipeline::run_stage1() {
  std::vector<StageReport> reports;
  for (auto m : kModalities)
    reports.push_back(
        run_unimodal_contrastive(plan_.get(std::string("stage1.") + modality_letter(m))));
  completed_ = StageId::Stage1;
  return reports;
}

StageReport Pipeline::run_stage2() {
  require_completed(StageId::Stage1, "stage 2");
  const auto start = std::chrono::steady_clock::now();
  const StageSpec& spec = plan_.get("stage2");
  const Dataset& train = data_.train;
  const auto sequences = hidden_sequences(train);
  const auto cfg = cfg_.contrastive();

  model_.set_trainable(spec.trainable);
  ParamList trainable;
  for (const auto& g : spec.trainable)
    for (auto& p : model_.group(g)) trainable.push_back(p);
  Adam opt(trainable, spec.lr, spec.clip_norm);

  StageReport report{spec.name, spec.id, {}, 0, 0.0, {}};
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    double total = 0.0;
    std::size_t used = 0;
    for (const auto& idx : make_batch_indices(train.records.size(), cfg_.batch_size,
                                              epoch_seed(spec, epoch), BatchMode::Contrastive)) {
      std::array<HiddenRepresentation, 3> h;
      for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t len = train.header.shapes[k].length;
        h[k] = HiddenRepresentation{constant(gather_blocks(sequences[k], idx, len)), Var(),
                                    idx.size(), len};
      }
      const RefinedSet refined = model_.refine(h[0], h[1], h[2]);
      std::array<std::pair<Var, Var>, 3> views;
      for (auto m : kModalities) {
        const auto pair = view_pair(m);
        views[index_of(m)] = {model_.project_view(m, refined[pair[0]].pooled),
                              model_.project_view(m, refined[pair[1]].pooled)};
      }
      const Var loss = sscl_total(views, cfg);
      loss.backward();
      opt.step();
      total += loss.value().item();
      ++used;
    }
    report.loss_curve.push_back(used ? total / static_cast<double>(used) : 0.0);
  }
  model_.set_trainable({});
  completed_ = StageId::Stage2;
  report.seconds = seconds_since(start);
  return report;
}

StageReport Pipeline::run_stage3() {
  require_completed(StageId::Stage2, "stage 3");
  const auto start = std::chrono::steady_clock::now();
  const StageSpec& spec = plan_.get("stage3");
  const Dataset& train = data_.train;
  const auto pooled = refined_pooled(train);
  const auto cfg = cfg_.contrastive();

  model_.set_trainable(spec.trainable);
  ParamList trainable;
  for (const auto& g : spec.trainable)
    for (auto& p : model_.group(g)) trainable.push_back(p);
  Adam opt(trainable, spec.lr, spec.clip_norm);

  StageReport report{spec.name, spec.id, {}, 0, 0.0, {}};
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    double total = 0.0;
    std::size_t used = 0;
    for (const auto& idx : make_batch_indices(train.records.size(), cfg_.batch_size,
                                              epoch_seed(spec, epoch), BatchMode::Contrastive)) {
      std::vector<Var> parts;
      for (const auto& p : pooled) parts.push_back(constant(gather_blocks(p, idx, 1)));
      const auto labels = contrastive_labels(train, idx, std::nullopt);
      try {
        const Var loss = supcon_loss(model_.project_fused(model_.fuse_pooled(parts)), labels, cfg);
        loss.backward();
        opt.step();
        total += loss.value().item();
        ++used;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateBatch) throw;
        ++report.skipped_batches;
      }
    }
    report.loss_curve.push_back(used ? total / static_cast<double>(used) : 0.0);
  }
  model_.set_trainable({});
  completed_ = StageId::Stage3;
  report.seconds = seconds_since(start);
  return report;
}

StageReport Pipeline::train_classifier(std::optional<Modality> target) {
  require_completed(StageId::Stage3, "classifier training");
  const auto start = std::chrono::steady_clock::now();
  const StageSpec& spec =
      plan_.get(target ? std::string("cls.") + modality_letter(*target) : "cls.mm");
  const Dataset& train = data_.train;
  StageReport report{spec.name, spec.id, {}, 0, 0.0, {}};

  // Unimodal heads read cached pooled states of the (frozen) encoder.
  Tensor cached;
  std::array<Tensor, 3> tables;
  if (target) {
    cached = pooled_hidden(*target, train);
  } else {
    tables = modality_tables(train);
    report.values["mae_untrained"] = evaluate(data_.test).mae;
  }

  model_.set_trainable(spec.trainable);
  ParamList trainable;
  for (const auto& g : spec.trainable)
    for (auto& p : model_.group(g)) trainable.push_back(p);
  Adam opt(trainable, spec.lr, spec.clip_norm);

  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    double total = 0.0;
    std::size_t used = 0;
    for (const auto& idx : make_batch_indices(train.records.size(), cfg_.batch_size,
                                              epoch_seed(spec, epoch), BatchMode::Evaluation)) {
      Var out;
      if (target) {
        out = model_.unimodal_head(*target, constant(gather_blocks(cached, idx, 1)));
      } else {
        std::array<Tensor, 3> x;
        for (std::size_t k = 0; k < 3; ++k)
          x[k] = gather_blocks(tables[k], idx, train.header.shapes[k].length);
        out = model_.predict_multimodal(x, idx.size());
      }
      const Var loss = task_loss(out, train, idx, target);
      loss.backward();
      opt.step();
      total += loss.value().item();
      ++used;
    }
    report.loss_curve.push_back(used ? total / static_cast<double>(used) : 0.0);
  }
  model_.set_trainable({});
  report.seconds = seconds_since(start);
  return report;
}

std::vector<StageReport> Pipeline::run_classifier_phase() {
  std::vector<StageReport> reports;
  reports.push_back(train_classifier(std::nullopt));
  for (auto m : kModalities) reports.push_back(train_classifier(m));
  completed_ = StageId::Classifier;
  return reports;
}

std::array<Tensor, 3> Pipeline::hidden_sequences(const Dataset& ds) const {
  const std::size_t n = ds.records.size();
  const std::size_t d = model_.config().model_dim;
  const auto tables = modality_tables(ds);
  std::array<Tensor, 3> out;
  for (std::size_t k = 0; k < 3; ++k) out[k] = Tensor({n * ds.header.shapes[k].length, d});
  const auto chunks = ordered_chunks(n);
  parallel_for(chunks.size(), cfg_.threads, [&](std::size_t c) {
    const auto& idx = chunks[c];
    for (auto m : kModalities) {
      const std::size_t k = index_of(m);
      const std::size_t len = ds.header.shapes[k].length;
      const auto h = model_.encode(m, gather_blocks(tables[k], idx, len), idx.size());
      scatter_rows(out[k], h.sequence.value(), idx.front(), len);
    }
  });
  return out;
}

Tensor Pipeline::pooled_hidden(Modality m, const Dataset& ds) const {
  const std::size_t n = ds.records.size();
  const std::size_t k = index_of(m);
  const std::size_t len = ds.header.shapes[k].length;
  const Tensor table = modality_tables(ds)[k];
  Tensor out({n, model_.config().model_dim});
  const auto chunks = ordered_chunks(n);
  parallel_for(chunks.size(), cfg_.threads, [&](std::size_t c) {
    const auto& idx = chunks[c];
    const auto h = model_.encode(m, gather_blocks(table, idx, len), idx.size());
    scatter_rows(out, h.pooled.value(), idx.front(), 1);
  });
  return out;
}

std::array<Tensor, kRefinedSlots> Pipeline::refined_pooled(const Dataset& ds) const {
  const std::size_t n = ds.records.size();
  const auto tables = modality_tables(ds);
  std::array<Tensor, kRefinedSlots> out;
  for (auto& t : out) t = Tensor({n, model_.config().model_dim});
  const auto chunks = ordered_chunks(n);
  parallel_for(chunks.size(), cfg_.threads, [&](std::size_t c) {
    const auto& idx = chunks[c];
    std::array<HiddenRepresentation, 3> h;
    for (auto m : kModalities) {
      const std::size_t k = index_of(m);
      h[k] =
          model_.encode(m, gather_blocks(tables[k], idx, ds.header.shapes[k].length), idx.size());
    }
    const RefinedSet r = model_.refine(h[0], h[1], h[2]);
    for (std::size_t s = 0; s < kRefinedSlots; ++s)
      scatter_rows(out[s], r.members[s].pooled.value(), idx.front(), 1);
  });
  return out;
}

Tensor Pipeline::fused(const Dataset& ds) const {
  const auto pooled = refined_pooled(ds);
  NoGradGuard no_grad;
  std::vector<Var> parts;
  for (const auto& p : pooled) parts.push_back(constant(p));
  return model_.fuse_pooled(parts).value();
}

std::vector<double> Pipeline::predict(const Dataset& ds, std::optional<Modality> target) const {
  const std::size_t n = ds.records.size();
  const auto tables = modality_tables(ds);
  const bool classification = ds.header.task == TaskKind::Classification;
  std::vector<double> out(n);
  const auto chunks = ordered_chunks(n);
  parallel_for(chunks.size(), cfg_.threads, [&](std::size_t c) {
    const auto& idx = chunks[c];
    Var scores;
    if (target) {
      const std::size_t k = index_of(*target);
      const auto h = model_.encode(
          *target, gather_blocks(tables[k], idx, ds.header.shapes[k].length), idx.size());
      scores = model_.unimodal_head(*target, h.pooled);
    } else {
      std::array<Tensor, 3> x;
      for (std::size_t k = 0; k < 3; ++k)
        x[k] = gather_blocks(tables[k], idx, ds.header.shapes[k].length);
      scores = model_.predict_multimodal(x, idx.size());
    }
    const Tensor& s = scores.value();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (!classification) {
        out[idx[r]] = s(r, 0);
        continue;
      }
      std::size_t best = 0;
      for (std::size_t j = 1; j < s.cols(); ++j)
        if (s(r, j) > s(r, best)) best = j;
      out[idx[r]] = class_score(static_cast<std::int64_t>(best), ds.header.num_classes);
    }
  });
  return out;
}

namespace {
std::vector<double> metric_targets(const Dataset& ds, std::optional<Modality> m) {
  std::vector<double> out;
  for (const auto& r : ds.records) {
    const double y = m && r.modality_labels ? (*r.modality_labels)[index_of(*m)] : r.label;
    out.push_back(ds.header.task == TaskKind::Classification
                      ? class_score(std::llround(y), ds.header.num_classes)
                      : y);
  }
  return out;
}
}  // namespace

MetricReport Pipeline::evaluate(const Dataset& ds) const {
  const auto pred = predict(ds, std::nullopt);
  const auto target = metric_targets(ds, std::nullopt);
  return evaluate_predictions(pred, target, cfg_.metric_options);
}

MetricReport Pipeline::evaluate_unimodal(Modality m, const Dataset& ds) const {
  const auto pred = predict(ds, m);
  const auto target = metric_targets(ds, m);
  return evaluate_predictions(pred, target, cfg_.metric_options);
}

double Pipeline::sscl_loss(const Dataset& ds, std::span<const std::size_t> items) const {
  NoGradGuard no_grad;
  const Batch b = stack_batch(ds, items);
  std::array<HiddenRepresentation, 3> h;
  for (auto m : kModalities) h[index_of(m)] = model_.encode(m, b.features[index_of(m)], b.size());
  const RefinedSet r = model_.refine(h[0], h[1], h[2]);
  std::array<std::pair<Var, Var>, 3> views;
  for (auto m : kModalities) {
    const auto pair = view_pair(m);
    views[index_of(m)] = {model_.project_view(m, r[pair[0]].pooled),
                          model_.project_view(m, r[pair[1]].pooled)};
  }
  return sscl_total(views, cfg_.contrastive()).value().item();
}

double Pipeline::fused_supcon_loss(const Dataset& ds, std::span<const std::size_t> items) const {
  NoGradGuard no_grad;
  const Batch b = stack_batch(ds, items);
  std::array<HiddenRepresentation, 3> h;
  for (auto m : kModalities) h[index_of(m)] = model_.encode(m, b.features[index_of(m)], b.size());
  const Var z = model_.project_fused(model_.fuse(model_.refine(h[0], h[1], h[2])));
  return supcon_loss(z, contrastive_labels(ds, items, std::nullopt), cfg_.contrastive())
      .value()
      .item();
}

double Pipeline::paired_view_cosine(const Dataset& ds, std::span<const std::size_t> items) const {
  NoGradGuard no_grad;
  const Batch b = stack_batch(ds, items);
  std::array<HiddenRepresentation, 3> h;
  for (auto m : kModalities) h[index_of(m)] = model_.encode(m, b.features[index_of(m)], b.size());
  const RefinedSet r = model_.refine(h[0], h[1], h[2]);
  double total = 0.0;
  for (auto m : kModalities) {
    const auto pair = view_pair(m);
    const Tensor z = l2_normalize_rows(model_.project_view(m, r[pair[0]].pooled)).value();
    const Tensor zp = l2_normalize_rows(model_.project_view(m, r[pair[1]].pooled)).value();
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t c = 0; c < z.cols(); ++c) total += z(i, c) * zp(i, c);
  }
  return total / static_cast<double>(3 * items.size());
}

}  // namespace mvcl
