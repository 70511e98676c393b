#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvcl/checkpoint.hpp"
#include "mvcl/data.hpp"
#include "mvcl/losses.hpp"
#include "mvcl/metrics.hpp"
#include "mvcl/model.hpp"

namespace mvcl {

struct TrainConfig {
  std::size_t batch_size = 16;
  double temperature = 0.2;
  double lr = 1e-3;
  double clip_norm = 5.0;
  std::array<std::size_t, 4> epochs{20, 20, 20, 30};  // stage 1, 2, 3, classifier
  Reduction reduction = Reduction::Mean;
  double label_granularity = 0.1;
  BinaryMetricOptions metric_options;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // evaluation fan-out only

  void validate() const;
  ContrastiveConfig contrastive() const { return {temperature, reduction}; }
};

enum class StageLoss { UnimodalSupcon, CrossModalSscl, FusedSupcon, MultimodalTask, UnimodalTask };

struct StageSpec {
  std::string name;  // "stage1.t", "stage2", "stage3", "cls.mm", "cls.t", ...
  StageId id = StageId::Init;
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
  StageLoss loss = StageLoss::UnimodalSupcon;
  std::optional<Modality> modality;
  std::size_t epochs = 0;
  double lr = 1e-3;
  double clip_norm = 5.0;
};

/// Declarative record of which parameter groups train and which stay frozen
/// in every phase. Projection heads never appear as trainable after the
/// stage that owns them.
struct StagePlan {
  std::vector<StageSpec> stages;

  const StageSpec& get(const std::string& name) const;
};

StagePlan default_stage_plan(const TrainConfig& cfg);

/// Adam with global gradient-norm clipping, no weight decay.
class Adam {
 public:
  Adam(ParamList params, double lr, double clip_norm, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();

 private:
  ParamList params_;
  std::vector<Tensor> m_, v_;
  double lr_, clip_norm_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct StageReport {
  std::string name;
  StageId stage = StageId::Init;
  std::vector<double> loss_curve;  // mean batch loss per epoch
  std::size_t skipped_batches = 0;
  double seconds = 0.0;
  std::map<std::string, double> values;
};

/// Runs the four training phases on a model. Frozen groups are excluded from
/// the tape and from the optimizer, so their bytes cannot change.
class Pipeline {
 public:
  Pipeline(Model& model, TrainConfig cfg, const DatasetSplits& data);

  const StagePlan& plan() const { return plan_; }
  const TrainConfig& config() const { return cfg_; }
  StageId completed() const { return completed_; }
  /// Declares the model state restored from a checkpoint of `stage`.
  void mark_completed(StageId stage) { completed_ = stage; }

  std::vector<StageReport> run_stage1();
  StageReport run_stage2();
  StageReport run_stage3();
  /// nullopt trains the multimodal head with everything upstream finetuned;
  /// a modality trains that unimodal head on frozen pooled hidden states.
  StageReport train_classifier(std::optional<Modality> target);
  /// Multimodal head first, then the three unimodal heads on the final
  /// (finetuned, now frozen) encoders.
  std::vector<StageReport> run_classifier_phase();

  // Frozen-parameter evaluation helpers.
  std::array<Tensor, 3> hidden_sequences(const Dataset& ds) const;            // [N*L_m, D]
  Tensor pooled_hidden(Modality m, const Dataset& ds) const;                  // [N, D]
  std::array<Tensor, kRefinedSlots> refined_pooled(const Dataset& ds) const;  // [N, D] each
  Tensor fused(const Dataset& ds) const;                                      // [N, D]
  std::vector<double> predict(const Dataset& ds, std::optional<Modality> target) const;
  MetricReport evaluate(const Dataset& ds) const;
  MetricReport evaluate_unimodal(Modality m, const Dataset& ds) const;

  /// Objective values on fixed sample sets, for monitoring.
  double sscl_loss(const Dataset& ds, std::span<const std::size_t> items) const;
  double fused_supcon_loss(const Dataset& ds, std::span<const std::size_t> items) const;
  /// Mean cosine between paired projected views (z_m, z'_m) over m and items.
  double paired_view_cosine(const Dataset& ds, std::span<const std::size_t> items) const;

  std::vector<std::int64_t> contrastive_labels(const Dataset& ds,
                                               std::span<const std::size_t> items,
                                               std::optional<Modality> m) const;
  RngState rng_state() const { return rng_.state(); }

 private:
  StageReport run_unimodal_contrastive(const StageSpec& spec);
  std::uint64_t epoch_seed(const StageSpec& spec, std::size_t epoch) const;
  Var task_loss(const Var& out, const Dataset& ds, std::span<const std::size_t> items,
                std::optional<Modality> m) const;
  void require_completed(StageId needed, const char* stage) const;

  Model& model_;
  TrainConfig cfg_;
  const DatasetSplits& data_;
  StagePlan plan_;
  Rng rng_;
  StageId completed_ = StageId::Init;
};

}  // namespace mvcl
