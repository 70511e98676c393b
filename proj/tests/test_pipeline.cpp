#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mvcl/checkpoint.hpp"
#include "mvcl/error.hpp"
#include "mvcl/pipeline.hpp"

using namespace mvcl;

namespace {

SynthConfig tiny_synth(std::uint64_t seed) {
  SynthConfig s;
  s.train = 48;
  s.val = 24;
  s.test = 24;
  s.shapes = {{{3, 4}, {2, 3}, {3, 2}}};
  s.seed = seed;
  return s;
}

ModelConfig tiny_model(const DatasetHeader& h) {
  ModelConfig m;
  m.model_dim = 8;
  m.num_layers = 1;
  m.num_heads = 2;
  m.ffn_dim = 16;
  m.proj_dim = 4;
  m.classifier_hidden = 8;
  m.inputs = h.shapes;
  m.task = h.task;
  m.num_classes = h.num_classes;
  return m;
}

TrainConfig tiny_train(std::uint64_t seed, std::size_t epochs = 2) {
  TrainConfig t;
  t.batch_size = 8;
  t.epochs = {epochs, epochs, epochs, epochs};
  t.seed = seed;
  return t;
}

Fingerprint hash_groups(const Model& model, std::initializer_list<std::string> names) {
  ParamList all;
  for (const auto& n : names)
    for (auto& p : model.group(n)) all.push_back(p);
  return hash_params(all);
}

Fingerprint encoders(const Model& m) {
  return hash_groups(m, {groups::encoder(Modality::Text), groups::encoder(Modality::Acoustic),
                         groups::encoder(Modality::Vision)});
}

std::vector<std::size_t> first_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

struct Fixture {
  explicit Fixture(std::uint64_t seed, std::size_t epochs = 2)
      : data(generate_synthetic(tiny_synth(seed))),
        model(tiny_model(data.train.header), seed),
        pipeline(model, tiny_train(seed, epochs), data) {}

  DatasetSplits data;
  Model model;
  Pipeline pipeline;
};

}  // namespace

TEST(Plan, DeclaresTheFreezeSchedule) {
  const StagePlan plan = default_stage_plan(tiny_train(0));
  const auto& s2 = plan.get("stage2");
  EXPECT_EQ(s2.trainable,
            (std::vector<std::string>{"crossmodal", "proj2.t", "proj2.a", "proj2.v"}));
  for (Modality m : kModalities)
    EXPECT_NE(std::find(s2.frozen.begin(), s2.frozen.end(), groups::encoder(m)), s2.frozen.end());
  const auto& mm = plan.get("cls.mm");
  for (const auto& g : {"encoder.t", "encoder.a", "encoder.v", "crossmodal", "fusion", "head.mm"})
    EXPECT_NE(std::find(mm.trainable.begin(), mm.trainable.end(), g), mm.trainable.end()) << g;
  const auto& ct = plan.get("cls.t");
  EXPECT_EQ(ct.trainable, (std::vector<std::string>{"head.t"}));
  // Projection heads only ever train in the stage that owns them.
  for (const auto& s : plan.stages)
    for (const auto& g : s.trainable)
      if (g.rfind("proj1", 0) == 0) EXPECT_EQ(s.id, StageId::Stage1);
  EXPECT_THROW(plan.get("stage9"), Error);
}

TEST(Adam, FirstStepMovesEachEntryByLearningRate) {
  // With bias correction the first Adam update is lr * g / (|g| + eps').
  Var w(Tensor::vector({1.0, -2.0, 3.0}), true);
  Adam opt({{"w", w}}, 0.1, 1e9);
  weighted_sum(w, Tensor::vector({2.0, -0.5, 0.0})).backward();
  opt.step();
  EXPECT_NEAR(w.value()[0], 0.9, 1e-7);
  EXPECT_NEAR(w.value()[1], -1.9, 1e-7);
  EXPECT_EQ(w.value()[2], 3.0);
}

TEST(Adam, ClipsGlobalNorm) {
  Var a(Tensor::vector({0.0}), true);
  Var b(Tensor::vector({0.0}), true);
  Adam opt({{"a", a}, {"b", b}}, 0.1, 1.0);
  // Gradients (3, 4): norm 5 clipped to 1; Adam's first step is sign-like,
  // so only the direction survives, and both move by lr.
  add(weighted_sum(a, Tensor::vector({3.0})), weighted_sum(b, Tensor::vector({4.0}))).backward();
  opt.step();
  EXPECT_NEAR(a.value()[0], -0.1, 1e-6);
  EXPECT_NEAR(b.value()[0], -0.1, 1e-6);
}

TEST(Stages, FreezeContractAcrossEveryStage) {
  Fixture f(1);
  f.pipeline.run_stage1();
  const auto enc1 = encoders(f.model);
  const auto proj1 = hash_groups(f.model, {"proj1.t", "proj1.a", "proj1.v"});
  const auto cm0 = hash_groups(f.model, {"crossmodal"});

  f.pipeline.run_stage2();
  EXPECT_EQ(encoders(f.model), enc1);
  EXPECT_EQ(hash_groups(f.model, {"proj1.t", "proj1.a", "proj1.v"}), proj1);
  EXPECT_NE(hash_groups(f.model, {"crossmodal"}), cm0);

  const auto cm2 = hash_groups(f.model, {"crossmodal", "proj2.t", "proj2.a", "proj2.v"});
  const auto fusion0 = hash_groups(f.model, {"fusion"});
  f.pipeline.run_stage3();
  EXPECT_EQ(encoders(f.model), enc1);
  EXPECT_EQ(hash_groups(f.model, {"crossmodal", "proj2.t", "proj2.a", "proj2.v"}), cm2);
  EXPECT_NE(hash_groups(f.model, {"fusion"}), fusion0);

  const auto proj3 = hash_groups(f.model, {"proj3"});
  f.pipeline.train_classifier(std::nullopt);
  EXPECT_NE(encoders(f.model), enc1);
  EXPECT_EQ(hash_groups(f.model, {"proj3"}), proj3);

  const auto upstream = hash_groups(f.model, {"encoder.t", "encoder.a", "encoder.v", "crossmodal",
                                              "fusion", "head.mm", "head.a", "head.v"});
  const auto head_t = hash_groups(f.model, {"head.t"});
  f.pipeline.train_classifier(Modality::Text);
  EXPECT_EQ(hash_groups(f.model, {"encoder.t", "encoder.a", "encoder.v", "crossmodal", "fusion",
                                  "head.mm", "head.a", "head.v"}),
            upstream);
  EXPECT_NE(hash_groups(f.model, {"head.t"}), head_t);
}

TEST(Stages, ZeroEpochsLeaveParametersUntouched) {
  Fixture f(2, 0);
  const auto before = hash_params(f.model.params());
  f.pipeline.run_stage1();
  f.pipeline.run_stage2();
  f.pipeline.run_stage3();
  EXPECT_EQ(hash_params(f.model.params()), before);
}

TEST(Stages, OrderIsEnforced) {
  Fixture f(3);
  for (auto run : {+[](Pipeline& p) { p.run_stage2(); }, +[](Pipeline& p) { p.run_stage3(); },
                   +[](Pipeline& p) { p.train_classifier(std::nullopt); }}) {
    try {
      run(f.pipeline);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::MissingCheckpoint);
    }
  }
}

TEST(Stages, LossCurvesAreFinite) {
  Fixture f(4);
  for (const auto& r : f.pipeline.run_stage1()) {
    ASSERT_EQ(r.loss_curve.size(), 2u) << r.name;
    for (double v : r.loss_curve) EXPECT_TRUE(std::isfinite(v)) << r.name;
  }
  const auto r2 = f.pipeline.run_stage2();
  for (double v : r2.loss_curve) EXPECT_TRUE(std::isfinite(v));
}

TEST(Stages, Stage2LowersValidationLossAndAlignsViews) {
  Fixture f(5, 10);
  f.pipeline.run_stage1();
  const auto items = first_n(16);
  const double loss0 = f.pipeline.sscl_loss(f.data.val, items);
  const double cos0 = f.pipeline.paired_view_cosine(f.data.val, items);
  f.pipeline.run_stage2();
  EXPECT_LT(f.pipeline.sscl_loss(f.data.val, items), loss0);
  EXPECT_GT(f.pipeline.paired_view_cosine(f.data.val, items), cos0);
}

TEST(Stages, Stage3LowersFusedLoss) {
  Fixture f(6, 10);
  f.pipeline.run_stage1();
  f.pipeline.run_stage2();
  const auto items = first_n(16);
  const double before = f.pipeline.fused_supcon_loss(f.data.val, items);
  f.pipeline.run_stage3();
  EXPECT_LT(f.pipeline.fused_supcon_loss(f.data.val, items), before);
}

TEST(Stages, Stage3HeadIsNotOnTheClassifierPath) {
  Fixture f(7);
  f.pipeline.run_stage1();
  f.pipeline.run_stage2();
  f.pipeline.run_stage3();
  f.pipeline.run_classifier_phase();
  const auto pred = f.pipeline.predict(f.data.test, std::nullopt);
  for (auto& p : f.model.group("proj3")) p.var.mutable_value().fill(0.0);
  EXPECT_EQ(f.pipeline.predict(f.data.test, std::nullopt), pred);
}

TEST(Stages, SameSeedSameMetrics) {
  auto run = [] {
    Fixture f(8);
    f.pipeline.run_stage1();
    f.pipeline.run_stage2();
    f.pipeline.run_stage3();
    f.pipeline.run_classifier_phase();
    return std::make_pair(f.pipeline.predict(f.data.test, std::nullopt),
                          hash_params(f.model.params()));
  };
  EXPECT_EQ(run(), run());
}

TEST(Stages, ContrastiveLabelsFollowGranularity) {
  Fixture f(9);
  const auto y = f.pipeline.contrastive_labels(f.data.train, first_n(10), std::nullopt);
  for (std::size_t i = 0; i < 10; ++i)
    EXPECT_EQ(y[i], std::llround(f.data.train.records[i].label / 0.1));
}

TEST(Checkpoint, RoundTripRestoresForwardBitwise) {
  Fixture f(10);
  f.pipeline.run_stage1();
  const Checkpoint ckpt = capture(f.model, StageId::Stage1, f.pipeline.rng_state());
  const auto bytes = encode_checkpoint(ckpt);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.stage, StageId::Stage1);
  EXPECT_EQ(back.rng.seed, ckpt.rng.seed);

  Model other(tiny_model(f.data.train.header), 999);
  EXPECT_NE(hash_params(other.params()), hash_params(f.model.params()));
  restore(other, back);
  EXPECT_EQ(hash_params(other.params()), hash_params(f.model.params()));
  const Batch b = stack_batch(f.data.test, first_n(5));
  EXPECT_TRUE(bitwise_equal(other.predict_multimodal(b.features, 5).value(),
                            f.model.predict_multimodal(b.features, 5).value()));
}

TEST(Checkpoint, ConfigDriftIsFingerprintError) {
  Fixture f(11);
  const Checkpoint ckpt = capture(f.model, StageId::Init, f.pipeline.rng_state());
  ModelConfig wider = tiny_model(f.data.train.header);
  wider.ffn_dim = 32;
  Model other(wider, 11);
  const auto before = hash_params(other.params());
  try {
    restore(other, ckpt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Fingerprint);
  }
  EXPECT_EQ(hash_params(other.params()), before);
}

TEST(Checkpoint, CorruptionNeverLoadsPartially) {
  Fixture f(12);
  const auto bytes = encode_checkpoint(capture(f.model, StageId::Init, f.pipeline.rng_state()));
  for (std::size_t cut : {std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    try {
      (void)decode_checkpoint(std::span(bytes).first(cut));
      FAIL() << cut;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Parse) << cut;
    }
  }
  auto bad = bytes;
  bad[0] = 'X';
  try {
    (void)decode_checkpoint(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BadMagic);
  }
  bad = bytes;
  bad[6] = 7;  // version
  try {
    (void)decode_checkpoint(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Version);
  }
}

TEST(Checkpoint, MissingFile) {
  try {
    (void)load_checkpoint("/nonexistent/stage1.mvck");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingCheckpoint);
  }
}
