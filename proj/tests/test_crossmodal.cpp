#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mvcl/crossmodal.hpp"
#include "mvcl/error.hpp"
#include "test_util.hpp"

using namespace mvcl;
using testutil::prows;
using testutil::pvec;
using testutil::rows_of;

namespace {

constexpr std::size_t kD = 8;
const CrossModalConfig kCfg{kD, 2, 16, 1, true};

std::array<HiddenRepresentation, 3> random_hidden(std::size_t batch,
                                                  std::array<std::size_t, 3> lengths, Rng& rng) {
  std::array<HiddenRepresentation, 3> h;
  for (std::size_t m = 0; m < 3; ++m) {
    const Var seq(testutil::random_tensor(batch * lengths[m], kD, rng));
    h[m] = {seq, segment_mean(seq, batch), batch, lengths[m]};
  }
  return h;
}

}  // namespace

TEST(Slots, NamesFollowSubscripts) {
  std::set<std::string> names;
  for (std::size_t s = 0; s < kRefinedSlots; ++s) names.insert(slot_name(RefinedSlot(s)));
  EXPECT_EQ(names, (std::set<std::string>{"f_avt", "f_vat", "f_tva", "f_vta", "f_tav", "f_atv"}));
  EXPECT_EQ(slot_name(RefinedSlot::AVT), "f_avt");
  const SlotOrder o = slot_order(RefinedSlot::AVT);
  EXPECT_EQ(o.outer_query, Modality::Acoustic);
  EXPECT_EQ(o.inner_query, Modality::Vision);
  EXPECT_EQ(o.source, Modality::Text);
}

TEST(Slots, ViewPairsAimAtTheirTarget) {
  for (Modality m : kModalities) {
    const auto pair = view_pair(m);
    EXPECT_NE(pair[0], pair[1]);
    EXPECT_EQ(slot_target(pair[0]), m);
    EXPECT_EQ(slot_target(pair[1]), m);
  }
  EXPECT_EQ(view_pair(Modality::Text), (std::array{RefinedSlot::AVT, RefinedSlot::VAT}));
  EXPECT_EQ(view_pair(Modality::Acoustic), (std::array{RefinedSlot::TVA, RefinedSlot::VTA}));
  EXPECT_EQ(view_pair(Modality::Vision), (std::array{RefinedSlot::TAV, RefinedSlot::ATV}));
}

TEST(CrossAttention, OutputTakesQueryLength) {
  Rng rng(1);
  const CrossAttentionBlock block(kCfg, rng);
  const Var q(testutil::random_tensor(2 * 3, kD, rng));
  const Var kv(testutil::random_tensor(2 * 5, kD, rng));
  EXPECT_EQ(block.forward(q, kv, 2).shape(), (Shape{6, kD}));
}

TEST(CrossAttention, IdenticalKeyRowsGiveIdenticalAttentionRows) {
  Rng rng(2);
  const CrossAttentionBlock block(kCfg, rng);
  const Tensor row = testutil::random_tensor(1, kD, rng);
  Tensor kv({4, kD});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < kD; ++j) kv(i, j) = row(0, j);
  const auto out =
      rows_of(block.attend(Var(testutil::random_tensor(3, kD, rng)), Var(kv), 1).value());
  for (std::size_t i = 1; i < 3; ++i) testutil::expect_rows_near({out[i]}, {out[0]}, 1e-12);
}

TEST(CrossAttention, MatchesExplicitFormulaOracle) {
  Rng rng(3);
  const CrossAttentionBlock block(kCfg, rng);
  ParamList ps;
  block.collect(ps, "blk");
  const Tensor q = testutil::random_tensor(3, kD, rng);
  const Tensor kv = testutil::random_tensor(5, kD, rng);
  const auto want = testutil::cross_block(ps, "blk", rows_of(q), rows_of(kv), 2);
  testutil::expect_rows_near(rows_of(block.forward(Var(q), Var(kv), 1).value()), want, 1e-10);
}

TEST(CrossAttention, WidthMismatchIsConfigError) {
  Rng rng(4);
  const CrossAttentionBlock block(kCfg, rng);
  try {
    (void)block.forward(Var(testutil::random_tensor(3, kD, rng)),
                        Var(testutil::random_tensor(3, kD + 1, rng)), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Refine, QuerySideLengthRule) {
  Rng rng(5);
  const CrossModalRefiner refiner(kCfg, rng);
  const std::array<std::size_t, 3> lengths{4, 3, 5};
  const auto h = random_hidden(2, lengths, rng);
  const RefinedSet r = refiner.refine(h[0], h[1], h[2]);
  EXPECT_EQ(r.batch, 2u);
  for (std::size_t s = 0; s < kRefinedSlots; ++s) {
    const auto outer = index_of(slot_order(RefinedSlot(s)).outer_query);
    EXPECT_EQ(r.members[s].length, lengths[outer]);
    EXPECT_EQ(r.members[s].sequence.shape(), (Shape{2 * lengths[outer], kD}));
    EXPECT_EQ(r.members[s].pooled.shape(), (Shape{2, kD}));
  }
  EXPECT_EQ(r[RefinedSlot::AVT].length, 3u);
  EXPECT_EQ(r[RefinedSlot::VAT].length, 5u);
}

TEST(Refine, Deterministic) {
  Rng rng(6);
  const CrossModalRefiner refiner(kCfg, rng);
  const auto h = random_hidden(2, {3, 3, 3}, rng);
  const RefinedSet a = refiner.refine(h[0], h[1], h[2]);
  const RefinedSet b = refiner.refine(h[0], h[1], h[2]);
  for (std::size_t s = 0; s < kRefinedSlots; ++s)
    EXPECT_TRUE(bitwise_equal(a.members[s].sequence.value(), b.members[s].sequence.value()));
}

TEST(Refine, SingleItemMatchesChainedOracle) {
  Rng rng(7);
  const CrossModalRefiner refiner(kCfg, rng);
  ParamList ps;
  refiner.collect(ps, "cm");
  const auto h = random_hidden(1, {4, 3, 5}, rng);
  const RefinedSet r = refiner.refine(h[0], h[1], h[2]);
  for (std::size_t s = 0; s < kRefinedSlots; ++s) {
    const SlotOrder o = slot_order(RefinedSlot(s));
    const std::string p = "cm." + slot_name(RefinedSlot(s));
    const auto first = testutil::cross_block(ps, p + ".level1.0",
                                             rows_of(h[index_of(o.inner_query)].sequence.value()),
                                             rows_of(h[index_of(o.source)].sequence.value()), 2);
    const auto second = testutil::cross_block(
        ps, p + ".level2.0", rows_of(h[index_of(o.outer_query)].sequence.value()), first, 2);
    const auto pooled = oracle::column_mean(second);
    testutil::expect_rows_near(rows_of(r.members[s].pooled.value()), {pooled}, 1e-10);
  }
}

TEST(Refine, SlotsOwnDistinctParameters) {
  Rng rng(8);
  const CrossModalRefiner refiner(kCfg, rng);
  ParamList ps;
  refiner.collect(ps, "cm");
  EXPECT_FALSE(bitwise_equal(testutil::param(ps, "cm.f_avt.level1.0.attn.q.weight").value(),
                             testutil::param(ps, "cm.f_vat.level1.0.attn.q.weight").value()));
  std::set<std::string> names;
  for (const auto& p : ps) names.insert(p.name);
  EXPECT_EQ(names.size(), ps.size());
}

TEST(Refine, ItemsAreIndependent) {
  Rng rng(9);
  const CrossModalRefiner refiner(kCfg, rng);
  auto h = random_hidden(2, {3, 4, 2}, rng);
  const RefinedSet base = refiner.refine(h[0], h[1], h[2]);
  // Perturb item 1 of the text sequence only; item 0 must not move.
  Tensor t = h[0].sequence.value();
  for (std::size_t j = 0; j < kD; ++j) t(3, j) += 1.0;
  h[0].sequence = Var(t);
  const RefinedSet moved = refiner.refine(h[0], h[1], h[2]);
  for (std::size_t s = 0; s < kRefinedSlots; ++s) {
    const auto a = rows_of(base.members[s].pooled.value());
    const auto b = rows_of(moved.members[s].pooled.value());
    testutil::expect_rows_near({b[0]}, {a[0]}, 1e-13);
  }
}

TEST(Fusion, MatchesExplicitOracle) {
  Rng rng(10);
  const Fusion fusion(kCfg, rng);
  ParamList ps;
  fusion.collect(ps, "fu");
  std::vector<Var> pooled;
  for (std::size_t s = 0; s < kRefinedSlots; ++s)
    pooled.emplace_back(testutil::random_tensor(2, kD, rng));
  const auto got = rows_of(fusion.fuse_pooled(pooled).value());
  ASSERT_EQ(got.size(), 2u);
  const auto emb = prows(ps, "fu.type_embeddings");
  for (std::size_t b = 0; b < 2; ++b) {
    oracle::Rows tokens;
    for (std::size_t s = 0; s < kRefinedSlots; ++s) {
      auto row = oracle::linear({rows_of(pooled[s].value())[b]}, prows(ps, "fu.shared.weight"),
                                pvec(ps, "fu.shared.bias"))[0];
      for (std::size_t j = 0; j < kD; ++j) row[j] += emb[s][j];
      tokens.push_back(row);
    }
    const auto out = testutil::cross_block(ps, "fu.self_attention", tokens, tokens, 2);
    testutil::expect_rows_near({got[b]}, {oracle::column_mean(out)}, 1e-10);
  }
}

TEST(Fusion, PermutationInvariantIffTypeEmbeddingsZero) {
  Rng rng(11);
  Fusion fusion(kCfg, rng);
  std::vector<Var> pooled;
  for (std::size_t s = 0; s < kRefinedSlots; ++s)
    pooled.emplace_back(testutil::random_tensor(2, kD, rng));
  std::vector<Var> shuffled{pooled[3], pooled[0], pooled[5], pooled[1], pooled[4], pooled[2]};

  const Tensor a = fusion.fuse_pooled(pooled).value();
  const Tensor b = fusion.fuse_pooled(shuffled).value();
  EXPECT_GT(max_abs_diff(a, b), 1e-6);

  fusion.type_embeddings().mutable_value().fill(0.0);
  EXPECT_LT(max_abs_diff(fusion.fuse_pooled(pooled).value(), fusion.fuse_pooled(shuffled).value()),
            1e-12);
}

TEST(Fusion, WithoutTypeEmbeddingsAlwaysInvariant) {
  Rng rng(12);
  CrossModalConfig cfg = kCfg;
  cfg.type_embeddings = false;
  const Fusion fusion(cfg, rng);
  ParamList ps;
  fusion.collect(ps, "fu");
  for (const auto& p : ps) EXPECT_EQ(p.name.find("type_embeddings"), std::string::npos);
  std::vector<Var> pooled;
  for (std::size_t s = 0; s < kRefinedSlots; ++s)
    pooled.emplace_back(testutil::random_tensor(1, kD, rng));
  std::vector<Var> reversed(pooled.rbegin(), pooled.rend());
  EXPECT_LT(max_abs_diff(fusion.fuse_pooled(pooled).value(), fusion.fuse_pooled(reversed).value()),
            1e-12);
}

TEST(Fusion, FuseUsesPooledMembers) {
  Rng rng(13);
  const CrossModalRefiner refiner(kCfg, rng);
  const Fusion fusion(kCfg, rng);
  const auto h = random_hidden(2, {3, 2, 4}, rng);
  const RefinedSet r = refiner.refine(h[0], h[1], h[2]);
  std::vector<Var> pooled;
  for (const auto& m : r.members) pooled.push_back(m.pooled);
  const Tensor f = fusion.fuse(r).value();
  EXPECT_EQ(f.shape(), (Shape{2, kD}));
  EXPECT_TRUE(bitwise_equal(f, fusion.fuse_pooled(pooled).value()));
  EXPECT_THROW(fusion.fuse_pooled(std::span<const Var>(pooled.data(), 5)), Error);
}
