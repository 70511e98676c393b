#include "mvcl/crossmodal.hpp"

#include "mvcl/error.hpp"

namespace mvcl {

void CrossModalConfig::validate() const {
  require(model_dim >= 1 && num_heads >= 1 && ffn_dim >= 1 && blocks_per_level >= 1,
          ErrorKind::Config, "cross-modal dimensions must be >= 1");
  require(model_dim % num_heads == 0, ErrorKind::Config, "model_dim not divisible by num_heads");
}

CrossAttentionBlock::CrossAttentionBlock(const CrossModalConfig& cfg, Rng& rng)
    : attn_(cfg.model_dim, cfg.num_heads, rng),
      norm_attn_(cfg.model_dim),
      ffn_(cfg.model_dim, cfg.ffn_dim, cfg.model_dim, rng),
      norm_ffn_(cfg.model_dim) {}

Var CrossAttentionBlock::attend(const Var& q_seq, const Var& kv_seq, std::size_t batch) const {
  if (q_seq.value().rank() != 2 || kv_seq.value().rank() != 2 ||
      q_seq.value().cols() != kv_seq.value().cols())
    fail(ErrorKind::Config, "cross_attend width mismatch " + shape_string(q_seq.shape()) + " vs " +
                                shape_string(kv_seq.shape()));
  return attn_.forward(q_seq, kv_seq, batch);
}

Var CrossAttentionBlock::forward(const Var& q_seq, const Var& kv_seq, std::size_t batch) const {
  const Var y = norm_attn_.forward(add(q_seq, attend(q_seq, kv_seq, batch)));
  return norm_ffn_.forward(add(y, ffn_.forward(y)));
}

void CrossAttentionBlock::collect(ParamList& out, const std::string& prefix) const {
  attn_.collect(out, prefix + ".attn");
  norm_attn_.collect(out, prefix + ".norm_attn");
  ffn_.collect(out, prefix + ".ffn");
  norm_ffn_.collect(out, prefix + ".norm_ffn");
}

SlotOrder slot_order(RefinedSlot slot) {
  using M = Modality;
  switch (slot) {
    case RefinedSlot::AVT:
      return {M::Acoustic, M::Vision, M::Text};
    case RefinedSlot::VAT:
      return {M::Vision, M::Acoustic, M::Text};
    case RefinedSlot::TVA:
      return {M::Text, M::Vision, M::Acoustic};
    case RefinedSlot::VTA:
      return {M::Vision, M::Text, M::Acoustic};
    case RefinedSlot::TAV:
      return {M::Text, M::Acoustic, M::Vision};
    case RefinedSlot::ATV:
      return {M::Acoustic, M::Text, M::Vision};
  }
  fail(ErrorKind::InvalidArgument, "unknown refined slot");
}

std::string slot_name(RefinedSlot slot) {
  const SlotOrder o = slot_order(slot);
  return std::string("f_") + modality_letter(o.outer_query) + modality_letter(o.inner_query) +
         modality_letter(o.source);
}

Modality slot_target(RefinedSlot slot) { return slot_order(slot).source; }

std::array<RefinedSlot, 2> view_pair(Modality target) {
  switch (target) {
    case Modality::Text:
      return {RefinedSlot::AVT, RefinedSlot::VAT};
    case Modality::Acoustic:
      return {RefinedSlot::TVA, RefinedSlot::VTA};
    case Modality::Vision:
      return {RefinedSlot::TAV, RefinedSlot::ATV};
  }
  fail(ErrorKind::InvalidArgument, "unknown modality");
}

CrossModalRefiner::CrossModalRefiner(const CrossModalConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  for (std::size_t s = 0; s < kRefinedSlots; ++s) {
    for (std::size_t b = 0; b < cfg.blocks_per_level; ++b) {
      level1_[s].emplace_back(cfg, rng);
      level2_[s].emplace_back(cfg, rng);
    }
  }
}

RefinedSet CrossModalRefiner::refine(const HiddenRepresentation& h_t,
                                     const HiddenRepresentation& h_a,
                                     const HiddenRepresentation& h_v) const {
  const std::array<const HiddenRepresentation*, 3> hidden = {&h_t, &h_a, &h_v};
  const std::size_t batch = h_t.batch;
  for (const auto* h : hidden) {
    require(h->batch == batch && h->sequence.value().cols() == cfg_.model_dim, ErrorKind::Config,
            "refine: hidden representations disagree in batch or width");
  }

  RefinedSet out;
  out.batch = batch;
  for (std::size_t s = 0; s < kRefinedSlots; ++s) {
    const SlotOrder order = slot_order(static_cast<RefinedSlot>(s));
    const HiddenRepresentation& outer = *hidden[index_of(order.outer_query)];
    const HiddenRepresentation& inner = *hidden[index_of(order.inner_query)];
    const HiddenRepresentation& source = *hidden[index_of(order.source)];

    Var first = inner.sequence;
    for (const auto& block : level1_[s]) first = block.forward(first, source.sequence, batch);
    Var second = outer.sequence;
    for (const auto& block : level2_[s]) second = block.forward(second, first, batch);

    out.members[s] = RefinedMember{second, segment_mean(second, batch), outer.length};
  }
  return out;
}

void CrossModalRefiner::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t s = 0; s < kRefinedSlots; ++s) {
    const std::string p = prefix + "." + slot_name(static_cast<RefinedSlot>(s));
    for (std::size_t b = 0; b < level1_[s].size(); ++b)
      level1_[s][b].collect(out, p + ".level1." + std::to_string(b));
    for (std::size_t b = 0; b < level2_[s].size(); ++b)
      level2_[s][b].collect(out, p + ".level2." + std::to_string(b));
  }
}

Fusion::Fusion(const CrossModalConfig& cfg, Rng& rng)
    : shared_(cfg.model_dim, cfg.model_dim, rng), self_attention_(cfg, rng) {
  if (cfg.type_embeddings) {
    Tensor e({kRefinedSlots, cfg.model_dim});
    for (auto& v : e.data()) v = 0.02 * rng.normal();
    type_embeddings_ = Var(std::move(e), true);
  }
}

Var Fusion::fuse_pooled(std::span<const Var> pooled) const {
  require(pooled.size() == kRefinedSlots, ErrorKind::Shape,
          "fuse needs all six refined representations");
  const std::size_t batch = pooled[0].value().rows();
  std::vector<Var> mapped;
  mapped.reserve(kRefinedSlots);
  for (const auto& p : pooled) mapped.push_back(shared_.forward(p));
  Var tokens = interleave_rows(mapped);  // [batch*6, d]
  if (type_embeddings_) tokens = add_tiled(tokens, type_embeddings_);
  return segment_mean(self_attention_.forward(tokens, tokens, batch), batch);
}

Var Fusion::fuse(const RefinedSet& r) const {
  std::vector<Var> pooled;
  pooled.reserve(kRefinedSlots);
  for (const auto& m : r.members) pooled.push_back(m.pooled);
  return fuse_pooled(pooled);
}

void Fusion::collect(ParamList& out, const std::string& prefix) const {
  shared_.collect(out, prefix + ".shared");
  if (type_embeddings_) out.push_back({prefix + ".type_embeddings", type_embeddings_});
  self_attention_.collect(out, prefix + ".self_attention");
}

}  // namespace mvcl
