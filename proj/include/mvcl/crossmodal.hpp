#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "mvcl/encoders.hpp"

namespace mvcl {

struct CrossModalConfig {
  std::size_t model_dim = 512;
  std::size_t num_heads = 8;
  std::size_t ffn_dim = 1024;
  std::size_t blocks_per_level = 1;
  bool type_embeddings = true;

  void validate() const;
};

/// Post-norm cross-attention block: queries from one sequence, keys/values
/// from another; attention, residual, norm, FFN, residual, norm.
class CrossAttentionBlock {
 public:
  CrossAttentionBlock() = default;
  CrossAttentionBlock(const CrossModalConfig& cfg, Rng& rng);

  /// q_seq: [batch*lq, d]; kv_seq: [batch*lk, d] -> [batch*lq, d].
  Var forward(const Var& q_seq, const Var& kv_seq, std::size_t batch) const;
  /// Multi-head attention output alone, before the residual connection.
  Var attend(const Var& q_seq, const Var& kv_seq, std::size_t batch) const;

  void collect(ParamList& out, const std::string& prefix) const;

 private:
  MultiHeadAttention attn_;
  LayerNorm norm_attn_;
  FeedForward ffn_;
  LayerNorm norm_ffn_;
};

/// The six refinement orders. For slot xyz the level-1 block attends from
/// modality y to z, and level 2 attends from x to that result; the member
/// carries x's sequence length.
enum class RefinedSlot : std::uint8_t { AVT = 0, VAT, TVA, VTA, TAV, ATV };
inline constexpr std::size_t kRefinedSlots = 6;

struct SlotOrder {
  Modality outer_query;
  Modality inner_query;
  Modality source;
};

SlotOrder slot_order(RefinedSlot slot);
std::string slot_name(RefinedSlot slot);  // e.g. "f_avt"
/// Modality whose information the slot refines (its last subscript letter).
Modality slot_target(RefinedSlot slot);
/// The two slots aimed at `target`, in (view, view') order.
std::array<RefinedSlot, 2> view_pair(Modality target);

struct RefinedMember {
  Var sequence;  // [batch * length, d]
  Var pooled;    // [batch, d]
  std::size_t length = 0;
};

struct RefinedSet {
  std::array<RefinedMember, kRefinedSlots> members;
  std::size_t batch = 0;

  const RefinedMember& operator[](RefinedSlot s) const {
    return members[static_cast<std::size_t>(s)];
  }
};

/// Two-level cross-modal Transformer producing the six refined members.
/// Each slot owns its level-1 and level-2 blocks; nothing is shared.
class CrossModalRefiner {
 public:
  CrossModalRefiner() = default;
  CrossModalRefiner(const CrossModalConfig& cfg, Rng& rng);

  RefinedSet refine(const HiddenRepresentation& h_t, const HiddenRepresentation& h_a,
                    const HiddenRepresentation& h_v) const;

  void collect(ParamList& out, const std::string& prefix) const;

 private:
  CrossModalConfig cfg_;
  std::array<std::vector<CrossAttentionBlock>, kRefinedSlots> level1_;
  std::array<std::vector<CrossAttentionBlock>, kRefinedSlots> level2_;
};

/// f = mean over tokens of SA(L(pooled_k) + e_k), k over the six slots.
class Fusion {
 public:
  Fusion() = default;
  Fusion(const CrossModalConfig& cfg, Rng& rng);

  Var fuse(const RefinedSet& r) const;
  /// Six pooled tensors [batch, d] in slot order.
  Var fuse_pooled(std::span<const Var> pooled) const;

  void collect(ParamList& out, const std::string& prefix) const;
  /// Present only when type embeddings are enabled.
  Var& type_embeddings() { return type_embeddings_; }

 private:
  Linear shared_;
  Var type_embeddings_;  // [6, d]
  CrossAttentionBlock self_attention_;
};

}  // namespace mvcl
