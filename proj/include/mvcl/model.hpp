#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvcl/crossmodal.hpp"
#include "mvcl/data.hpp"
#include "mvcl/encoders.hpp"
#include "mvcl/losses.hpp"

namespace mvcl {

using Fingerprint = std::array<std::uint8_t, 32>;

/// Architecture description. Everything here feeds the checkpoint
/// fingerprint; training hyperparameters do not.
struct ModelConfig {
  std::size_t model_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t proj_dim = 32;
  std::size_t cross_blocks = 1;
  bool type_embeddings = true;
  std::size_t classifier_hidden = 64;
  std::array<ModalityShape, 3> inputs{};
  TaskKind task = TaskKind::Regression;
  std::uint32_t num_classes = 0;

  void validate() const;
  EncoderConfig encoder_config(Modality m) const;
  CrossModalConfig cross_config() const;
  std::size_t head_out_dim() const;
  /// Stable textual form hashed into the fingerprint.
  std::string canonical() const;
  Fingerprint fingerprint() const;
};

std::string hex(const Fingerprint& fp);

// Parameter group names used by stage plans.
namespace groups {
std::string encoder(Modality m);        // "encoder.t"
std::string unimodal_proj(Modality m);  // "proj1.t"
inline constexpr std::string_view kCrossModal = "crossmodal";
std::string view_proj(Modality m);  // "proj2.t"
inline constexpr std::string_view kFusion = "fusion";
inline constexpr std::string_view kFusedProj = "proj3";
std::string unimodal_head(Modality m);  // "head.t"
inline constexpr std::string_view kMultimodalHead = "head.mm";
std::vector<std::string> all();
}  // namespace groups

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  /// Every parameter, named "<group>.<path>", in a stable order.
  ParamList params() const;
  ParamList group(std::string_view name) const;
  /// Marks exactly the listed groups trainable; all others frozen.
  void set_trainable(std::span<const std::string> names);

  HiddenRepresentation encode(Modality m, const Tensor& x, std::size_t batch) const;
  Var project_unimodal(Modality m, const Var& pooled) const;
  RefinedSet refine(const HiddenRepresentation& t, const HiddenRepresentation& a,
                    const HiddenRepresentation& v) const;
  Var project_view(Modality target, const Var& pooled) const;
  Var fuse(const RefinedSet& r) const { return fusion_.fuse(r); }
  Var fuse_pooled(std::span<const Var> pooled) const { return fusion_.fuse_pooled(pooled); }
  Var project_fused(const Var& f) const { return fused_proj_.forward(f); }
  Var unimodal_head(Modality m, const Var& pooled) const;
  Var multimodal_head(const Var& f) const { return mm_head_.forward(f); }

  /// Full inference path: encoders -> refine -> fuse -> multimodal head.
  Var predict_multimodal(const std::array<Tensor, 3>& features, std::size_t batch) const;

  Encoder& encoder(Modality m) { return encoders_[index_of(m)]; }
  Fusion& fusion() { return fusion_; }

 private:
  void collect(ParamList& out) const;

  ModelConfig cfg_;
  std::array<Encoder, 3> encoders_;
  std::array<ProjectionHead, 3> unimodal_proj_;
  CrossModalRefiner refiner_;
  std::array<ProjectionHead, 3> view_proj_;
  Fusion fusion_;
  ProjectionHead fused_proj_;
  std::array<ClassifierHead, 3> unimodal_heads_;
  ClassifierHead mm_head_;
};

/// Order-sensitive SHA-256 over parameter names, shapes and payload bytes.
Fingerprint hash_params(const ParamList& params);

}  // namespace mvcl
