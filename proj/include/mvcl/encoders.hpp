#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvcl/nn.hpp"

namespace mvcl {

enum class Modality : std::uint8_t { Text = 0, Acoustic = 1, Vision = 2 };

inline constexpr std::array<Modality, 3> kModalities = {Modality::Text, Modality::Acoustic,
                                                        Modality::Vision};

char modality_letter(Modality m);
inline std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

struct EncoderConfig {
  std::size_t input_dim = 1;
  std::size_t model_dim = 512;
  std::size_t num_layers = 2;
  std::size_t num_heads = 8;
  std::size_t ffn_dim = 1024;
  std::size_t max_seq_len = 1;

  void validate() const;
};

/// Encoder output for a batch of items stacked along rows.
struct HiddenRepresentation {
  Var sequence;  // [batch * length, model_dim]
  Var pooled;    // [batch, model_dim], mean over each item's sequence
  std::size_t batch = 0;
  std::size_t length = 0;
};

/// Unlearned sinusoidal position table of shape [length, width].
Tensor sinusoidal_encoding(std::size_t length, std::size_t width);

/// Input projection + sinusoidal positions + pre-norm Transformer layers,
/// followed by a final layer norm when at least one layer is present.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng);

  /// x: [batch * max_seq_len, input_dim].
  HiddenRepresentation encode(const Var& x, std::size_t batch) const;
  /// Single item x: [max_seq_len, input_dim].
  HiddenRepresentation encode(const Tensor& x) const;

  void collect(ParamList& out, const std::string& prefix) const;
  const EncoderConfig& config() const { return cfg_; }
  Linear& input_projection() { return input_; }

 private:
  struct Layer {
    LayerNorm norm_attn;
    MultiHeadAttention attn;
    LayerNorm norm_ffn;
    FeedForward ffn;
  };

  EncoderConfig cfg_;
  Linear input_;
  std::vector<Layer> layers_;
  LayerNorm final_norm_;
  Var positions_;
};

/// Two-layer MLP head (width -> width, ReLU, width -> out_dim) applied to
/// pooled vectors only.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(std::size_t width, std::size_t out_dim, Rng& rng);

  /// pooled: [batch, width] -> [batch, out_dim].
  Var forward(const Var& pooled) const { return mlp_.forward(pooled); }
  Var project(const HiddenRepresentation& h) const { return forward(h.pooled); }

  void collect(ParamList& out, const std::string& prefix) const;
  std::size_t out_dim() const { return out_dim_; }
  FeedForward& mlp() { return mlp_; }

 private:
  FeedForward mlp_;
  std::size_t out_dim_ = 0;
};

}  // namespace mvcl
