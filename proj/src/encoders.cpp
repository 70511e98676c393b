#include "mvcl/encoders.hpp"

#include <cmath>

#include "mvcl/error.hpp"

namespace mvcl {

char modality_letter(Modality m) {
  switch (m) {
    case Modality::Text:
      return 't';
    case Modality::Acoustic:
      return 'a';
    case Modality::Vision:
      return 'v';
  }
  return '?';
}

void EncoderConfig::validate() const {
  require(input_dim >= 1 && model_dim >= 1 && num_heads >= 1 && ffn_dim >= 1 && max_seq_len >= 1,
          ErrorKind::Config, "encoder dimensions must be >= 1");
  if (model_dim % num_heads != 0)
    fail(ErrorKind::Config, "model_dim " + std::to_string(model_dim) +
                                " not divisible by num_heads " + std::to_string(num_heads));
}

Tensor sinusoidal_encoding(std::size_t length, std::size_t width) {
  Tensor pe({length, width});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double pair = static_cast<double>(i - i % 2);
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(width));
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg),
      input_((cfg.validate(), cfg.input_dim), cfg.model_dim, rng),
      final_norm_(cfg.model_dim),
      positions_(constant(sinusoidal_encoding(cfg.max_seq_len, cfg.model_dim))) {
  layers_.reserve(cfg.num_layers);
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    layers_.push_back(Layer{
        LayerNorm(cfg.model_dim), MultiHeadAttention(cfg.model_dim, cfg.num_heads, rng),
        LayerNorm(cfg.model_dim), FeedForward(cfg.model_dim, cfg.ffn_dim, cfg.model_dim, rng)});
  }
}

HiddenRepresentation Encoder::encode(const Var& x, std::size_t batch) const {
  const Tensor& xv = x.value();
  if (batch == 0 || xv.rank() != 2 || xv.rows() != batch * cfg_.max_seq_len ||
      xv.cols() != cfg_.input_dim)
    fail(ErrorKind::Config, "encoder input " + shape_string(xv.shape()) +
                                " does not match configured [" + std::to_string(batch) + "x" +
                                std::to_string(cfg_.max_seq_len) + ", " +
                                std::to_string(cfg_.input_dim) + "]");

  Var h = add_tiled(input_.forward(x), positions_);
  for (const auto& layer : layers_) {
    const Var normed = layer.norm_attn.forward(h);
    h = add(h, layer.attn.forward(normed, normed, batch));
    h = add(h, layer.ffn.forward(layer.norm_ffn.forward(h)));
  }
  if (!layers_.empty()) h = final_norm_.forward(h);
  return HiddenRepresentation{h, segment_mean(h, batch), batch, cfg_.max_seq_len};
}

HiddenRepresentation Encoder::encode(const Tensor& x) const { return encode(constant(x), 1); }

void Encoder::collect(ParamList& out, const std::string& prefix) const {
  input_.collect(out, prefix + ".input");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    layers_[i].norm_attn.collect(out, p + ".norm_attn");
    layers_[i].attn.collect(out, p + ".attn");
    layers_[i].norm_ffn.collect(out, p + ".norm_ffn");
    layers_[i].ffn.collect(out, p + ".ffn");
  }
  if (!layers_.empty()) final_norm_.collect(out, prefix + ".final_norm");
}

ProjectionHead::ProjectionHead(std::size_t width, std::size_t out_dim, Rng& rng)
    : mlp_(width, width, out_dim, rng), out_dim_(out_dim) {}

void ProjectionHead::collect(ParamList& out, const std::string& prefix) const {
  mlp_.collect(out, prefix);
}

}  // namespace mvcl
