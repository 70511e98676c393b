#include "mvcl/nn.hpp"

#include <cmath>

#include "mvcl/error.hpp"

namespace mvcl {

Var xavier_param(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  return Var(std::move(w), true);
}

Var filled_param(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return Var(std::move(t), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight_(xavier_param(in, out, rng)) {
  if (with_bias) bias_ = filled_param({out}, 0.0);
}

Var Linear::forward(const Var& x) const {
  Var y = matmul(x, weight_);
  return bias_ ? add_bias(y, bias_) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_});
  if (bias_) out.push_back({prefix + ".bias", bias_});
}

LayerNorm::LayerNorm(std::size_t width)
    : gamma_(filled_param({width}, 1.0)), beta_(filled_param({width}, 0.0)) {}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma_});
  out.push_back({prefix + ".beta", beta_});
}

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng)
    : wq_(width, width, rng),
      wk_(width, width, rng, /*with_bias=*/false),
      wv_(width, width, rng),
      wo_(width, width, rng),
      heads_(heads) {
  if (heads == 0 || width % heads != 0)
    fail(ErrorKind::Config, "model width " + std::to_string(width) +
                                " must be divisible by head count " + std::to_string(heads));
}

Var MultiHeadAttention::forward(const Var& query, const Var& source, std::size_t batch) const {
  const Var q = wq_.forward(query);
  const Var k = wk_.forward(source);
  const Var v = wv_.forward(source);
  return wo_.forward(attention(q, k, v, batch, heads_));
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
  wq_.collect(out, prefix + ".q");
  wk_.collect(out, prefix + ".k");
  wv_.collect(out, prefix + ".v");
  wo_.collect(out, prefix + ".o");
}

FeedForward::FeedForward(std::size_t width, std::size_t hidden, std::size_t out, Rng& rng)
    : up_(width, hidden, rng), down_(hidden, out, rng) {}

void FeedForward::collect(ParamList& out, const std::string& prefix) const {
  up_.collect(out, prefix + ".up");
  down_.collect(out, prefix + ".down");
}

}  // namespace mvcl
