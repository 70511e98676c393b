#include "mvcl/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>
#include <utility>

#include "mvcl/error.hpp"

namespace mvcl {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using Strided = Eigen::OuterStride<>;
using SMapR = Eigen::Map<MatR, 0, Strided>;
using CSMapR = Eigen::Map<const MatR, 0, Strided>;

thread_local bool g_no_grad = false;
thread_local std::vector<std::uint8_t>* g_relu_pattern = nullptr;

CMapR view(const Tensor& t) {
  return CMapR(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MapR view(Tensor& t) {
  return MapR(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Tensor& grad_of(Node& n) {
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var make_op(Tensor value, const char* op, std::initializer_list<const Var*> inputs,
            std::function<void(Node&)> backward) {
  if (!value.all_finite()) {
    fail(ErrorKind::Numeric, std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs_grad = false;
  if (!g_no_grad) {
    for (const Var* in : inputs) needs_grad = needs_grad || in->requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Var* in : inputs) node->parents.push_back(in->node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

Var make_op_n(Tensor value, const char* op, std::span<const Var> inputs,
              std::function<void(Node&)> backward) {
  if (!value.all_finite()) {
    fail(ErrorKind::Numeric, std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs_grad = false;
  if (!g_no_grad) {
    for (const Var& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const Var& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void require_matrix(const Var& v, const char* op) {
  if (v.value().rank() != 2)
    fail(ErrorKind::Shape, std::string(op) + " expects a matrix, got " + shape_string(v.shape()));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::Shape, std::string(op) + " shape mismatch " + shape_string(a.shape()) + " vs " +
                               shape_string(b.shape()));
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op(std::move(out), "reshape", {&x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::backward() const {
  require(node_ && node_->value.numel() == 1, ErrorKind::Shape,
          "backward() requires a scalar output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  grad_of(*node_)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }

Var constant(Tensor value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows())
    fail(ErrorKind::Shape, "matmul inner dimension mismatch " + shape_string(A.shape()) + " x " +
                               shape_string(B.shape()));
  Tensor out({A.rows(), B.cols()});
  view(out).noalias() = view(A) * view(B);
  return make_op(std::move(out), "matmul", {&a, &b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto G = view(std::as_const(self.grad));
    if (pa.requires_grad)
      view(grad_of(pa)).noalias() += G * view(std::as_const(pb.value)).transpose();
    if (pb.requires_grad)
      view(grad_of(pb)).noalias() += view(std::as_const(pa.value)).transpose() * G;
  });
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  const auto& A = a.value();
  Tensor out({A.cols(), A.rows()});
  view(out) = view(A).transpose();
  return make_op(std::move(out), "transpose", {&a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (p.requires_grad) view(grad_of(p)) += view(std::as_const(self.grad)).transpose();
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), "add", {&a, &b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = grad_of(*p);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), "sub", {&a, &b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& g = grad_of(*self.parents[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = grad_of(*self.parents[1]);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), "mul", {&a, &b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& g = grad_of(pa);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = grad_of(pb);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return make_op(std::move(out), "scale", {&a}, [factor](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
  });
}

ReluPatternRecorder::ReluPatternRecorder() : previous_(g_relu_pattern) {
  g_relu_pattern = &pattern_;
}

ReluPatternRecorder::~ReluPatternRecorder() { g_relu_pattern = previous_; }

Var relu(const Var& a) {
  Tensor out = a.value();
  if (g_relu_pattern) {
    for (double v : out.data()) g_relu_pattern->push_back(v > 0.0 ? 1 : 0);
  }
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), "relu", {&a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (p.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.value().rows();
  const std::size_t n = x.value().cols();
  if (bias.value().numel() != n)
    fail(ErrorKind::Shape, "add_bias expects bias of length " + std::to_string(n));
  Tensor out = x.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) += bias.value()[c];
  return make_op(std::move(out), "add_bias", {&x, &bias}, [m, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pb = *self.parents[1];
    if (px.requires_grad) {
      Tensor& g = grad_of(px);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      Tensor& g = grad_of(pb);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    }
  });
}

Var add_tiled(const Var& x, const Var& e) {
  require_matrix(x, "add_tiled");
  require_matrix(e, "add_tiled");
  const std::size_t m = x.value().rows();
  const std::size_t n = x.value().cols();
  const std::size_t k = e.value().rows();
  if (e.value().cols() != n || k == 0 || m % k != 0)
    fail(ErrorKind::Shape,
         "add_tiled shape mismatch " + shape_string(x.shape()) + " + " + shape_string(e.shape()));
  Tensor out = x.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) += e.value()((r % k), c);
  return make_op(std::move(out), "add_tiled", {&x, &e}, [m, n, k](Node& self) {
    Node& px = *self.parents[0];
    Node& pe = *self.parents[1];
    if (px.requires_grad) {
      Tensor& g = grad_of(px);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pe.requires_grad) {
      Tensor& g = grad_of(pe);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[(r % k) * n + c] += self.grad[r * n + c];
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.value().rows();
  const std::size_t n = x.value().cols();
  require(gamma.value().numel() == n && beta.value().numel() == n, ErrorKind::Shape,
          "layer_norm parameter length mismatch");
  auto xhat = std::make_shared<Tensor>(Shape{m, n});
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor out({m, n});
  const auto& X = x.value();
  for (std::size_t r = 0; r < m; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += X(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = X(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (X(r, c) - mean) * is;
      (*xhat)(r, c) = h;
      out(r, c) = h * gamma.value()[c] + beta.value()[c];
    }
  }
  return make_op(
      std::move(out), "layer_norm", {&x, &gamma, &beta}, [m, n, xhat, inv_std](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const Tensor& G = self.grad;
        if (pg.requires_grad) {
          Tensor& g = grad_of(pg);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) g[c] += G(r, c) * (*xhat)(r, c);
        }
        if (pb.requires_grad) {
          Tensor& g = grad_of(pb);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) g[c] += G(r, c);
        }
        if (px.requires_grad) {
          Tensor& g = grad_of(px);
          const double inv_n = 1.0 / static_cast<double>(n);
          std::vector<double> dh(n);
          for (std::size_t r = 0; r < m; ++r) {
            double sum_dh = 0.0;
            double sum_dh_h = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              dh[c] = G(r, c) * pg.value[c];
              sum_dh += dh[c];
              sum_dh_h += dh[c] * (*xhat)(r, c);
            }
            for (std::size_t c = 0; c < n; ++c) {
              g(r, c) += (*inv_std)[r] * inv_n *
                         (static_cast<double>(n) * dh[c] - sum_dh - (*xhat)(r, c) * sum_dh_h);
            }
          }
        }
      });
}

Var softmax_rows(const Var& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t m = x.value().rows();
  const std::size_t n = x.value().cols();
  Tensor out = x.value();
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, out(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      out(r, c) = std::exp(out(r, c) - mx);
      s += out(r, c);
    }
    for (std::size_t c = 0; c < n; ++c) out(r, c) /= s;
  }
  return make_op(std::move(out), "softmax_rows", {&x}, [m, n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    const Tensor& Y = self.value;
    const Tensor& G = self.grad;
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += G(r, c) * Y(r, c);
      for (std::size_t c = 0; c < n; ++c) g(r, c) += Y(r, c) * (G(r, c) - dot);
    }
  });
}

Var l2_normalize_rows(const Var& x) {
  require_matrix(x, "l2_normalize_rows");
  const std::size_t m = x.value().rows();
  const std::size_t n = x.value().cols();
  auto norms = std::make_shared<std::vector<double>>(m);
  Tensor out = x.value();
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += out(r, c) * out(r, c);
    const double norm = std::sqrt(s);
    if (!(norm > 0.0)) {
      fail(ErrorKind::DegenerateInput,
           "cannot normalize zero-norm vector (row " + std::to_string(r) + ")");
    }
    (*norms)[r] = norm;
    for (std::size_t c = 0; c < n; ++c) out(r, c) /= norm;
  }
  return make_op(std::move(out), "l2_normalize_rows", {&x}, [m, n, norms](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    const Tensor& Y = self.value;
    const Tensor& G = self.grad;
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += G(r, c) * Y(r, c);
      for (std::size_t c = 0; c < n; ++c) g(r, c) += (G(r, c) - Y(r, c) * dot) / (*norms)[r];
    }
  });
}

Var masked_logsumexp_rows(const Var& x, std::span<const std::uint8_t> mask) {
  require_matrix(x, "masked_logsumexp_rows");
  const std::size_t m = x.value().rows();
  const std::size_t n = x.value().cols();
  require(mask.size() == m * n, ErrorKind::Shape, "masked_logsumexp_rows mask size mismatch");
  auto keep = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  const auto& X = x.value();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (mask[r * n + c]) mx = std::max(mx, X(r, c));
    if (!std::isfinite(mx))
      fail(ErrorKind::DegenerateInput,
           "masked_logsumexp_rows: row " + std::to_string(r) + " has no unmasked entries");
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c)
      if (mask[r * n + c]) s += std::exp(X(r, c) - mx);
    out[r] = mx + std::log(s);
  }
  return make_op(std::move(out), "masked_logsumexp_rows", {&x}, [m, n, keep](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        if ((*keep)[r * n + c]) g(r, c) += self.grad[r] * std::exp(p.value(r, c) - self.value[r]);
      }
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op(Tensor::scalar(s), "sum", {&x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    const double gs = self.grad[0];
    for (auto& v : g.data()) v += gs;
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(weights.numel() == x.value().numel(), ErrorKind::Shape,
          "weighted_sum weight size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.numel(); ++i) s += x.value()[i] * weights[i];
  auto w = std::make_shared<Tensor>(weights);
  return make_op(Tensor::scalar(s), "weighted_sum", {&x}, [w](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    const double gs = self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gs * (*w)[i];
  });
}

Var segment_mean(const Var& x, std::size_t segments) {
  require_matrix(x, "segment_mean");
  const std::size_t rows = x.value().rows();
  const std::size_t n = x.value().cols();
  if (segments == 0 || rows == 0 || rows % segments != 0)
    fail(ErrorKind::Shape, "segment_mean: " + std::to_string(rows) + " rows not divisible into " +
                               std::to_string(segments) + " segments");
  const std::size_t len = rows / segments;
  const double inv = 1.0 / static_cast<double>(len);
  Tensor out({segments, n});
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t c = 0; c < n; ++c) out(s, c) += x.value()(s * len + l, c);
    for (std::size_t c = 0; c < n; ++c) out(s, c) *= inv;
  }
  return make_op(std::move(out), "segment_mean", {&x}, [segments, len, n, inv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    for (std::size_t s = 0; s < segments; ++s)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t c = 0; c < n; ++c) g(s * len + l, c) += inv * self.grad(s, c);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  const std::size_t m = a.value().rows();
  const std::size_t na = a.value().cols();
  const std::size_t nb = b.value().cols();
  require(b.value().rows() == m, ErrorKind::Shape, "concat_cols row mismatch");
  Tensor out({m, na + nb});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < na; ++c) out(r, c) = a.value()(r, c);
    for (std::size_t c = 0; c < nb; ++c) out(r, na + c) = b.value()(r, c);
  }
  return make_op(std::move(out), "concat_cols", {&a, &b}, [m, na, nb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& g = grad_of(pa);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < na; ++c) g(r, c) += self.grad(r, c);
    }
    if (pb.requires_grad) {
      Tensor& g = grad_of(pb);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < nb; ++c) g(r, c) += self.grad(r, na + c);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::Shape, "concat_rows of nothing");
  const std::size_t n = parts[0].value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.value().rank() >= 1 && p.value().rank() <= 2 && p.value().cols() == n,
            ErrorKind::Shape, "concat_rows column mismatch");
    rows += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(rows * n);
  for (const auto& p : parts)
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return make_op_n(Tensor::matrix(rows, n, std::move(data)), "concat_rows", parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t cnt = p->value.numel();
      if (p->requires_grad) {
        Tensor& g = grad_of(*p);
        for (std::size_t i = 0; i < cnt; ++i) g[i] += self.grad[offset + i];
      }
      offset += cnt;
    }
  });
}

Var interleave_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::Shape, "interleave_rows of nothing");
  const std::size_t b = parts[0].value().rows();
  const std::size_t n = parts[0].value().cols();
  const std::size_t k = parts.size();
  for (const auto& p : parts) {
    require(p.value().rank() == 2 && p.value().rows() == b && p.value().cols() == n,
            ErrorKind::Shape, "interleave_rows shape mismatch");
  }
  Tensor out({b * k, n});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < n; ++c) out(i * k + j, c) = parts[j].value()(i, c);
  return make_op_n(std::move(out), "interleave_rows", parts, [b, n, k](Node& self) {
    for (std::size_t j = 0; j < k; ++j) {
      Node& p = *self.parents[j];
      if (!p.requires_grad) continue;
      Tensor& g = grad_of(p);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t c = 0; c < n; ++c) g(i, c) += self.grad(i * k + j, c);
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t heads) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t d = q.value().cols();
  require(k.value().cols() == d && v.value().cols() == d, ErrorKind::Shape,
          "attention: query/key/value widths differ");
  require(k.value().rows() == v.value().rows(), ErrorKind::Shape,
          "attention: key/value lengths differ");
  if (heads == 0 || d % heads != 0)
    fail(ErrorKind::Shape, "attention: width " + std::to_string(d) + " not divisible by " +
                               std::to_string(heads) + " heads");
  require(batch > 0 && q.value().rows() % batch == 0 && k.value().rows() % batch == 0,
          ErrorKind::Shape, "attention: rows not divisible by batch");
  const std::size_t lq = q.value().rows() / batch;
  const std::size_t lk = k.value().rows() / batch;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto ei = [](std::size_t x) { return static_cast<Eigen::Index>(x); };

  // Softmax weights are kept for the backward pass: [batch][heads][lq][lk].
  auto probs = std::make_shared<std::vector<double>>(batch * heads * lq * lk);
  Tensor out({batch * lq, d});
  MatR scores(ei(lq), ei(lk));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      CSMapR Q(q.value().ptr() + b * lq * d + h * dh, ei(lq), ei(dh), Strided(ei(d)));
      CSMapR K(k.value().ptr() + b * lk * d + h * dh, ei(lk), ei(dh), Strided(ei(d)));
      CSMapR V(v.value().ptr() + b * lk * d + h * dh, ei(lk), ei(dh), Strided(ei(d)));
      SMapR O(out.ptr() + b * lq * d + h * dh, ei(lq), ei(dh), Strided(ei(d)));
      MapR P(probs->data() + (b * heads + h) * lq * lk, ei(lq), ei(lk));
      scores.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double mx = scores.row(r).maxCoeff();
        P.row(r) = (scores.row(r).array() - mx).exp().matrix();
        P.row(r) /= P.row(r).sum();
      }
      O.noalias() = P * V;
    }
  }
  return make_op(std::move(out), "attention", {&q, &k, &v}, [=](Node& self) {
    Node& pq = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pv = *self.parents[2];
    MatR dP(ei(lq), ei(lk));
    MatR dS(ei(lq), ei(lk));
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qo = b * lq * d + h * dh;
        const std::size_t ko = b * lk * d + h * dh;
        CSMapR Q(pq.value.ptr() + qo, ei(lq), ei(dh), Strided(ei(d)));
        CSMapR K(pk.value.ptr() + ko, ei(lk), ei(dh), Strided(ei(d)));
        CSMapR V(pv.value.ptr() + ko, ei(lk), ei(dh), Strided(ei(d)));
        CSMapR G(self.grad.ptr() + qo, ei(lq), ei(dh), Strided(ei(d)));
        CMapR P(probs->data() + (b * heads + h) * lq * lk, ei(lq), ei(lk));
        if (pv.requires_grad) {
          SMapR dV(grad_of(pv).ptr() + ko, ei(lk), ei(dh), Strided(ei(d)));
          dV.noalias() += P.transpose() * G;
        }
        if (!pq.requires_grad && !pk.requires_grad) continue;
        dP.noalias() = G * V.transpose();
        for (Eigen::Index r = 0; r < dP.rows(); ++r) {
          const double dot = dP.row(r).dot(P.row(r));
          dS.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix();
        }
        if (pq.requires_grad) {
          SMapR dQ(grad_of(pq).ptr() + qo, ei(lq), ei(dh), Strided(ei(d)));
          dQ.noalias() += (dS * K) * inv_sqrt;
        }
        if (pk.requires_grad) {
          SMapR dK(grad_of(pk).ptr() + ko, ei(lk), ei(dh), Strided(ei(d)));
          dK.noalias() += (dS.transpose() * Q) * inv_sqrt;
        }
      }
    }
  });
}

Var cosine_sim(const Var& a, const Var& b) {
  require(a.value().numel() == b.value().numel() && a.value().numel() >= 1, ErrorKind::Shape,
          "cosine_sim expects equal-length non-empty vectors");
  const std::size_t n = a.value().numel();
  const Var an = l2_normalize_rows(reshape(a, {1, n}));
  const Var bn = l2_normalize_rows(reshape(b, {1, n}));
  return sum(mul(an, bn));
}

namespace testing_hooks {

Var wrong_gradient_identity(const Var& x, double factor) {
  return make_op(x.value(), "wrong_gradient_identity", {&x}, [factor](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = grad_of(p);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
  });
}

}  // namespace testing_hooks

}  // namespace mvcl
