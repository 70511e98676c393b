#pragma once

// Brute-force reference formulas written directly from the loss definitions,
// sharing no code with the library.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Sum over anchors with at least one positive of
//   -(1/|P(i)|) sum_p log( exp(s_ip/t) / sum_{a != i} exp(s_ia/t) ).
inline double supcon(const Rows& z, const std::vector<std::int64_t>& labels, double tau) {
  const std::size_t n = z.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) denom += std::exp(cosine(z[i], z[a]) / tau);
    double inner = 0.0;
    std::size_t positives = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == i || labels[p] != labels[i]) continue;
      inner += std::log(std::exp(cosine(z[i], z[p]) / tau) / denom);
      ++positives;
    }
    if (positives > 0) total += -inner / static_cast<double>(positives);
  }
  return total;
}

// One direction of the two-view loss: anchor z_i, positive w_i, denominator
// over every w_k (k = i included) and every z_j with j != i.
inline double sscl_direction(const Rows& z, const Rows& w, double tau) {
  const std::size_t n = z.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) denom += std::exp(cosine(z[i], w[k]) / tau);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) denom += std::exp(cosine(z[i], z[j]) / tau);
    total += -std::log(std::exp(cosine(z[i], w[i]) / tau) / denom);
  }
  return total;
}

inline double sscl(const Rows& z, const Rows& w, double tau) {
  return sscl_direction(z, w, tau) + sscl_direction(w, z, tau);
}

inline double cross_entropy(const Rows& scores, const std::vector<std::int64_t>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double z = 0.0;
    for (double s : scores[i]) z += std::exp(s);
    total += -std::log(std::exp(scores[i][labels[i]]) / z);
  }
  return total / static_cast<double>(scores.size());
}

// Dense-layer building blocks, computed entry by entry.

inline Rows matmul(const Rows& a, const Rows& b) {
  Rows out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

// x W (+ b when b is non-empty).
inline Rows linear(const Rows& x, const Rows& w, const std::vector<double>& b) {
  Rows out = matmul(x, w);
  if (!b.empty())
    for (auto& row : out)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return out;
}

inline Rows add(Rows a, const Rows& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Rows relu(Rows x) {
  for (auto& row : x)
    for (auto& v : row) v = v > 0.0 ? v : 0.0;
  return x;
}

inline Rows layer_norm(const Rows& x, const std::vector<double>& gamma,
                       const std::vector<double>& beta, double eps = 1e-5) {
  Rows out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      out[i][j] = gamma[j] * (x[i][j] - mean) / std::sqrt(var + eps) + beta[j];
  }
  return out;
}

// softmax(Q_h K_h^T / sqrt(d_h)) V_h for each head slice, one item.
inline Rows attention(const Rows& q, const Rows& k, const Rows& v, std::size_t heads) {
  const std::size_t d = q[0].size();
  const std::size_t dh = d / heads;
  Rows out(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> w(k.size());
      double total = 0.0;
      for (std::size_t j = 0; j < k.size(); ++j) {
        double s = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += q[i][c] * k[j][c];
        w[j] = std::exp(s / std::sqrt(static_cast<double>(dh)));
        total += w[j];
      }
      for (std::size_t j = 0; j < k.size(); ++j)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) out[i][c] += w[j] / total * v[j][c];
    }
  }
  return out;
}

inline std::vector<double> column_mean(const Rows& x) {
  std::vector<double> m(x[0].size(), 0.0);
  for (const auto& row : x)
    for (std::size_t j = 0; j < row.size(); ++j) m[j] += row[j] / static_cast<double>(x.size());
  return m;
}

inline Rows sinusoid(std::size_t length, std::size_t width) {
  Rows pe(length, std::vector<double>(width));
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t k = 0; 2 * k < width; ++k) {
      const double angle = pos / std::pow(10000.0, 2.0 * k / width);
      pe[pos][2 * k] = std::sin(angle);
      if (2 * k + 1 < width) pe[pos][2 * k + 1] = std::cos(angle);
    }
  return pe;
}

// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> solve(Rows a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

// Two-class least-squares probe on +/-1 targets with a bias column, fitted
// on the first `n_fit` rows (small ridge keeps the normal equations
// invertible) and scored on the rest.
inline double binary_probe(const Rows& x, const std::vector<int>& y, std::size_t n_fit) {
  const std::size_t d = x[0].size() + 1;
  Rows ata(d, std::vector<double>(d, 0.0));
  std::vector<double> atb(d, 0.0);
  for (std::size_t i = 0; i < n_fit; ++i) {
    std::vector<double> row = x[i];
    row.push_back(1.0);
    const double t = y[i] == 1 ? 1.0 : -1.0;
    for (std::size_t a = 0; a < d; ++a) {
      atb[a] += row[a] * t;
      for (std::size_t b = 0; b < d; ++b) ata[a][b] += row[a] * row[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) ata[a][a] += 1e-8;
  const std::vector<double> w = solve(ata, atb);
  std::size_t correct = 0;
  for (std::size_t i = n_fit; i < x.size(); ++i) {
    double s = w[d - 1];
    for (std::size_t k = 0; k + 1 < d; ++k) s += w[k] * x[i][k];
    correct += (s >= 0.0) == (y[i] == 1);
  }
  return static_cast<double>(correct) / static_cast<double>(x.size() - n_fit);
}

}  // namespace oracle
