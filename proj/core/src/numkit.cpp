#include "fedta/numkit.hpp"

#include <algorithm>
#include <cmath>

namespace fedta {

void require(bool condition, const std::string& message) {
  if (!condition) throw NumericError(message);
}

namespace {

void require_same_dim(ConstSpan a, ConstSpan b, const char* what) {
  if (a.size() != b.size()) {
    throw NumericError(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) +
                       " vs " + std::to_string(b.size()) + ")");
  }
}

}  // namespace

double dot(ConstSpan a, ConstSpan b) {
  require_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(ConstSpan a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

bool all_finite(ConstSpan a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

void axpy(double alpha, ConstSpan x, std::span<double> y) {
  require_same_dim(x, ConstSpan(y), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::span<double> x, double alpha) {
  for (double& v : x) v *= alpha;
}

Vec matvec(const Mat& m, ConstSpan x) {
  require(x.size() == m.cols, "matvec: dimension mismatch");
  Vec out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * x[c];
    out[r] = s;
  }
  return out;
}

Vec matvec_transposed(const Mat& m, ConstSpan x) {
  require(x.size() == m.rows, "matvec_transposed: dimension mismatch");
  Vec out(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += row[c] * xr;
  }
  return out;
}

double cosine_similarity(ConstSpan a, ConstSpan b) {
  require_same_dim(a, b, "cosine_similarity");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm input");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine_distance(ConstSpan a, ConstSpan b) { return 1.0 - cosine_similarity(a, b); }

Vec cosine_distance_grad(ConstSpan a, ConstSpan b) {
  // d/db [1 - a.b/(|a||b|)] = -(a/(|a||b|) - (a.b) b/(|a||b|^3))
  require_same_dim(a, b, "cosine_distance_grad");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_distance_grad: zero-norm input");
  const double ab = dot(a, b);
  const double inv = 1.0 / (na * nb);
  const double coef_b = ab * inv / (nb * nb);
  Vec g(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) g[i] = -(a[i] * inv - coef_b * b[i]);
  return g;
}

Vec softmax(ConstSpan logits) {
  require(!logits.empty(), "softmax: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

LossAndGrad softmax_cross_entropy(ConstSpan logits, std::size_t label) {
  if (label >= logits.size()) {
    throw NumericError("softmax_cross_entropy: label " + std::to_string(label) +
                       " out of range for " + std::to_string(logits.size()) + " logits");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double log_z = std::log(z) + mx;

  LossAndGrad out;
  out.loss = log_z - logits[label];
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logits[i] - log_z);
  out.grad[label] -= 1.0;
  return out;
}

double finite_difference_check(const std::function<double(const Vec&)>& f, const Vec& x,
                               ConstSpan analytic_grad, double eps) {
  require(eps > 0.0, "finite_difference_check: eps must be positive");
  require(analytic_grad.size() == x.size(), "finite_difference_check: gradient size mismatch");
  Vec probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_difference_check: non-finite function value at component " +
                         std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic_grad[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 over the tuple
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

Vec gaussian_vec(Rng& rng, std::size_t n, double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec v(n);
  for (double& x : v) x = stddev * dist(rng);
  return v;
}

Vec unit_gaussian_vec(Rng& rng, std::size_t n) {
  Vec v = gaussian_vec(rng, n, 1.0);
  double nv = norm(v);
  while (nv == 0.0) {
    v = gaussian_vec(rng, n, 1.0);
    nv = norm(v);
  }
  scale(v, 1.0 / nv);
  return v;
}

Mat gaussian_mat(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Mat m(rows, cols);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& x : m.data) x = stddev * dist(rng);
  return m;
}

}  // namespace fedta
