#pragma once

// Dense kernels, similarity functions and hand-derived losses shared by every
// training path. Everything here is a pure function of its arguments.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedta {

using Vec = std::vector<double>;

/// Thrown on contract violations (dimension mismatch, zero-norm input, ...).
class NumericError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major dense matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

using ConstSpan = std::span<const double>;

double dot(ConstSpan a, ConstSpan b);
double norm(ConstSpan a);
bool all_finite(ConstSpan a);

/// y += alpha * x
void axpy(double alpha, ConstSpan x, std::span<double> y);
void scale(std::span<double> x, double alpha);

/// out = m * x  (m is rows x cols, x has cols entries)
Vec matvec(const Mat& m, ConstSpan x);
/// out = m^T * x  (x has rows entries)
Vec matvec_transposed(const Mat& m, ConstSpan x);

double cosine_similarity(ConstSpan a, ConstSpan b);
double cosine_distance(ConstSpan a, ConstSpan b);

/// Gradient of cosine_distance(a, b) with respect to b.
Vec cosine_distance_grad(ConstSpan a, ConstSpan b);

struct LossAndGrad {
  double loss = 0.0;
  Vec grad;
};

Vec softmax(ConstSpan logits);

/// -log softmax(logits)[label] and its gradient softmax - onehot(label).
LossAndGrad softmax_cross_entropy(ConstSpan logits, std::size_t label);

/// Central-difference check of `analytic_grad` against `f` at `x`.
/// Returns the maximum componentwise relative error, where each component's
/// error is |a - n| / max(|a|, |n|, 1e-8).
double finite_difference_check(const std::function<double(const Vec&)>& f, const Vec& x,
                               ConstSpan analytic_grad, double eps);

// --- seeding -----------------------------------------------------------------

using Rng = std::mt19937_64;

/// Deterministic stream derivation so independent components never share RNG state.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

Vec gaussian_vec(Rng& rng, std::size_t n, double stddev);
Vec unit_gaussian_vec(Rng& rng, std::size_t n);
Mat gaussian_mat(Rng& rng, std::size_t rows, std::size_t cols, double stddev);

void require(bool condition, const std::string& message);

}  // namespace fedta
