#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace actinf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Numerical conventions shared by every message update:
//  - 0 * log 0 == 0
//  - logs of exact zeros are clamped to kLogFloor inside message/exponent
//    arithmetic only; free-energy reporting uses exact logs and raises on
//    genuine support mismatches.
inline constexpr double kLogFloor = -700.0;
inline constexpr double kProbTol = 1e-9;

// Clamped log for message arithmetic.
inline double clog(double x) {
  if (!(x > 0.0)) return kLogFloor;
  double l = std::log(x);
  return l < kLogFloor ? kLogFloor : l;
}

Vec clog(const Vec& v);
Mat clog(const Mat& m);

// Digamma via the asymptotic series with a recurrence shift for small
// arguments. Absolute error below 1e-10 over the positive axis.
double digamma(double x);

// Normalised categorical statistic. Entries are validated on construction:
// non-negative and summing to one within kProbTol.
class ProbVector {
 public:
  ProbVector() = default;
  explicit ProbVector(Vec entries);

  // Normalises an arbitrary non-negative vector. Entries below snap_tol
  // (ghosts produced by floor-clamped logs) are zeroed before normalising.
  static ProbVector normalized(const Vec& unnormalized, double snap_tol = 1e-100);

  const Vec& entries() const { return entries_; }
  double operator[](Eigen::Index i) const { return entries_[i]; }
  Eigen::Index size() const { return entries_.size(); }

  double entropy() const;  // Shannon entropy in nats, 0 log 0 := 0

 private:
  Vec entries_;
};

// Unit-vector encoding of a discrete value.
struct OneHot {
  int index = 0;
  int dimension = 0;

  OneHot() = default;
  OneHot(int index, int dimension);
  Vec materialize() const;
};

struct Categorical {
  ProbVector p;

  Categorical() = default;
  explicit Categorical(ProbVector pv) : p(std::move(pv)) {}
  int sample(std::mt19937_64& rng) const;
};

// Dirichlet with matrix-shaped concentration parameters and independent
// columns. Vector-valued Dirichlets are stored as a single column.
class Dirichlet {
 public:
  Dirichlet() = default;
  explicit Dirichlet(Mat alpha);
  explicit Dirichlet(const Vec& alpha);

  const Mat& alpha() const { return alpha_; }
  bool is_vector() const { return alpha_.cols() == 1; }

  Mat mean() const;                 // alpha / column sums
  Mat mean_log() const;             // E[log x_ij] = psi(a_ij) - psi(col sum)
  double entropy() const;           // summed over independent columns
  Mat sample(std::mt19937_64& rng) const;

  Vec mean_vec() const { return mean().col(0); }
  Vec mean_log_vec() const { return mean_log().col(0); }

  // Conjugate product: Dir(a) * Dir(b) ~ Dir(a + b - 1).
  Dirichlet product(const Dirichlet& other) const;

  // E_q[log Dir(x | a0)] for q = *this; used by free-energy accounting.
  double cross_log_density(const Mat& alpha0) const;

 private:
  Mat alpha_;
};

// Column-stochastic matrix relating one categorical variable to another.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  explicit TransitionMatrix(Mat a);

  const Mat& matrix() const { return a_; }
  Eigen::Index rows() const { return a_.rows(); }
  Eigen::Index cols() const { return a_.cols(); }

 private:
  Mat a_;
};

// softmax(v) = exp(v - max v) / sum. Raises on non-finite input.
ProbVector softmax(const Vec& v);

// h(A): entropies of the columns of A, 0 log 0 := 0.
Vec column_entropies(const Mat& a);

// Kronecker product of two vectors; index = len(v) * i + j.
Vec kronecker(const Vec& u, const Vec& v);
Mat kronecker(const Mat& u, const Mat& v);

double log_beta(const Vec& alpha);  // log of the multivariate beta function

// Deterministic seed derivation for independent substreams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace actinf
