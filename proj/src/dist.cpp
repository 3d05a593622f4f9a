#include "actinf/dist.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <limits>

namespace actinf {

Vec clog(const Vec& v) {
  Vec out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = clog(v[i]);
  return out;
}

Mat clog(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) out(i, j) = clog(m(i, j));
  return out;
}

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x))
    throw std::invalid_argument("digamma: argument must be positive and finite");
  double result = 0.0;
  // Shift into the asymptotic regime.
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  // psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^(2n))
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double series = std::log(x) - 0.5 * inv;
  series -= inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 -
            inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return result + series;
}

ProbVector::ProbVector(Vec entries) : entries_(std::move(entries)) {
  if (entries_.size() == 0)
    throw std::invalid_argument("ProbVector: empty");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < entries_.size(); ++i) {
    double e = entries_[i];
    if (!std::isfinite(e) || e < 0.0)
      throw std::invalid_argument("ProbVector: entries must be finite and non-negative");
    sum += e;
  }
  if (std::abs(sum - 1.0) > kProbTol)
    throw std::invalid_argument("ProbVector: entries sum to " + std::to_string(sum));
}

ProbVector ProbVector::normalized(const Vec& unnormalized, double snap_tol) {
  Vec v = unnormalized;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || v[i] < 0.0)
      throw std::invalid_argument("ProbVector::normalized: negative or non-finite entry");
    if (v[i] < snap_tol) v[i] = 0.0;
    sum += v[i];
  }
  if (sum <= 0.0)
    throw std::invalid_argument("ProbVector::normalized: zero normaliser");
  return ProbVector(Vec(v / sum));
}

double ProbVector::entropy() const {
  double h = 0.0;
  for (Eigen::Index i = 0; i < entries_.size(); ++i)
    if (entries_[i] > 0.0) h -= entries_[i] * std::log(entries_[i]);
  return h;
}

OneHot::OneHot(int index, int dimension) : index(index), dimension(dimension) {
  if (dimension <= 0 || index < 0 || index >= dimension)
    throw std::invalid_argument("OneHot: index out of range");
}

Vec OneHot::materialize() const {
  Vec v = Vec::Zero(dimension);
  v[index] = 1.0;
  return v;
}

int Categorical::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  double acc = 0.0;
  Eigen::Index last = p.size() - 1;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(last);
}

Dirichlet::Dirichlet(Mat alpha) : alpha_(std::move(alpha)) {
  if (alpha_.size() == 0) throw std::invalid_argument("Dirichlet: empty alpha");
  if ((alpha_.array() <= 0.0).any() || !alpha_.allFinite())
    throw std::invalid_argument("Dirichlet: alpha must be positive and finite");
}

Dirichlet::Dirichlet(const Vec& alpha) : Dirichlet(Mat(alpha)) {}

Mat Dirichlet::mean() const {
  Mat m = alpha_;
  for (Eigen::Index j = 0; j < m.cols(); ++j) m.col(j) /= m.col(j).sum();
  return m;
}

Mat Dirichlet::mean_log() const {
  Mat m(alpha_.rows(), alpha_.cols());
  for (Eigen::Index j = 0; j < alpha_.cols(); ++j) {
    double psi_total = digamma(alpha_.col(j).sum());
    for (Eigen::Index i = 0; i < alpha_.rows(); ++i)
      m(i, j) = digamma(alpha_(i, j)) - psi_total;
  }
  return m;
}

double Dirichlet::entropy() const {
  double h = 0.0;
  const auto k = static_cast<double>(alpha_.rows());
  for (Eigen::Index j = 0; j < alpha_.cols(); ++j) {
    const Vec a = alpha_.col(j);
    double a0 = a.sum();
    double col = log_beta(a) + (a0 - k) * digamma(a0);
    for (Eigen::Index i = 0; i < a.size(); ++i)
      col -= (a[i] - 1.0) * digamma(a[i]);
    h += col;
  }
  return h;
}

Mat Dirichlet::sample(std::mt19937_64& rng) const {
  Mat out(alpha_.rows(), alpha_.cols());
  for (Eigen::Index j = 0; j < alpha_.cols(); ++j) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < alpha_.rows(); ++i) {
      std::gamma_distribution<double> gamma(alpha_(i, j), 1.0);
      double g = gamma(rng);
      out(i, j) = g;
      sum += g;
    }
    if (sum <= 0.0) {
      // All-zero column draw (possible for tiny alphas): fall back to the mean.
      out.col(j) = alpha_.col(j) / alpha_.col(j).sum();
    } else {
      out.col(j) /= sum;
    }
  }
  return out;
}

Dirichlet Dirichlet::product(const Dirichlet& other) const {
  if (alpha_.rows() != other.alpha_.rows() || alpha_.cols() != other.alpha_.cols())
    throw std::invalid_argument("Dirichlet::product: shape mismatch");
  return Dirichlet(Mat(alpha_ + other.alpha_ - Mat::Ones(alpha_.rows(), alpha_.cols())));
}

double Dirichlet::cross_log_density(const Mat& alpha0) const {
  if (alpha0.rows() != alpha_.rows() || alpha0.cols() != alpha_.cols())
    throw std::invalid_argument("Dirichlet::cross_log_density: shape mismatch");
  const Mat mlog = mean_log();
  double total = 0.0;
  for (Eigen::Index j = 0; j < alpha_.cols(); ++j) {
    total -= log_beta(alpha0.col(j));
    for (Eigen::Index i = 0; i < alpha_.rows(); ++i)
      total += (alpha0(i, j) - 1.0) * mlog(i, j);
  }
  return total;
}

TransitionMatrix::TransitionMatrix(Mat a) : a_(std::move(a)) {
  if (a_.size() == 0) throw std::invalid_argument("TransitionMatrix: empty");
  for (Eigen::Index j = 0; j < a_.cols(); ++j) {
    if ((a_.col(j).array() < 0.0).any())
      throw std::invalid_argument("TransitionMatrix: negative entry");
    if (std::abs(a_.col(j).sum() - 1.0) > kProbTol)
      throw std::invalid_argument("TransitionMatrix: column " + std::to_string(j) +
                                  " sums to " + std::to_string(a_.col(j).sum()));
  }
}

ProbVector softmax(const Vec& v) {
  if (!v.allFinite())
    throw std::invalid_argument("softmax: non-finite input");
  const double m = v.maxCoeff();
  Vec e = (v.array() - m).exp();
  return ProbVector(Vec(e / e.sum()));
}

Vec column_entropies(const Mat& a) {
  Vec h = Vec::Zero(a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (a(i, j) > 0.0) h[j] -= a(i, j) * std::log(a(i, j));
  return h;
}

Vec kronecker(const Vec& u, const Vec& v) {
  return Eigen::kroneckerProduct(u, v).eval();
}

Mat kronecker(const Mat& u, const Mat& v) {
  return Eigen::kroneckerProduct(u, v).eval();
}

double log_beta(const Vec& alpha) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < alpha.size(); ++i) s += std::lgamma(alpha[i]);
  return s - std::lgamma(alpha.sum());
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the concatenated words.
  auto step = [](std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  std::uint64_t x = seed;
  std::uint64_t h = step(x);
  x ^= a + 0x9e3779b97f4a7c15ull;
  h ^= step(x);
  x ^= b + 0xd1b54a32d192ed03ull;
  h ^= step(x);
  return h;
}

}  // namespace actinf
