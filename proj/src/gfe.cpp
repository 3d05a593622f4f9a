#include "actinf/gfe.hpp"

#include <cmath>

namespace actinf {

Categorical q_x_update(const Mat& a_bar, const Vec& z_bar) {
  if (a_bar.cols() != z_bar.size())
    throw std::invalid_argument("q_x_update: shape mismatch");
  return Categorical(ProbVector::normalized(a_bar * z_bar));
}

Vec rho(const Mat& a_bar, const Vec& h_bar, const Vec& bar_log_c, const Vec& z_bar) {
  if (a_bar.cols() != z_bar.size() || a_bar.rows() != bar_log_c.size() ||
      h_bar.size() != z_bar.size())
    throw std::invalid_argument("rho: shape mismatch");
  const Vec log_qx = clog(Vec(a_bar * z_bar));
  return a_bar.transpose() * (bar_log_c - log_qx) - h_bar;
}

RhoXi rho_xi(const Mat& a_bar, const Vec& h_bar, const Vec& bar_log_c, const Vec& z_bar) {
  RhoXi out;
  const Vec v = bar_log_c - clog(Vec(a_bar * z_bar));
  out.rho = a_bar.transpose() * v - h_bar;
  out.xi = [v](const Mat& A) -> Vec { return A.transpose() * v - column_entropies(A); };
  return out;
}

Dirichlet message_to_goal(const Mat& a_bar, const Vec& z_bar) {
  Vec alpha = a_bar * z_bar;
  alpha.array() += 1.0;
  return Dirichlet(alpha);
}

Categorical message_to_state_direct(const Vec& rho_vec) {
  return Categorical(softmax(rho_vec));
}

LogMatrixMessage log_message_to_matrix(const Vec& z_bar, const Vec& bar_log_c, const Mat& a_bar) {
  LogMatrixMessage msg;
  msg.zbar = z_bar;
  msg.v = bar_log_c - clog(Vec(a_bar * z_bar));
  return msg;
}

double average_energy(const Vec& rho_vec, const Vec& z_bar) {
  if (rho_vec.size() != z_bar.size())
    throw std::invalid_argument("average_energy: shape mismatch");
  return -z_bar.dot(rho_vec);
}

Categorical stationary_q_z(const Vec& log_f_tilde, const std::vector<Vec>& messages) {
  Vec log_q = log_f_tilde;
  for (const auto& m : messages) {
    if (m.size() != log_q.size())
      throw std::invalid_argument("stationary_q_z: message dimension mismatch");
    log_q += clog(m);
  }
  return Categorical(softmax(log_q));
}

namespace {

Vec fixed_point_map(const Vec& z, const Mat& a_bar, const Vec& h_bar, const Vec& bar_log_c,
                    const Vec& log_d) {
  return softmax(Vec(rho(a_bar, h_bar, bar_log_c, z) + log_d)).entries();
}

}  // namespace

NewtonResult message_to_state_newton(const Vec& d, const Mat& a_bar, const Vec& h_bar,
                                     const Vec& bar_log_c, const NewtonOptions& opts) {
  const Eigen::Index n = d.size();
  const Vec log_d = clog(d);

  auto residual = [&](const Vec& z) -> Vec {
    return z - fixed_point_map(z, a_bar, h_bar, bar_log_c, log_d);
  };

  Vec z = softmax(log_d).entries();
  Vec r = residual(z);
  double rn = r.lpNorm<Eigen::Infinity>();
  int iterations = 0;
  bool stalled = false;

  while (rn >= opts.tolerance && iterations < opts.max_iterations && !stalled) {
    ++iterations;
    Mat jac(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
      Vec zk = z;
      zk[k] += opts.fd_step;
      jac.col(k) = (residual(zk) - r) / opts.fd_step;
    }
    Vec dz = jac.colPivHouseholderQr().solve(-r);
    if (!dz.allFinite()) {
      stalled = true;
      break;
    }
    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h) {
      Vec zn = z + step * dz;
      if (zn.allFinite()) {
        Vec rnv = residual(zn);
        double rnn = rnv.lpNorm<Eigen::Infinity>();
        if (rnn < rn) {
          z = zn;
          r = rnv;
          rn = rnn;
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) stalled = true;
  }

  bool fallback = false;
  if (rn >= opts.tolerance) {
    // Damped fixed-point fallback.
    fallback = true;
    for (int i = 0; i < opts.fallback_max_iterations && rn >= opts.tolerance; ++i) {
      Vec target = fixed_point_map(z, a_bar, h_bar, bar_log_c, log_d);
      z = (1.0 - opts.fallback_damping) * z + opts.fallback_damping * target;
      r = residual(z);
      rn = r.lpNorm<Eigen::Infinity>();
      ++iterations;
    }
    if (rn >= opts.tolerance) throw NewtonDivergence(rn);
  }

  NewtonResult result;
  result.zbar = ProbVector::normalized(z).entries();
  result.marginal = Categorical(ProbVector(result.zbar));
  result.message = Categorical(softmax(Vec(clog(result.zbar) - log_d)));
  result.iterations = iterations;
  result.residual_inf = rn;
  result.fallback_used = fallback;
  return result;
}

ImportanceEstimate importance_expectations(const Dirichlet& proposal,
                                           const std::function<double(const Mat&)>& log_msg,
                                           int n_samples, std::mt19937_64& rng) {
  if (n_samples < 1)
    throw std::invalid_argument("importance_expectations: need at least one sample");
  const Eigen::Index rows = proposal.alpha().rows();
  const Eigen::Index cols = proposal.alpha().cols();

  std::vector<Mat> samples;
  samples.reserve(n_samples);
  Vec logw(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    samples.push_back(proposal.sample(rng));
    logw[i] = log_msg ? log_msg(samples.back()) : 0.0;
  }

  ImportanceEstimate est;
  est.n_samples = n_samples;
  const double lmax = logw.maxCoeff();
  Vec w(n_samples);
  double wsum = 0.0;
  if (std::isfinite(lmax)) {
    for (int i = 0; i < n_samples; ++i) {
      w[i] = std::exp(logw[i] - lmax);
      wsum += w[i];
    }
  }
  if (!(wsum > 0.0) || !std::isfinite(wsum)) {
    w.setOnes();
    wsum = static_cast<double>(n_samples);
    est.underflow_fallback = true;
  }

  Mat a_bar = Mat::Zero(rows, cols);
  Mat log_a_bar = Mat::Zero(rows, cols);
  Vec h_bar = Vec::Zero(cols);
  double w2 = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const double wi = w[i] / wsum;
    a_bar += wi * samples[i];
    log_a_bar += wi * clog(samples[i]);
    h_bar += wi * column_entropies(samples[i]);
    w2 += wi * wi;
  }
  for (Eigen::Index j = 0; j < cols; ++j) a_bar.col(j) /= a_bar.col(j).sum();

  est.a_bar = std::move(a_bar);
  est.log_a_bar = std::move(log_a_bar);
  est.h_bar = std::move(h_bar);
  est.ess = 1.0 / w2;
  return est;
}

GoalMessage message_to_goal_states(const Belief& goal_belief, const Mat& a_bar,
                                   const Vec& z_bar) {
  GoalMessage msg;
  if (goal_belief.is_point_vector()) {
    msg.point = goal_belief.point_vector();  // clamped edge, propagated unchanged
    return msg;
  }
  if (goal_belief.is_dirichlet()) {
    msg.dirichlet = message_to_goal(a_bar, z_bar);
    return msg;
  }
  throw std::invalid_argument("message_to_goal_states: unsupported goal-model family");
}

}  // namespace actinf
