#pragma once

#include "actinf/graph.hpp"

#include <functional>
#include <optional>

namespace actinf {

// Message updates for the goal-observation composite node: the observation
// model Cat(x | A z) facing a goal prior Cat(x | c), with the observation
// factor substituted for q(x) inside expectation terms.

// Per-node state owned by one inference run.
struct GfeNodeState {
  Categorical q_x;   // auxiliary observation belief, q(x) = Cat(Abar zbar)
  Vec incoming_d;    // categorical statistic of the message arriving on z
  Vec nu;            // current statistic zbar of the indirect update
};

// rho and the matrix-valued exponent xi(A) of the state and matrix messages.
struct RhoXi {
  Vec rho;
  std::function<Vec(const Mat&)> xi;
};

// Log-message toward the observation matrix: log mu(A) = zbar' xi(A).
// Kept in closed form so importance weights can evaluate it per sample.
struct LogMatrixMessage {
  Vec zbar;
  Vec v;  // bar(log c) - log(Abar zbar)

  double operator()(const Mat& A) const {
    return (A * zbar).dot(v) - zbar.dot(column_entropies(A));
  }
};

// q(x) = Cat(x | Abar zbar) under the tentative-decision treatment of q(A).
Categorical q_x_update(const Mat& a_bar, const Vec& z_bar);

// rho = Abar' (bar(log c) - log(Abar zbar)) - hbar, with floor-clamped logs,
// plus the matching xi(A) handle.
RhoXi rho_xi(const Mat& a_bar, const Vec& h_bar, const Vec& bar_log_c, const Vec& z_bar);
Vec rho(const Mat& a_bar, const Vec& h_bar, const Vec& bar_log_c, const Vec& z_bar);

// Downward goal message: Dir(c | Abar zbar + 1).
Dirichlet message_to_goal(const Mat& a_bar, const Vec& z_bar);

// Direct backward state message Cat(z | softmax(rho)). May diverge when
// iterated through the graph; the Newton route below is the stable default.
Categorical message_to_state_direct(const Vec& rho_vec);

LogMatrixMessage log_message_to_matrix(const Vec& z_bar, const Vec& bar_log_c, const Mat& a_bar);

double average_energy(const Vec& rho_vec, const Vec& z_bar);

// Stationary block belief q*(z) proportional to f_tilde(z) times the incoming
// messages, all given as categorical statistics.
Categorical stationary_q_z(const Vec& log_f_tilde, const std::vector<Vec>& messages);

struct NewtonOptions {
  int max_iterations = 50;
  double tolerance = 1e-8;  // infinity norm of the fixed-point residual
  double fd_step = 1e-7;
  int max_halvings = 20;
  double fallback_damping = 0.5;
  int fallback_max_iterations = 500;
};

struct NewtonResult {
  Vec zbar;              // solution of zbar = softmax(rho(zbar) + log d)
  Categorical message;   // Cat(z | softmax(log zbar - log d))
  Categorical marginal;  // Cat(z | zbar)
  int iterations = 0;
  double residual_inf = 0.0;
  bool fallback_used = false;
};

// Raised when neither Newton nor the damped fixed-point fallback reaches the
// residual tolerance.
struct NewtonDivergence : std::runtime_error {
  explicit NewtonDivergence(double residual)
      : std::runtime_error("indirect state message did not converge; residual " +
                           std::to_string(residual)),
        residual(residual) {}
  double residual;
};

// Indirect (stationary) state message: solves the root-finding problem
// zbar = softmax(rho(zbar) + log d) with a damped Newton iteration on the
// residual, falling back to damped fixed-point iteration.
NewtonResult message_to_state_newton(const Vec& d, const Mat& a_bar, const Vec& h_bar,
                                     const Vec& bar_log_c, const NewtonOptions& opts = {});

// Weighted-sample expectations of q(A) proportional to proposal(A) times
// exp(log_msg(A)). Samples column-wise from the proposal; a null log_msg
// means uniform weights.
ImportanceEstimate importance_expectations(const Dirichlet& proposal,
                                           const std::function<double(const Mat&)>& log_msg,
                                           int n_samples, std::mt19937_64& rng);

// Outgoing message on a goal edge, dispatched on the goal-prior family:
// clamped goals need no message, Dirichlet goals receive Dir(Abar zbar + 1),
// deterministic goal maps propagate their point value.
struct GoalMessage {
  std::optional<Dirichlet> dirichlet;
  std::optional<Vec> point;
};
GoalMessage message_to_goal_states(const Belief& goal_belief, const Mat& a_bar, const Vec& z_bar);

}  // namespace actinf
