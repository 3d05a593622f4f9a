#pragma once

#include "actinf/gfe.hpp"
#include "actinf/graph.hpp"

#include <limits>
#include <map>

namespace actinf {

struct EngineConfig {
  int sweeps = 30;              // schedule passes per policy evaluation
  int burn_in = 10;             // sweeps discarded before averaging the trace
  int importance_samples = 200; // per parameter-expectation refresh
  int vmp_sweeps = 20;          // perception / learning passes
  double vmp_tol = 1e-8;        // early exit on objective change
  NewtonOptions newton;
};

// Fixed sequence of future controls, one per remaining time step.
struct Policy {
  std::vector<int> controls;
};

struct PolicyEvaluation {
  Policy policy;
  std::vector<double> gfe_trace;  // per-sweep objective, bits
  double score = std::numeric_limits<double>::infinity();  // burn-in average, bits
  bool converged = false;
};

// Sum-product transition updates for categorical statistics:
// forward mu(dst) ~ B mu(src), backward mu(src) ~ B' mu(dst).
struct TransitionMessages {
  Vec forward;
  Vec backward;
};
TransitionMessages transition_messages(const Mat& B, const Vec& incoming_src,
                                       const Vec& incoming_dst);

// Conjugate Dirichlet-categorical update: posterior = prior + x z'.
Dirichlet dirichlet_categorical_update(const Dirichlet& prior, const Vec& x_stat,
                                       const Vec& z_stat);

// One message-passing execution over a compiled graph with bound controls.
// Owns a private belief and message store; the graph itself is immutable and
// shared between runs.
class InferenceRun {
 public:
  InferenceRun(const FactorGraph& g, const ConstraintSet& cs, std::vector<int> controls,
               const EngineConfig& cfg, std::uint64_t seed);

  void sweep();
  int sweeps_run() const { return sweeps_run_; }

  // Constrained objective at the current beliefs, natural units.
  double objective_nats() const;

  Marginals marginals() const;
  const Belief& belief(VarId v) const { return beliefs_.at(v); }
  const Belief& belief(const std::string& name) const;
  const GfeNodeState& node_state(NodeId composite) const { return node_states_.at(composite); }

  // Posterior Dirichlet of a learned variable (valid in conjugate regimes).
  Dirichlet posterior_dirichlet(const std::string& name) const;

 private:
  struct CompositeMode {
    bool clamped = false;
    bool substituted = false;
    int clamp_index = -1;
  };

  Vec cavity(VarId v, NodeId excluding) const;
  void refresh_parameters();
  void transition_forward(NodeId f);
  void transition_backward(NodeId f);
  void composite_update(NodeId f);
  void refresh_state_beliefs();
  const Mat& bound_matrix(const CompiledFactor& f) const;
  bool pinned(VarId v, Vec* value) const;

  const FactorGraph& g_;
  ConstraintSet cs_;
  std::vector<int> controls_;
  EngineConfig cfg_;
  std::mt19937_64 rng_;
  Schedule schedule_;
  std::vector<Belief> beliefs_;
  std::map<std::pair<NodeId, VarId>, Vec> cat_msgs_;
  std::map<std::pair<NodeId, VarId>, Mat> dir_msgs_;       // alpha parameters
  std::map<NodeId, LogMatrixMessage> log_msgs_;            // substituted composites
  std::map<NodeId, CompositeMode> composite_modes_;
  std::map<NodeId, GfeNodeState> node_states_;
  std::map<NodeId, ProbVector> aux_x_;                     // free observation marginals
  int sweeps_run_ = 0;
};

// Runs the configured number of sweeps, recording the objective per sweep.
// Non-finite objectives and non-convergent state messages flag the policy and
// score it +infinity. controls_prefix holds already-executed controls; the
// policy fills the remaining slots.
PolicyEvaluation evaluate_policy(const FactorGraph& g, const ConstraintSet& cs,
                                 const std::vector<int>& controls_prefix, const Policy& policy,
                                 const EngineConfig& cfg, std::uint64_t seed);

// All control sequences of the given horizon, lexicographic order.
std::vector<Policy> enumerate_policies(int alphabet, int horizon);

// Index of the maximum-posterior policy: argmax log p(u) - score (converted to
// nats). With the default uniform prior this is the argmin score with a
// deterministic lexicographic tie-break. Throws when no policy has a finite
// score.
std::size_t select_policy(const std::vector<PolicyEvaluation>& evals,
                          const std::vector<double>& log_prior = {});

struct VmpResult {
  double objective_nats = 0.0;
  int sweeps = 0;
  bool converged = false;
};

// Iterates sweeps until the objective change drops below cfg.vmp_tol or
// cfg.vmp_sweeps is reached. Used for perception and learning passes.
VmpResult run_vmp(InferenceRun& run, const EngineConfig& cfg);

}  // namespace actinf
