#pragma once

#include "actinf/dist.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace actinf {

using NodeId = int;
using VarId = int;

enum class FactorKind {
  CategoricalPrior,
  DirichletPrior,
  Transition,
  GoalObservationComposite,
  Equality,
  PointMass,
};

const char* to_string(FactorKind kind);

// --- Declarative model description -----------------------------------------
//
// A model is declared as a tree of variables and factors and compiled by
// FactorGraph::build. Variables used by more than two factors are duplicated
// behind equality nodes automatically. The JSON schema is documented in the
// repository README.

struct VariableDecl {
  std::string name;
  int rows = 0;
  int cols = 1;  // cols > 1 declares a matrix variable
};

struct FactorDecl {
  std::string name;
  FactorKind kind = FactorKind::CategoricalPrior;
  std::vector<std::string> variables;

  Vec statistic;                  // CategoricalPrior / PointMass (vector)
  Mat matrix;                     // DirichletPrior alpha / PointMass (matrix)
  std::vector<Mat> transitions;   // Transition: matrix per control value
  int control_slot = -1;          // Transition: policy slot, or -1 if fixed
};

struct ModelSpec {
  std::vector<VariableDecl> variables;
  std::vector<FactorDecl> factors;
  int control_slots = 0;
  int control_alphabet = 0;

  static ModelSpec from_json(const std::string& json_text);
  std::string to_json() const;
};

// --- Constraint annotations -------------------------------------------------

// Beads, bridges, p-substitution markers and data clamps. Together with the
// graph these fix the constrained free-energy objective.
struct ConstraintSet {
  // Goal-observation composites whose observation factor replaces q(x) inside
  // expectation terms.
  std::set<std::string> p_substitutions;
  // Observed values, variable name -> index into the outcome alphabet.
  std::map<std::string, int> data_clamps;
  // Per-factor partition of adjacent variables into joint blocks. Filled with
  // the defaults below when left empty.
  std::map<std::string, std::vector<std::vector<std::string>>> factorisation;
};

// --- Beliefs ----------------------------------------------------------------

// Weighted-sample expectations of an observation-matrix belief.
struct ImportanceEstimate {
  Mat a_bar;        // column-normalised mean
  Vec h_bar;        // E[h(A)] per column
  Mat log_a_bar;    // E[log A] entrywise
  double ess = 0.0;
  int n_samples = 0;
  bool underflow_fallback = false;
};

struct PointVector {
  Vec value;
};
struct PointMatrix {
  Mat value;
};

// Variational belief over one variable.
class Belief {
 public:
  Belief() = default;
  Belief(Categorical c) : v_(std::move(c)) {}
  Belief(Dirichlet d) : v_(std::move(d)) {}
  Belief(PointVector p) : v_(std::move(p)) {}
  Belief(PointMatrix p) : v_(std::move(p)) {}
  Belief(ImportanceEstimate e) : v_(std::move(e)) {}

  bool is_categorical() const { return std::holds_alternative<Categorical>(v_); }
  bool is_dirichlet() const { return std::holds_alternative<Dirichlet>(v_); }
  bool is_point_vector() const { return std::holds_alternative<PointVector>(v_); }
  bool is_point_matrix() const { return std::holds_alternative<PointMatrix>(v_); }
  bool is_importance() const { return std::holds_alternative<ImportanceEstimate>(v_); }

  const Categorical& categorical() const { return std::get<Categorical>(v_); }
  const Dirichlet& dirichlet() const { return std::get<Dirichlet>(v_); }
  const ImportanceEstimate& importance() const { return std::get<ImportanceEstimate>(v_); }
  const Vec& point_vector() const { return std::get<PointVector>(v_).value; }
  const Mat& point_matrix() const { return std::get<PointMatrix>(v_).value; }

  // Mean of a vector-valued belief (categorical statistic or point value).
  Vec mean_vec() const;

  // Expectations of a matrix-valued belief.
  Mat a_bar() const;      // E[A]
  Vec h_bar() const;      // E[h(A)]
  Mat log_a_bar() const;  // E[log A]

  // E[log c] of a goal-statistic belief; exact log for point masses.
  Vec bar_log() const;

  // Entropy used by free-energy accounting. Zero for point masses; zero for
  // importance-typed beliefs (tentative-decision reporting, see free_energy).
  double entropy() const;

 private:
  std::variant<std::monostate, Categorical, Dirichlet, PointVector, PointMatrix,
               ImportanceEstimate>
      v_;
};

struct Marginals {
  std::vector<Belief> var;                 // indexed by VarId
  std::map<NodeId, Mat> transition_pair;   // q(dst, src) per transition factor
  std::map<NodeId, ProbVector> aux_x;      // q(x) per composite when x is free
};

// --- Compiled graph ----------------------------------------------------------

struct CompiledVariable {
  std::string name;
  int rows = 0;
  int cols = 1;
  std::vector<NodeId> factors;  // adjacency
  bool is_matrix() const { return cols > 1; }
};

struct CompiledFactor {
  std::string name;
  FactorKind kind = FactorKind::CategoricalPrior;
  std::vector<VarId> vars;
  Vec statistic;
  Mat matrix;
  std::vector<Mat> transitions;
  int control_slot = -1;

  // GoalObservationComposite role accessors (variable order x, z, A, c).
  VarId obs_var() const { return vars[0]; }
  VarId state_var() const { return vars[1]; }
  VarId matrix_var() const { return vars[2]; }
  VarId goal_var() const { return vars[3]; }
};

enum class UpdateRule {
  ParamExpectations,
  TransitionForward,
  CompositeUpdate,
  TransitionBackward,
};

struct ScheduleStep {
  UpdateRule rule;
  NodeId factor = -1;
  VarId variable = -1;
};

using Schedule = std::vector<ScheduleStep>;

class FactorGraph {
 public:
  // Validates and compiles a declarative spec. Rejects dangling variables,
  // arity mismatches and malformed parameters with a descriptive error.
  static FactorGraph build(const ModelSpec& spec);

  const std::vector<CompiledVariable>& variables() const { return vars_; }
  const std::vector<CompiledFactor>& factors() const { return factors_; }
  int control_slots() const { return control_slots_; }
  int control_alphabet() const { return control_alphabet_; }

  VarId variable_id(const std::string& name) const;
  NodeId factor_id(const std::string& name) const;

  // Composites ordered by time slice, and the chain order of state variables.
  const std::vector<NodeId>& composite_order() const { return composite_order_; }
  const std::vector<VarId>& chain_order() const { return chain_order_; }

  // Number of equality nodes inserted for variables shared by >2 factors.
  int equality_node_count() const { return equality_count_; }

  void validate_constraints(const ConstraintSet& cs) const;

  // Default beads/bridges: transitions carry a joint block over their pair,
  // all other factors fully factorise over adjacent variables.
  std::map<std::string, std::vector<std::vector<std::string>>> default_factorisation() const;

  Schedule build_schedule(const ConstraintSet& cs) const;

 private:
  std::vector<CompiledVariable> vars_;
  std::vector<CompiledFactor> factors_;
  std::map<std::string, VarId> var_index_;
  std::map<std::string, NodeId> factor_index_;
  std::vector<NodeId> composite_order_;
  std::vector<VarId> chain_order_;
  int control_slots_ = 0;
  int control_alphabet_ = 0;
  int equality_count_ = 0;
};

// --- Free-energy bookkeeping --------------------------------------------------

// Evaluates the constrained free-energy objective fixed by the graph and its
// annotations, in nats. With no p-substitutions this is the Bethe free energy;
// with substitutions the composite terms switch to their generalised form.
// Importance-typed matrix beliefs contribute through composite energies only
// (point-mass treatment of q(A)); closed-form Dirichlet beliefs contribute
// their exact divergence terms.
// Raises on zero-support mismatches between beliefs and factors. controls
// binds policy slots of control-dependent transitions.
double free_energy(const FactorGraph& g, const ConstraintSet& cs, const Marginals& m,
                   const std::vector<int>& controls = {});

// Spec'd entry point: the Bethe objective of a substitution-free constraint
// set. bits selects reporting units (internal arithmetic is natural-log).
double bethe_free_energy(const FactorGraph& g, const ConstraintSet& cs, const Marginals& m,
                         bool bits = false);

inline double to_bits(double nats) { return nats / 0.6931471805599453; }

// Constraints for time step t of the perception-action cycle: slices with an
// available observation are clamped, later slices carry p-substitution
// markers (GFE agents) or stay free (BFE agents). t runs 1..T+1; at T+1 all
// slices are observed and inference is a pure learning pass.
ConstraintSet time_constraints(const FactorGraph& g, int t, const std::vector<int>& observations,
                               bool substitutions);

}  // namespace actinf
