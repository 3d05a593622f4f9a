#include "actinf/graph.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace actinf {

using nlohmann::json;

const char* to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::CategoricalPrior: return "categorical_prior";
    case FactorKind::DirichletPrior: return "dirichlet_prior";
    case FactorKind::Transition: return "transition";
    case FactorKind::GoalObservationComposite: return "goal_observation";
    case FactorKind::Equality: return "equality";
    case FactorKind::PointMass: return "point_mass";
  }
  return "unknown";
}

namespace {

FactorKind kind_from_string(const std::string& s) {
  if (s == "categorical_prior") return FactorKind::CategoricalPrior;
  if (s == "dirichlet_prior") return FactorKind::DirichletPrior;
  if (s == "transition") return FactorKind::Transition;
  if (s == "goal_observation") return FactorKind::GoalObservationComposite;
  if (s == "point_mass") return FactorKind::PointMass;
  if (s == "equality")
    throw std::invalid_argument("model spec: equality nodes are inserted automatically");
  throw std::invalid_argument("model spec: unknown factor kind '" + s + "'");
}

Vec vec_from_json(const json& j) {
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Mat mat_from_json(const json& j) {
  if (j.empty()) throw std::invalid_argument("model spec: empty matrix");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Mat m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw std::invalid_argument("model spec: ragged matrix");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

json vec_to_json(const Vec& v) {
  json j = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

json mat_to_json(const Mat& m) {
  json j = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

void check_column_stochastic(const Mat& m, const std::string& where) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if ((m.col(j).array() < 0.0).any())
      throw std::invalid_argument(where + ": negative transition entry");
    if (std::abs(m.col(j).sum() - 1.0) > kProbTol)
      throw std::invalid_argument(where + ": column " + std::to_string(j) + " not normalised");
  }
}

}  // namespace

ModelSpec ModelSpec::from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model spec: invalid JSON: ") + e.what());
  }
  ModelSpec spec;
  try {
    for (const auto& vj : j.at("variables")) {
      VariableDecl v;
      v.name = vj.at("name").get<std::string>();
      if (vj.contains("shape")) {
        v.rows = vj["shape"][0].get<int>();
        v.cols = vj["shape"][1].get<int>();
      } else {
        v.rows = vj.at("dim").get<int>();
        v.cols = 1;
      }
      spec.variables.push_back(std::move(v));
    }
    if (j.contains("controls")) {
      spec.control_slots = j["controls"].value("slots", 0);
      spec.control_alphabet = j["controls"].value("alphabet", 0);
    }
    for (const auto& fj : j.at("factors")) {
      FactorDecl f;
      f.name = fj.at("name").get<std::string>();
      f.kind = kind_from_string(fj.at("kind").get<std::string>());
      for (const auto& vn : fj.at("variables")) f.variables.push_back(vn.get<std::string>());
      if (fj.contains("statistic")) f.statistic = vec_from_json(fj["statistic"]);
      if (fj.contains("value")) f.statistic = vec_from_json(fj["value"]);
      if (fj.contains("alpha")) {
        // Nested arrays declare matrix-shaped parameters, flat arrays vectors.
        if (!fj["alpha"].empty() && fj["alpha"][0].is_array())
          f.matrix = mat_from_json(fj["alpha"]);
        else
          f.statistic = vec_from_json(fj["alpha"]);
      }
      if (fj.contains("value_matrix")) f.matrix = mat_from_json(fj["value_matrix"]);
      if (fj.contains("matrix")) f.transitions.push_back(mat_from_json(fj["matrix"]));
      if (fj.contains("matrices"))
        for (const auto& mj : fj["matrices"]) f.transitions.push_back(mat_from_json(mj));
      f.control_slot = fj.value("control_slot", -1);
      spec.factors.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model spec: ") + e.what());
  }
  return spec;
}

std::string ModelSpec::to_json() const {
  json j;
  j["variables"] = json::array();
  for (const auto& v : variables) {
    json vj;
    vj["name"] = v.name;
    if (v.cols > 1)
      vj["shape"] = {v.rows, v.cols};
    else
      vj["dim"] = v.rows;
    j["variables"].push_back(vj);
  }
  if (control_slots > 0) j["controls"] = {{"slots", control_slots}, {"alphabet", control_alphabet}};
  j["factors"] = json::array();
  for (const auto& f : factors) {
    json fj;
    fj["name"] = f.name;
    fj["kind"] = to_string(f.kind);
    fj["variables"] = f.variables;
    switch (f.kind) {
      case FactorKind::CategoricalPrior:
        fj["statistic"] = vec_to_json(f.statistic);
        break;
      case FactorKind::DirichletPrior:
        fj["alpha"] = mat_to_json(f.matrix);
        break;
      case FactorKind::PointMass:
        if (f.matrix.size() > 0)
          fj["value_matrix"] = mat_to_json(f.matrix);
        else
          fj["value"] = vec_to_json(f.statistic);
        break;
      case FactorKind::Transition:
        if (f.control_slot >= 0) {
          fj["control_slot"] = f.control_slot;
          json ms = json::array();
          for (const auto& m : f.transitions) ms.push_back(mat_to_json(m));
          fj["matrices"] = ms;
        } else {
          fj["matrix"] = mat_to_json(f.transitions.at(0));
        }
        break;
      default:
        break;
    }
    j["factors"].push_back(fj);
  }
  return j.dump(2);
}

// --- Belief -------------------------------------------------------------------

Vec Belief::mean_vec() const {
  if (is_categorical()) return categorical().p.entries();
  if (is_point_vector()) return point_vector();
  if (is_dirichlet() && dirichlet().is_vector()) return dirichlet().mean_vec();
  throw std::logic_error("Belief::mean_vec: not a vector belief");
}

Mat Belief::a_bar() const {
  if (is_point_matrix()) return point_matrix();
  if (is_importance()) return importance().a_bar;
  if (is_dirichlet()) return dirichlet().mean();
  throw std::logic_error("Belief::a_bar: not a matrix belief");
}

Vec Belief::h_bar() const {
  if (is_point_matrix()) return column_entropies(point_matrix());
  if (is_importance()) return importance().h_bar;
  if (is_dirichlet()) {
    // E[h(A)] column-wise: E[a_i log a_i] = (a_i/a0)(psi(a_i+1) - psi(a0+1)).
    const Mat& al = dirichlet().alpha();
    Vec h = Vec::Zero(al.cols());
    for (Eigen::Index j = 0; j < al.cols(); ++j) {
      double a0 = al.col(j).sum();
      double psi_tot = digamma(a0 + 1.0);
      for (Eigen::Index i = 0; i < al.rows(); ++i)
        h[j] += (al(i, j) / a0) * (psi_tot - digamma(al(i, j) + 1.0));
    }
    return h;
  }
  throw std::logic_error("Belief::h_bar: not a matrix belief");
}

Mat Belief::log_a_bar() const {
  if (is_point_matrix()) return clog(point_matrix());
  if (is_importance()) return importance().log_a_bar;
  if (is_dirichlet()) return dirichlet().mean_log();
  throw std::logic_error("Belief::log_a_bar: not a matrix belief");
}

Vec Belief::bar_log() const {
  if (is_point_vector()) return clog(point_vector());
  if (is_dirichlet()) return dirichlet().mean_log_vec();
  if (is_categorical()) return clog(categorical().p.entries());
  throw std::logic_error("Belief::bar_log: unsupported belief kind");
}

double Belief::entropy() const {
  if (is_categorical()) return categorical().p.entropy();
  if (is_dirichlet()) return dirichlet().entropy();
  return 0.0;  // point masses and importance-typed beliefs
}

// --- FactorGraph ----------------------------------------------------------------

FactorGraph FactorGraph::build(const ModelSpec& spec) {
  FactorGraph g;
  g.control_slots_ = spec.control_slots;
  g.control_alphabet_ = spec.control_alphabet;

  for (const auto& v : spec.variables) {
    if (v.name.empty()) throw std::invalid_argument("model spec: unnamed variable");
    if (v.rows < 1 || v.cols < 1)
      throw std::invalid_argument("model spec: variable '" + v.name + "' has invalid shape");
    if (g.var_index_.count(v.name))
      throw std::invalid_argument("model spec: duplicate variable '" + v.name + "'");
    g.var_index_[v.name] = static_cast<VarId>(g.vars_.size());
    g.vars_.push_back({v.name, v.rows, v.cols, {}});
  }

  auto var_of = [&](const std::string& name, const std::string& factor) -> VarId {
    auto it = g.var_index_.find(name);
    if (it == g.var_index_.end())
      throw std::invalid_argument("model spec: factor '" + factor +
                                  "' references undeclared variable '" + name + "'");
    return it->second;
  };

  for (const auto& f : spec.factors) {
    if (f.name.empty()) throw std::invalid_argument("model spec: unnamed factor");
    if (g.factor_index_.count(f.name))
      throw std::invalid_argument("model spec: duplicate factor '" + f.name + "'");
    CompiledFactor cf;
    cf.name = f.name;
    cf.kind = f.kind;
    cf.statistic = f.statistic;
    cf.matrix = f.matrix;
    cf.transitions = f.transitions;
    cf.control_slot = f.control_slot;
    for (const auto& vn : f.variables) cf.vars.push_back(var_of(vn, f.name));

    const auto arity = cf.vars.size();
    auto fail = [&](const std::string& msg) {
      throw std::invalid_argument("factor '" + f.name + "': " + msg);
    };
    switch (f.kind) {
      case FactorKind::CategoricalPrior: {
        if (arity != 1) fail("categorical prior takes one variable");
        const auto& v = g.vars_[cf.vars[0]];
        if (v.is_matrix()) fail("categorical prior on a matrix variable");
        if (cf.statistic.size() != v.rows) fail("statistic length mismatch");
        ProbVector check(cf.statistic);  // validates normalisation
        break;
      }
      case FactorKind::DirichletPrior: {
        if (arity != 1) fail("dirichlet prior takes one variable");
        const auto& v = g.vars_[cf.vars[0]];
        Mat alpha = cf.matrix;
        if (alpha.size() == 0 && cf.statistic.size() > 0) alpha = Mat(cf.statistic);
        if (alpha.rows() != v.rows || alpha.cols() != v.cols) fail("alpha shape mismatch");
        Dirichlet check{alpha};  // validates positivity
        cf.matrix = alpha;
        break;
      }
      case FactorKind::Transition: {
        if (arity != 2) fail("transition takes source and destination variables");
        const auto& src = g.vars_[cf.vars[0]];
        const auto& dst = g.vars_[cf.vars[1]];
        if (src.is_matrix() || dst.is_matrix()) fail("transition endpoints must be vectors");
        if (cf.control_slot >= 0) {
          if (cf.control_slot >= spec.control_slots) fail("control slot out of range");
          if (static_cast<int>(cf.transitions.size()) != spec.control_alphabet)
            fail("needs one matrix per control value");
        } else if (cf.transitions.size() != 1) {
          fail("fixed transition needs exactly one matrix");
        }
        for (const auto& m : cf.transitions) {
          if (m.rows() != dst.rows || m.cols() != src.rows) fail("matrix shape mismatch");
          check_column_stochastic(m, "factor '" + f.name + "'");
        }
        break;
      }
      case FactorKind::GoalObservationComposite: {
        if (arity != 4) fail("goal observation composite takes (x, z, A, c)");
        const auto& x = g.vars_[cf.vars[0]];
        const auto& z = g.vars_[cf.vars[1]];
        const auto& A = g.vars_[cf.vars[2]];
        const auto& c = g.vars_[cf.vars[3]];
        if (x.is_matrix() || z.is_matrix() || c.is_matrix()) fail("x, z, c must be vectors");
        if (!A.is_matrix()) fail("A must be a matrix variable");
        if (A.rows != x.rows || A.cols != z.rows) fail("A shape must be |x| by |z|");
        if (c.rows != x.rows) fail("goal statistic dimension must match |x|");
        break;
      }
      case FactorKind::PointMass: {
        if (arity != 1) fail("point mass takes one variable");
        const auto& v = g.vars_[cf.vars[0]];
        if (v.is_matrix()) {
          if (cf.matrix.rows() != v.rows || cf.matrix.cols() != v.cols)
            fail("value shape mismatch");
        } else if (cf.statistic.size() != v.rows) {
          fail("value length mismatch");
        }
        break;
      }
      case FactorKind::Equality:
        fail("equality nodes are inserted automatically");
    }

    NodeId id = static_cast<NodeId>(g.factors_.size());
    g.factor_index_[f.name] = id;
    for (VarId v : cf.vars) g.vars_[v].factors.push_back(id);
    g.factors_.push_back(std::move(cf));
  }

  // Observation variables live inside their composite.
  for (const auto& f : g.factors_) {
    if (f.kind != FactorKind::GoalObservationComposite) continue;
    if (g.vars_[f.obs_var()].factors.size() != 1)
      throw std::invalid_argument("variable '" + g.vars_[f.obs_var()].name +
                                  "' must connect only to its composite");
  }

  // Dangling variables are rejected; shared variables get equality nodes.
  for (VarId v = 0; v < static_cast<VarId>(g.vars_.size()); ++v) {
    const auto m = g.vars_[v].factors.size();
    if (m == 0)
      throw std::invalid_argument("variable '" + g.vars_[v].name + "' is dangling");
    if (m > 2) {
      CompiledFactor eq;
      eq.name = "=" + g.vars_[v].name;
      eq.kind = FactorKind::Equality;
      eq.vars = {v};
      NodeId id = static_cast<NodeId>(g.factors_.size());
      g.factor_index_[eq.name] = id;
      g.factors_.push_back(std::move(eq));
      ++g.equality_count_;
      // The equality node is bookkeeping only; adjacency stays with the
      // original factors, which exchange cavity products on the variable.
    }
  }

  // Chain order: state variables topologically sorted along transitions.
  std::map<VarId, NodeId> producer;
  std::set<VarId> state_vars;
  for (NodeId fi = 0; fi < static_cast<NodeId>(g.factors_.size()); ++fi) {
    const auto& f = g.factors_[fi];
    if (f.kind == FactorKind::Transition) {
      state_vars.insert(f.vars[0]);
      state_vars.insert(f.vars[1]);
      if (producer.count(f.vars[1]))
        throw std::invalid_argument("variable '" + g.vars_[f.vars[1]].name +
                                    "' produced by two transitions (unsupported topology)");
      producer[f.vars[1]] = fi;
    } else if (f.kind == FactorKind::GoalObservationComposite) {
      state_vars.insert(f.state_var());
    }
  }
  std::vector<VarId> pending(state_vars.begin(), state_vars.end());
  std::sort(pending.begin(), pending.end());
  std::set<VarId> placed;
  for (VarId root : pending) {
    if (producer.count(root) || placed.count(root)) continue;
    VarId cur = root;
    while (true) {
      g.chain_order_.push_back(cur);
      placed.insert(cur);
      // follow the unique outgoing transition, if any
      NodeId next_trans = -1;
      for (NodeId fi : g.vars_[cur].factors) {
        const auto& f = g.factors_[fi];
        if (f.kind == FactorKind::Transition && f.vars[0] == cur) {
          if (next_trans >= 0)
            throw std::invalid_argument("variable '" + g.vars_[cur].name +
                                        "' feeds two transitions (unsupported topology)");
          next_trans = fi;
        }
      }
      if (next_trans < 0) break;
      cur = g.factors_[next_trans].vars[1];
      if (placed.count(cur))
        throw std::invalid_argument("transition cycle detected at '" + g.vars_[cur].name + "'");
    }
  }
  if (placed.size() != state_vars.size())
    throw std::invalid_argument("disconnected transition structure");

  std::map<VarId, int> chain_pos;
  for (std::size_t i = 0; i < g.chain_order_.size(); ++i) chain_pos[g.chain_order_[i]] = static_cast<int>(i);
  for (NodeId fi = 0; fi < static_cast<NodeId>(g.factors_.size()); ++fi)
    if (g.factors_[fi].kind == FactorKind::GoalObservationComposite)
      g.composite_order_.push_back(fi);
  std::sort(g.composite_order_.begin(), g.composite_order_.end(), [&](NodeId a, NodeId b) {
    int pa = chain_pos[g.factors_[a].state_var()];
    int pb = chain_pos[g.factors_[b].state_var()];
    return pa != pb ? pa < pb : a < b;
  });

  return g;
}

VarId FactorGraph::variable_id(const std::string& name) const {
  auto it = var_index_.find(name);
  if (it == var_index_.end())
    throw std::invalid_argument("unknown variable '" + name + "'");
  return it->second;
}

NodeId FactorGraph::factor_id(const std::string& name) const {
  auto it = factor_index_.find(name);
  if (it == factor_index_.end())
    throw std::invalid_argument("unknown factor '" + name + "'");
  return it->second;
}

void FactorGraph::validate_constraints(const ConstraintSet& cs) const {
  for (const auto& name : cs.p_substitutions) {
    NodeId f = factor_id(name);
    if (factors_[f].kind != FactorKind::GoalObservationComposite)
      throw std::invalid_argument("p-substitution on non-composite factor '" + name + "'");
    const std::string& xname = vars_[factors_[f].obs_var()].name;
    if (cs.data_clamps.count(xname))
      throw std::invalid_argument("variable '" + xname +
                                  "' cannot be clamped and p-substituted simultaneously");
  }
  for (const auto& [name, idx] : cs.data_clamps) {
    VarId v = variable_id(name);
    if (vars_[v].is_matrix())
      throw std::invalid_argument("data clamp on matrix variable '" + name + "'");
    if (idx < 0 || idx >= vars_[v].rows)
      throw std::invalid_argument("clamp value " + std::to_string(idx) + " outside alphabet of '" +
                                  name + "'");
  }
  for (const auto& [fname, blocks] : cs.factorisation) {
    NodeId f = factor_id(fname);
    std::set<VarId> adjacent(factors_[f].vars.begin(), factors_[f].vars.end());
    std::set<VarId> seen;
    for (const auto& block : blocks)
      for (const auto& vname : block) {
        VarId v = variable_id(vname);
        if (!adjacent.count(v))
          throw std::invalid_argument("factorisation block for '" + fname +
                                      "' lists non-adjacent variable '" + vname + "'");
        if (!seen.insert(v).second)
          throw std::invalid_argument("factorisation for '" + fname + "' repeats variable '" +
                                      vname + "'");
      }
  }
}

std::map<std::string, std::vector<std::vector<std::string>>> FactorGraph::default_factorisation()
    const {
  std::map<std::string, std::vector<std::vector<std::string>>> out;
  for (const auto& f : factors_) {
    if (f.kind == FactorKind::Equality) continue;
    std::vector<std::vector<std::string>> blocks;
    if (f.kind == FactorKind::Transition) {
      blocks.push_back({vars_[f.vars[0]].name, vars_[f.vars[1]].name});  // bridge
    } else {
      for (VarId v : f.vars) blocks.push_back({vars_[v].name});  // beads
    }
    out[f.name] = std::move(blocks);
  }
  return out;
}

Schedule FactorGraph::build_schedule(const ConstraintSet& cs) const {
  validate_constraints(cs);
  Schedule s;
  s.push_back({UpdateRule::ParamExpectations, -1, -1});
  std::map<VarId, NodeId> producer;
  for (NodeId fi = 0; fi < static_cast<NodeId>(factors_.size()); ++fi)
    if (factors_[fi].kind == FactorKind::Transition) producer[factors_[fi].vars[1]] = fi;
  for (VarId v : chain_order_) {
    auto it = producer.find(v);
    if (it != producer.end()) s.push_back({UpdateRule::TransitionForward, it->second, v});
    for (NodeId c : composite_order_)
      if (factors_[c].state_var() == v) s.push_back({UpdateRule::CompositeUpdate, c, v});
  }
  for (auto it = chain_order_.rbegin(); it != chain_order_.rend(); ++it) {
    auto p = producer.find(*it);
    if (p != producer.end())
      s.push_back({UpdateRule::TransitionBackward, p->second, factors_[p->second].vars[0]});
  }
  return s;
}

// --- Free energy ------------------------------------------------------------------

namespace {

constexpr double kSupportTol = 1e-9;

[[noreturn]] void support_error(const std::string& factor) {
  throw std::runtime_error("free_energy: belief has mass outside the support of factor '" +
                           factor + "'");
}

// E_q[log q / log f] for a categorical belief against a fixed statistic.
double categorical_kl_term(const Vec& q, const Vec& f, const std::string& where) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    if (f[i] <= 0.0) {
      if (q[i] > kSupportTol) support_error(where);
      continue;
    }
    total += q[i] * (std::log(q[i]) - std::log(f[i]));
  }
  return total;
}

const Mat& bound_transition(const CompiledFactor& f, const std::vector<int>& controls) {
  if (f.control_slot < 0) return f.transitions[0];
  if (f.control_slot >= static_cast<int>(controls.size()))
    throw std::invalid_argument("free_energy: no control bound for slot " +
                                std::to_string(f.control_slot));
  return f.transitions[controls[f.control_slot]];
}

}  // namespace

double free_energy(const FactorGraph& g, const ConstraintSet& cs, const Marginals& m,
                   const std::vector<int>& controls) {
  g.validate_constraints(cs);
  if (m.var.size() != g.variables().size())
    throw std::invalid_argument("free_energy: marginal store size mismatch");

  double total = 0.0;

  for (NodeId fi = 0; fi < static_cast<NodeId>(g.factors().size()); ++fi) {
    const auto& f = g.factors()[fi];
    switch (f.kind) {
      case FactorKind::CategoricalPrior: {
        const Belief& b = m.var[f.vars[0]];
        Vec q = b.mean_vec();
        total += categorical_kl_term(q, f.statistic, f.name);
        break;
      }
      case FactorKind::DirichletPrior: {
        const Belief& b = m.var[f.vars[0]];
        if (b.is_dirichlet())
          total += -b.dirichlet().entropy() - b.dirichlet().cross_log_density(f.matrix);
        // Importance-typed and point beliefs: parameter divergence omitted
        // (tentative-decision reporting).
        break;
      }
      case FactorKind::Transition: {
        auto it = m.transition_pair.find(fi);
        if (it == m.transition_pair.end())
          throw std::invalid_argument("free_energy: missing pair belief for '" + f.name + "'");
        const Mat& pair = it->second;  // rows: dst, cols: src
        const Mat& B = bound_transition(f, controls);
        if (pair.rows() != B.rows() || pair.cols() != B.cols())
          throw std::invalid_argument("free_energy: pair belief shape mismatch for '" + f.name +
                                      "'");
        for (Eigen::Index c = 0; c < pair.cols(); ++c)
          for (Eigen::Index r = 0; r < pair.rows(); ++r) {
            double q = pair(r, c);
            if (q <= 0.0) continue;
            if (B(r, c) <= 0.0) {
              if (q > kSupportTol) support_error(f.name);
              continue;
            }
            total += q * (std::log(q) - std::log(B(r, c)));
          }
        break;
      }
      case FactorKind::Equality: {
        total -= m.var[f.vars[0]].entropy();
        break;
      }
      case FactorKind::PointMass:
        break;
      case FactorKind::GoalObservationComposite: {
        const Belief& bz = m.var[f.state_var()];
        const Belief& bA = m.var[f.matrix_var()];
        const Belief& bc = m.var[f.goal_var()];
        const Vec zbar = bz.mean_vec();
        const Vec blc = bc.bar_log();
        const std::string& xname = g.variables()[f.obs_var()].name;

        auto clamp_it = cs.data_clamps.find(xname);
        if (clamp_it != cs.data_clamps.end()) {
          const int xhat = clamp_it->second;
          // -E[log p(xhat | z, A)] with exact support checking for point A.
          if (bA.is_point_matrix()) {
            const Mat& A = bA.point_matrix();
            for (Eigen::Index z = 0; z < zbar.size(); ++z) {
              if (zbar[z] <= 0.0) continue;
              if (A(xhat, z) <= 0.0) {
                if (zbar[z] > kSupportTol) support_error(f.name);
                continue;
              }
              total -= zbar[z] * std::log(A(xhat, z));
            }
          } else {
            total -= bA.log_a_bar().row(xhat).dot(zbar);
          }
          // -E[log goal(xhat)]
          if (bc.is_point_vector() && bc.point_vector()[xhat] <= 0.0) support_error(f.name);
          total -= blc[xhat];
        } else if (cs.p_substitutions.count(f.name)) {
          // Substituted observation: local average energy -zbar' rho.
          const Mat abar = bA.a_bar();
          const Vec hbar = bA.h_bar();
          const Vec log_qx = clog(Vec(abar * zbar));
          const Vec rho = abar.transpose() * (blc - log_qx) - hbar;
          total += -zbar.dot(rho);
        } else {
          // Free observation marginal: plain variational pair of facing nodes.
          auto qx_it = m.aux_x.find(fi);
          if (qx_it == m.aux_x.end())
            throw std::invalid_argument("free_energy: missing q(x) for '" + f.name + "'");
          const Vec xbar = qx_it->second.entries();
          if (bA.is_point_matrix()) {
            const Mat& A = bA.point_matrix();
            for (Eigen::Index z = 0; z < zbar.size(); ++z)
              for (Eigen::Index x = 0; x < xbar.size(); ++x) {
                double w = xbar[x] * zbar[z];
                if (w <= 0.0) continue;
                if (A(x, z) <= 0.0) {
                  if (w > kSupportTol) support_error(f.name);
                  continue;
                }
                total -= w * std::log(A(x, z));
              }
          } else {
            total -= xbar.dot(bA.log_a_bar() * zbar);
          }
          for (Eigen::Index x = 0; x < xbar.size(); ++x) {
            if (xbar[x] <= 0.0) continue;
            if (bc.is_point_vector() && bc.point_vector()[x] <= 0.0) support_error(f.name);
            total -= xbar[x] * blc[x];
          }
          total -= qx_it->second.entropy();
        }
        // Adjacent-variable beads.
        total -= bz.entropy();
        total -= bA.entropy();
        total -= bc.entropy();
        break;
      }
    }
  }

  // Edge-local entropies: one segment pair per adjacent factor beyond the
  // first, one extra when an equality node splits the variable.
  for (VarId v = 0; v < static_cast<VarId>(g.variables().size()); ++v) {
    const auto m_adj = g.variables()[v].factors.size();
    if (m_adj < 2) continue;
    const double coeff = m_adj >= 3 ? static_cast<double>(m_adj) : 1.0;
    total += coeff * m.var[v].entropy();
  }

  if (!std::isfinite(total))
    throw std::domain_error("free_energy: non-finite objective");
  return total;
}

double bethe_free_energy(const FactorGraph& g, const ConstraintSet& cs, const Marginals& m,
                         bool bits) {
  if (!cs.p_substitutions.empty())
    throw std::invalid_argument("bethe_free_energy: constraint set carries p-substitutions");
  double nats = free_energy(g, cs, m, {});
  return bits ? to_bits(nats) : nats;
}

ConstraintSet time_constraints(const FactorGraph& g, int t, const std::vector<int>& observations,
                               bool substitutions) {
  const int T = static_cast<int>(g.composite_order().size());
  if (t < 1 || t > T + 1)
    throw std::invalid_argument("time_constraints: t must lie in 1..T+1");
  if (static_cast<int>(observations.size()) < t - 1)
    throw std::invalid_argument("time_constraints: missing observations for past slices");
  ConstraintSet cs;
  for (int k = 0; k < T; ++k) {
    NodeId comp = g.composite_order()[k];
    const auto& xvar = g.variables()[g.factors()[comp].obs_var()];
    if (k < t - 1) {
      int idx = observations[k];
      if (idx < 0 || idx >= xvar.rows)
        throw std::invalid_argument("time_constraints: observation " + std::to_string(idx) +
                                    " outside the outcome alphabet of '" + xvar.name + "'");
      cs.data_clamps[xvar.name] = idx;
    } else if (substitutions) {
      cs.p_substitutions.insert(g.factors()[comp].name);
    }
  }
  return cs;
}

}  // namespace actinf
