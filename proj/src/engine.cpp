#include "actinf/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace actinf {

TransitionMessages transition_messages(const Mat& B, const Vec& incoming_src,
                                       const Vec& incoming_dst) {
  if (B.cols() != incoming_src.size() || B.rows() != incoming_dst.size())
    throw std::invalid_argument("transition_messages: shape mismatch");
  TransitionMessages out;
  out.forward = ProbVector::normalized(B * incoming_src).entries();
  out.backward = ProbVector::normalized(B.transpose() * incoming_dst).entries();
  return out;
}

Dirichlet dirichlet_categorical_update(const Dirichlet& prior, const Vec& x_stat,
                                       const Vec& z_stat) {
  Mat alpha = prior.alpha();
  if (z_stat.size() == 0) {
    if (alpha.cols() != 1 || alpha.rows() != x_stat.size())
      throw std::invalid_argument("dirichlet_categorical_update: shape mismatch");
    alpha.col(0) += x_stat;
  } else {
    if (alpha.rows() != x_stat.size() || alpha.cols() != z_stat.size())
      throw std::invalid_argument("dirichlet_categorical_update: shape mismatch");
    alpha += x_stat * z_stat.transpose();
  }
  return Dirichlet(alpha);
}

namespace {

Vec onehot_vec(int index, Eigen::Index dim) {
  Vec v = Vec::Zero(dim);
  v[index] = 1.0;
  return v;
}

Vec product_message(const std::vector<Vec>& msgs, Eigen::Index dim) {
  if (msgs.empty()) return Vec::Constant(dim, 1.0 / static_cast<double>(dim));
  Vec acc = Vec::Zero(dim);
  for (const auto& m : msgs) acc += clog(m);
  return ProbVector::normalized(softmax(acc).entries()).entries();
}

}  // namespace

InferenceRun::InferenceRun(const FactorGraph& g, const ConstraintSet& cs,
                           std::vector<int> controls, const EngineConfig& cfg,
                           std::uint64_t seed)
    : g_(g), cs_(cs), controls_(std::move(controls)), cfg_(cfg), rng_(seed) {
  g_.validate_constraints(cs_);
  schedule_ = g_.build_schedule(cs_);

  for (const auto& f : g_.factors()) {
    if (f.kind == FactorKind::Transition && f.control_slot >= 0) {
      if (f.control_slot >= static_cast<int>(controls_.size()))
        throw std::invalid_argument("InferenceRun: no control bound for slot " +
                                    std::to_string(f.control_slot));
      int u = controls_[f.control_slot];
      if (u < 0 || u >= static_cast<int>(f.transitions.size()))
        throw std::invalid_argument("InferenceRun: control value out of range");
    }
  }

  // Beliefs: uniform categorical statistics, Dirichlet variables at their
  // prior, pinned variables at their point value.
  beliefs_.resize(g_.variables().size());
  for (VarId v = 0; v < static_cast<VarId>(g_.variables().size()); ++v) {
    const auto& var = g_.variables()[v];
    if (var.is_matrix()) {
      bool set = false;
      for (NodeId fi : var.factors) {
        const auto& f = g_.factors()[fi];
        if (f.kind == FactorKind::PointMass) {
          beliefs_[v] = Belief(PointMatrix{f.matrix});
          set = true;
        } else if (f.kind == FactorKind::DirichletPrior && !set) {
          beliefs_[v] = Belief(Dirichlet(f.matrix));
          set = true;
        }
      }
      if (!set)
        throw std::invalid_argument("matrix variable '" + var.name +
                                    "' needs a prior or a point mass");
      continue;
    }
    Vec point;
    if (pinned(v, &point)) {
      beliefs_[v] = Belief(PointVector{point});
      continue;
    }
    bool has_dirichlet = false;
    for (NodeId fi : var.factors)
      if (g_.factors()[fi].kind == FactorKind::DirichletPrior) {
        beliefs_[v] = Belief(Dirichlet(Vec(g_.factors()[fi].matrix.col(0))));
        has_dirichlet = true;
      }
    if (!has_dirichlet)
      beliefs_[v] = Belief(Categorical(
          ProbVector(Vec::Constant(var.rows, 1.0 / static_cast<double>(var.rows)))));
  }

  // Messages: priors and point masses are constant, everything else uniform.
  for (NodeId fi = 0; fi < static_cast<NodeId>(g_.factors().size()); ++fi) {
    const auto& f = g_.factors()[fi];
    switch (f.kind) {
      case FactorKind::CategoricalPrior:
        cat_msgs_[{fi, f.vars[0]}] = f.statistic;
        break;
      case FactorKind::PointMass:
        if (!g_.variables()[f.vars[0]].is_matrix()) cat_msgs_[{fi, f.vars[0]}] = f.statistic;
        break;
      case FactorKind::Transition: {
        const auto& src = g_.variables()[f.vars[0]];
        const auto& dst = g_.variables()[f.vars[1]];
        cat_msgs_[{fi, f.vars[0]}] = Vec::Constant(src.rows, 1.0 / src.rows);
        cat_msgs_[{fi, f.vars[1]}] = Vec::Constant(dst.rows, 1.0 / dst.rows);
        break;
      }
      case FactorKind::GoalObservationComposite: {
        const auto& z = g_.variables()[f.state_var()];
        cat_msgs_[{fi, f.state_var()}] = Vec::Constant(z.rows, 1.0 / z.rows);
        CompositeMode mode;
        const std::string& xname = g_.variables()[f.obs_var()].name;
        auto it = cs_.data_clamps.find(xname);
        if (it != cs_.data_clamps.end()) {
          mode.clamped = true;
          mode.clamp_index = it->second;
          beliefs_[f.obs_var()] = Belief(PointVector{onehot_vec(it->second, g_.variables()[f.obs_var()].rows)});
        }
        mode.substituted = cs_.p_substitutions.count(f.name) > 0;
        composite_modes_[fi] = mode;
        GfeNodeState st;
        st.incoming_d = Vec::Constant(z.rows, 1.0 / z.rows);
        st.nu = st.incoming_d;
        st.q_x = Categorical(ProbVector(
            Vec::Constant(g_.variables()[f.obs_var()].rows,
                          1.0 / static_cast<double>(g_.variables()[f.obs_var()].rows))));
        node_states_[fi] = st;
        break;
      }
      default:
        break;
    }
  }
}

const Belief& InferenceRun::belief(const std::string& name) const {
  return beliefs_.at(g_.variable_id(name));
}

bool InferenceRun::pinned(VarId v, Vec* value) const {
  const auto& var = g_.variables()[v];
  auto it = cs_.data_clamps.find(var.name);
  if (it != cs_.data_clamps.end()) {
    if (value) *value = onehot_vec(it->second, var.rows);
    return true;
  }
  for (NodeId fi : var.factors) {
    const auto& f = g_.factors()[fi];
    if (f.kind == FactorKind::PointMass && !var.is_matrix()) {
      if (value) *value = f.statistic;
      return true;
    }
  }
  return false;
}

const Mat& InferenceRun::bound_matrix(const CompiledFactor& f) const {
  if (f.control_slot < 0) return f.transitions[0];
  return f.transitions[controls_[f.control_slot]];
}

Vec InferenceRun::cavity(VarId v, NodeId excluding) const {
  Vec point;
  if (pinned(v, &point)) return point;
  std::vector<Vec> msgs;
  for (NodeId fi : g_.variables()[v].factors) {
    if (fi == excluding) continue;
    auto it = cat_msgs_.find({fi, v});
    if (it != cat_msgs_.end()) msgs.push_back(it->second);
  }
  return product_message(msgs, g_.variables()[v].rows);
}

void InferenceRun::refresh_parameters() {
  for (NodeId fi = 0; fi < static_cast<NodeId>(g_.factors().size()); ++fi) {
    const auto& f = g_.factors()[fi];
    if (f.kind != FactorKind::DirichletPrior) continue;
    VarId v = f.vars[0];
    const auto& var = g_.variables()[v];

    // Conjugate product of the prior with all Dirichlet-form messages.
    Mat alpha = f.matrix;
    for (NodeId other : var.factors) {
      if (other == fi) continue;
      auto it = dir_msgs_.find({other, v});
      if (it != dir_msgs_.end())
        alpha += it->second - Mat::Ones(it->second.rows(), it->second.cols());
    }

    // Log-function messages from substituted composites enter through
    // importance weights, with the conjugate product as the proposal.
    std::vector<LogMatrixMessage> lmsgs;
    for (NodeId other : var.factors) {
      auto it = log_msgs_.find(other);
      if (it != log_msgs_.end()) lmsgs.push_back(it->second);
    }
    if (lmsgs.empty()) {
      beliefs_[v] = var.is_matrix() ? Belief(Dirichlet(alpha)) : Belief(Dirichlet(Vec(alpha.col(0))));
    } else {
      auto weight = [lmsgs](const Mat& A) {
        double s = 0.0;
        for (const auto& m : lmsgs) s += m(A);
        return s;
      };
      beliefs_[v] = Belief(importance_expectations(Dirichlet(alpha), weight,
                                                   cfg_.importance_samples, rng_));
    }
  }
}

void InferenceRun::transition_forward(NodeId fi) {
  const auto& f = g_.factors()[fi];
  const Mat& B = bound_matrix(f);
  cat_msgs_[{fi, f.vars[1]}] =
      ProbVector::normalized(B * cavity(f.vars[0], fi)).entries();
}

void InferenceRun::transition_backward(NodeId fi) {
  const auto& f = g_.factors()[fi];
  const Mat& B = bound_matrix(f);
  cat_msgs_[{fi, f.vars[0]}] =
      ProbVector::normalized(B.transpose() * cavity(f.vars[1], fi)).entries();
}

void InferenceRun::composite_update(NodeId fi) {
  const auto& f = g_.factors()[fi];
  const auto& mode = composite_modes_.at(fi);
  const VarId zv = f.state_var();
  const VarId Av = f.matrix_var();
  const VarId cv = f.goal_var();
  const Belief& bA = beliefs_[Av];
  const Belief& bc = beliefs_[cv];
  const Vec blc = bc.bar_log();
  GfeNodeState& st = node_states_[fi];

  const bool a_learned = !bA.is_point_matrix();
  const bool c_learned = bc.is_dirichlet();

  Vec zpin;
  const bool z_pinned = pinned(zv, &zpin);

  auto refresh_z_belief = [&]() -> Vec {
    if (z_pinned) return zpin;
    std::vector<Vec> msgs;
    for (NodeId other : g_.variables()[zv].factors) {
      auto it = cat_msgs_.find({other, zv});
      if (it != cat_msgs_.end()) msgs.push_back(it->second);
    }
    Vec zbar = product_message(msgs, g_.variables()[zv].rows);
    beliefs_[zv] = Belief(Categorical(ProbVector(zbar)));
    return zbar;
  };

  if (mode.clamped) {
    const Vec xhat = onehot_vec(mode.clamp_index, g_.variables()[f.obs_var()].rows);
    const Mat barlogA = bA.log_a_bar();
    if (!z_pinned)
      cat_msgs_[{fi, zv}] = softmax(Vec(barlogA.row(mode.clamp_index).transpose())).entries();
    const Vec zbar = refresh_z_belief();
    if (c_learned) dir_msgs_[{fi, cv}] = Mat(Vec(xhat.array() + 1.0));
    if (a_learned) dir_msgs_[{fi, Av}] = xhat * zbar.transpose() + Mat::Ones(xhat.size(), zbar.size());
    st.q_x = Categorical(ProbVector(xhat));
    st.incoming_d = z_pinned ? zpin : cavity(zv, fi);
    st.nu = zbar;
    return;
  }

  if (mode.substituted) {
    const Mat abar = bA.a_bar();
    const Vec hbar = bA.h_bar();
    Vec zbar;
    if (z_pinned) {
      zbar = zpin;
      st.incoming_d = zpin;
    } else {
      const Vec d = cavity(zv, fi);
      NewtonResult res = message_to_state_newton(d, abar, hbar, blc, cfg_.newton);
      zbar = res.zbar;
      cat_msgs_[{fi, zv}] = res.message.p.entries();
      beliefs_[zv] = Belief(res.marginal);
      st.incoming_d = d;
    }
    st.nu = zbar;
    st.q_x = q_x_update(abar, zbar);
    beliefs_[f.obs_var()] = Belief(Categorical(st.q_x));
    if (a_learned) log_msgs_[fi] = log_message_to_matrix(zbar, blc, abar);
    if (c_learned) dir_msgs_[{fi, cv}] = Mat(message_to_goal(abar, zbar).alpha());
    return;
  }

  // Free observation marginal: plain variational updates on the facing pair.
  const Mat barlogA = bA.log_a_bar();
  const Vec z_cur = z_pinned ? zpin : beliefs_[zv].mean_vec();
  const Vec qx = softmax(Vec(barlogA * z_cur + blc)).entries();
  aux_x_[fi] = ProbVector(qx);
  beliefs_[f.obs_var()] = Belief(Categorical(ProbVector(qx)));
  if (!z_pinned)
    cat_msgs_[{fi, zv}] = softmax(Vec(barlogA.transpose() * qx)).entries();
  const Vec zbar = refresh_z_belief();
  if (c_learned) dir_msgs_[{fi, cv}] = Mat(Vec(qx.array() + 1.0));
  if (a_learned) dir_msgs_[{fi, Av}] = qx * zbar.transpose() + Mat::Ones(qx.size(), zbar.size());
  st.q_x = Categorical(ProbVector(qx));
  st.incoming_d = z_pinned ? zpin : cavity(zv, fi);
  st.nu = zbar;
}

void InferenceRun::refresh_state_beliefs() {
  for (VarId v : g_.chain_order()) {
    if (pinned(v, nullptr)) continue;
    // Variables owned by a substituted composite carry the stationary
    // marginal set during the composite update.
    bool owned = false;
    for (NodeId fi : g_.variables()[v].factors) {
      auto it = composite_modes_.find(fi);
      if (it != composite_modes_.end() && it->second.substituted && !it->second.clamped &&
          g_.factors()[fi].state_var() == v)
        owned = true;
    }
    if (owned) continue;
    std::vector<Vec> msgs;
    for (NodeId fi : g_.variables()[v].factors) {
      auto it = cat_msgs_.find({fi, v});
      if (it != cat_msgs_.end()) msgs.push_back(it->second);
    }
    beliefs_[v] = Belief(Categorical(ProbVector(product_message(msgs, g_.variables()[v].rows))));
  }
}

void InferenceRun::sweep() {
  for (const auto& step : schedule_) {
    switch (step.rule) {
      case UpdateRule::ParamExpectations:
        refresh_parameters();
        break;
      case UpdateRule::TransitionForward:
        transition_forward(step.factor);
        break;
      case UpdateRule::TransitionBackward:
        transition_backward(step.factor);
        break;
      case UpdateRule::CompositeUpdate:
        composite_update(step.factor);
        break;
    }
  }
  refresh_state_beliefs();
  ++sweeps_run_;
}

Marginals InferenceRun::marginals() const {
  Marginals m;
  m.var = beliefs_;
  for (NodeId fi = 0; fi < static_cast<NodeId>(g_.factors().size()); ++fi) {
    const auto& f = g_.factors()[fi];
    if (f.kind != FactorKind::Transition) continue;
    const Mat& B = bound_matrix(f);
    const Vec mu_src = cavity(f.vars[0], fi);
    const Vec mu_dst = cavity(f.vars[1], fi);
    Mat pair(B.rows(), B.cols());
    for (Eigen::Index c = 0; c < B.cols(); ++c)
      for (Eigen::Index r = 0; r < B.rows(); ++r) pair(r, c) = mu_src[c] * B(r, c) * mu_dst[r];
    double z = pair.sum();
    if (!(z > 0.0)) throw std::runtime_error("marginals: degenerate pair belief at '" + f.name + "'");
    pair /= z;
    m.transition_pair[fi] = std::move(pair);
  }
  for (const auto& [fi, qx] : aux_x_) m.aux_x[fi] = qx;
  return m;
}

double InferenceRun::objective_nats() const {
  return free_energy(g_, cs_, marginals(), controls_);
}

Dirichlet InferenceRun::posterior_dirichlet(const std::string& name) const {
  const Belief& b = belief(name);
  if (!b.is_dirichlet())
    throw std::logic_error("posterior_dirichlet: belief over '" + name +
                           "' is not in conjugate form");
  return b.dirichlet();
}

std::vector<Policy> enumerate_policies(int alphabet, int horizon) {
  if (alphabet < 1 || horizon < 0)
    throw std::invalid_argument("enumerate_policies: invalid arguments");
  std::size_t count = 1;
  for (int i = 0; i < horizon; ++i) count *= static_cast<std::size_t>(alphabet);
  std::vector<Policy> out;
  out.reserve(count);
  for (std::size_t idx = 0; idx < count; ++idx) {
    Policy p;
    p.controls.resize(horizon);
    std::size_t rem = idx;
    for (int k = horizon - 1; k >= 0; --k) {
      p.controls[k] = static_cast<int>(rem % alphabet);
      rem /= alphabet;
    }
    out.push_back(std::move(p));
  }
  return out;
}

PolicyEvaluation evaluate_policy(const FactorGraph& g, const ConstraintSet& cs,
                                 const std::vector<int>& controls_prefix, const Policy& policy,
                                 const EngineConfig& cfg, std::uint64_t seed) {
  PolicyEvaluation ev;
  ev.policy = policy;
  std::vector<int> controls = controls_prefix;
  controls.insert(controls.end(), policy.controls.begin(), policy.controls.end());
  try {
    InferenceRun run(g, cs, controls, cfg, seed);
    bool finite = true;
    for (int s = 0; s < cfg.sweeps; ++s) {
      run.sweep();
      double v = to_bits(run.objective_nats());
      ev.gfe_trace.push_back(v);
      if (!std::isfinite(v)) finite = false;
    }
    if (finite) {
      int from = std::min(cfg.burn_in, cfg.sweeps - 1);
      double sum = 0.0;
      for (int s = from; s < cfg.sweeps; ++s) sum += ev.gfe_trace[s];
      ev.score = sum / static_cast<double>(cfg.sweeps - from);
      ev.converged = true;
    }
  } catch (const NewtonDivergence&) {
    ev.converged = false;
  } catch (const std::domain_error&) {
    ev.converged = false;
  }
  return ev;
}

std::size_t select_policy(const std::vector<PolicyEvaluation>& evals,
                          const std::vector<double>& log_prior) {
  if (evals.empty()) throw std::invalid_argument("select_policy: no evaluations");
  if (!log_prior.empty() && log_prior.size() != evals.size())
    throw std::invalid_argument("select_policy: prior length mismatch");
  constexpr double ln2 = 0.6931471805599453;
  std::size_t best = evals.size();
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < evals.size(); ++i) {
    if (!std::isfinite(evals[i].score)) continue;
    double val = (log_prior.empty() ? 0.0 : log_prior[i]) - evals[i].score * ln2;
    if (val > best_val) {
      best_val = val;
      best = i;
    }
  }
  if (best == evals.size())
    throw std::runtime_error("select_policy: every policy scored non-finite");
  return best;
}

VmpResult run_vmp(InferenceRun& run, const EngineConfig& cfg) {
  VmpResult res;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < cfg.vmp_sweeps; ++i) {
    run.sweep();
    res.objective_nats = run.objective_nats();
    ++res.sweeps;
    if (i > 0 && std::abs(res.objective_nats - prev) < cfg.vmp_tol) {
      res.converged = true;
      break;
    }
    prev = res.objective_nats;
  }
  return res;
}

}  // namespace actinf
