#pragma once

#include "actinf/engine.hpp"

#include <array>
#include <optional>

namespace actinf {
namespace tmaze {

// Index conventions, shared by the environment and the agent model:
//   positions  (O, L, R, C) = 0..3
//   rewards    (RL, RR)     = 0..1,  state index = 2 * position + reward
//   outcomes   (CL, CR, RW, NR) = 0..3, observation index = 4 * outcome + position
inline constexpr int kPositions = 4;
inline constexpr int kRewards = 2;
inline constexpr int kOutcomes = 4;
inline constexpr int kStates = kPositions * kRewards;
inline constexpr int kObservations = kOutcomes * kPositions;
inline constexpr int kMoves = 2;  // two moves per trial

enum Position : int { O = 0, L = 1, R = 2, C = 3 };
enum Outcome : int { CL = 0, CR = 1, RW = 2, NR = 3 };

const char* position_label(int p);
const char* outcome_label(int o);

struct Observation {
  int outcome = 0;
  int position = 0;
  int index() const { return kPositions * outcome + position; }
  static Observation from_index(int idx) { return {idx / kPositions, idx % kPositions}; }
};

struct MazeState {
  int position = O;
  int reward_arm = 0;  // 0 = RL, 1 = RR
  bool forced_return = false;
};

// One environment transition: moves to the requested position (overridden to
// O after an arm visit) and samples the outcome from the conditional table
// with reward probability alpha.
Observation env_step(MazeState& state, int action, std::mt19937_64& rng, double alpha);

// Model ingredients.
Mat table3_matrix(double alpha);              // ground-truth observation matrix, 16x8
Mat observation_prior_alpha(double eps);      // A_0 with informative O-block, 16x8
std::vector<Mat> transition_family();         // B_O, B_L, B_R, B_C, each 8x8
Vec state_prior();                            // d = (1,0,0,0) (x) (0.5,0.5)
Vec goal_statistic(double utility);           // softmax((0,0,c,-c) (x) (1,1,1,1))

// Bargaining extension: state doubles with a bargain flag (CV first block,
// NC second), the observation matrix concatenates the offer-dependent and
// full-share tables, and visiting C switches NC to CV.
Mat bargain_matrix(double offer);             // [A(offer) A(1)], 16x16
std::vector<Mat> bargain_transition_family(); // 16x16
Vec bargain_state_prior();                    // (0,1) (x) d

struct AgentModelOptions {
  Vec d;
  std::vector<Mat> transitions;
  std::optional<Mat> a_prior_alpha;  // learned observation matrix
  std::optional<Mat> a_clamp;        // known observation matrix
  std::optional<Vec> c_fixed;                  // fixed goal statistic
  std::optional<std::array<Vec, kMoves>> c_prior_alpha;  // learned goals
};

// Declarative two-slice goal-constrained model.
ModelSpec build_agent_model(const AgentModelOptions& opts);

struct TrialRecord {
  int trial = 0;
  std::array<int, kMoves> actions{};
  std::array<int, kMoves> observations{};
  bool win = false;
  std::array<double, kMoves + 1> free_energy_bits{};  // selected-policy scores, then learning pass
  std::vector<double> first_move_scores;              // per-policy scores at t=1
  Mat a_posterior_alpha;                              // empty unless A is learned
  std::array<Vec, kMoves> c_posterior_alpha;          // empty unless goals are learned
};

struct ExperimentConfig {
  int trials = 100;
  int runs = 20;
  double alpha = 0.9;
  double utility = 2.0;
  bool gfe = true;        // substitution constraints on future observations
  bool known_a = false;   // clamp the observation matrix to the ground truth
  double eps_a = 0.1;
  double eps_c = 0.1;
  int offer_levels = 5;
  EngineConfig engine;
  std::uint64_t seed = 1;
};

// S chained perception-action-learning trials of a single agent.
std::vector<TrialRecord> run_experiment(const ExperimentConfig& cfg, int run_index = 0);

struct AggregateResult {
  std::vector<int> wins_per_run;
  std::vector<int> ideal_wins_per_run;
  std::vector<double> win_mean_per_trial;
  std::vector<double> ideal_win_mean_per_trial;
};

// R independent runs plus the known-matrix reference agent on the same
// environment streams.
AggregateResult run_aggregate(const ExperimentConfig& cfg);

struct GoalLearningResult {
  std::vector<TrialRecord> records;
  std::array<Vec, kMoves> c0;                    // initial goal parameters
  std::vector<std::array<Vec, kMoves>> c_alpha;  // per-trial posteriors
};

// Goal-parameter learning with the observation matrix clamped to the truth.
GoalLearningResult run_goal_learning(const ExperimentConfig& cfg, int run_index = 0);

struct BargainTrialRecord {
  int trial = 0;
  std::vector<double> offer_scores;  // seller free energy per level, bits
  int offered_level = 0;
  double offer_value = 0.0;
  bool accepted = false;
  TrialRecord buyer;
};

struct BargainResult {
  std::vector<double> levels;
  std::vector<BargainTrialRecord> trials;
};

// Nested perception-action cycle: the seller prices the cue, the buyer runs a
// full maze trial, and the cue-visit decision feeds the seller's posterior.
BargainResult run_bargaining(const ExperimentConfig& cfg, int run_index = 0);

}  // namespace tmaze
}  // namespace actinf
