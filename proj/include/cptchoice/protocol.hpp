#pragma once

// Discrete-event replica of the blockwise reaching protocol: pre-generated
// robot-action sequences per block, blocks that end after a fixed number of
// successful reaches, two rounds over the perturbation levels, synthetic
// agents, and force-trace classification of the human's action.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cptchoice/model.hpp"
#include "cptchoice/random.hpp"

namespace cptchoice {

enum class BlockOrder { Ascending, Descending, RandomizedPerTrial };

std::string_view to_string(BlockOrder order);
BlockOrder parse_block_order(std::string_view s);

struct ProtocolConfig {
  std::vector<double> levels{0.1, 0.3, 0.5, 0.7, 0.9};
  int successes_per_block = 10;
  int rounds = 2;
  BlockOrder order = BlockOrder::Ascending;
  double movement_window_s = 0.5;
  double target_radius_cm = 8.0;
  double target_distance_cm = 25.0;
  double force_threshold_n = 10.0;
  double pre_go_window_s = 1.0;
  double calibration_factor = 0.8;
  double rest_between_blocks_s = 30.0;
  double countdown_s = 3.0;
  double reset_s = 1.0;
  double force_sample_rate_hz = 100.0;
  int max_trials_per_block = 1000;
  bool record_force_traces = false;

  void validate() const;
  /// Level order for one round (ascending or descending; the randomized
  /// order reuses the ascending block numbering).
  std::vector<double> round_levels() const;
};

struct ForceTrace {
  double sample_rate_hz = 100.0;
  std::vector<double> samples;  // newtons
  std::size_t go_index = 0;     // sample at which "Go" is signalled
};

struct TrialRecord {
  int round = 1;  // 1-based
  int block = 1;  // 1-based position within the round
  double p_r = 0.0;
  RobotAction robot_action = RobotAction::RA1;
  HumanAction human_action = HumanAction::HA1;
  bool success = false;
  std::int64_t chosen_at_ms = 0;
  std::uint64_t seed = 0;  // seed of the block's robot-action sequence
  std::optional<ForceTrace> force_trace;
};

struct BlockSeed {
  int round = 1;
  int block = 1;
  double p_r = 0.0;
  std::uint64_t seed = 0;
};

struct SessionLog {
  std::string participant_id;
  BlockOrder order = BlockOrder::Ascending;
  ProtocolConfig config;
  std::vector<TrialRecord> trials;
  std::vector<BlockSeed> seeds;
};

// Synthetic agents --------------------------------------------------------

struct FixedAgent {
  enum class Kind { AlwaysHA1, AlwaysHA2, StepThreshold };
  Kind kind = Kind::AlwaysHA2;
  double threshold = 0.5;  // StepThreshold: HA2 iff pR >= threshold
};

struct CptAgent {
  CptParams params;
  PayoffSpec payoff;
};

struct BlrAgent {
  BlrParams params;
};

struct AgentSpec {
  std::variant<FixedAgent, CptAgent, BlrAgent> policy;
  std::uint64_t seed = 0;

  static AgentSpec always_ha1() { return {FixedAgent{FixedAgent::Kind::AlwaysHA1, 0.0}}; }
  static AgentSpec always_ha2() { return {FixedAgent{FixedAgent::Kind::AlwaysHA2, 0.0}}; }
  static AgentSpec step(double threshold) { return {FixedAgent{FixedAgent::Kind::StepThreshold, threshold}}; }
  static AgentSpec cpt(const CptParams& p, const PayoffSpec& payoff = {}) { return {CptAgent{p, payoff}}; }
  static AgentSpec blr(const BlrParams& p) { return {BlrAgent{p}}; }

  /// Probability that the agent compensates at this level.
  double p_compensate(double p_r) const;
  void validate() const;
};

/// Raised when a block cannot reach its success quota within the trial budget.
class UnfinishableBlock : public std::runtime_error {
 public:
  UnfinishableBlock(double p_r, std::uint64_t seed, int budget);
  double p_r() const { return p_r_; }
  std::uint64_t seed() const { return seed_; }

 private:
  double p_r_;
  std::uint64_t seed_;
};

// Operations --------------------------------------------------------------

/// i.i.d. robot actions: RA2 with probability pR, deterministic in `seed`.
std::vector<RobotAction> generate_ra_sequence(double p_r, std::uint64_t seed, std::size_t max_len = 1000);

/// HA2 always succeeds; HA1 succeeds only when the robot assists.
bool outcome(HumanAction h, RobotAction r);

/// Runs one block until `successes_per_block` successes. Trials carry
/// round/block = 1 and chosen_at_ms relative to the block start.
std::vector<TrialRecord> simulate_block(const AgentSpec& agent, double p_r, const ProtocolConfig& config,
                                        std::uint64_t seed);

/// Seed for the robot-action sequence of (round, block) in a session.
std::uint64_t block_seed(std::uint64_t session_seed, int round, int block);

/// Step-wise trial loop shared by the simulator and the interactive service.
/// The caller supplies the human action; the engine owns the pre-generated
/// robot actions, success quotas, block ordering and the seed registry.
class SessionEngine {
 public:
  struct Step {
    TrialRecord trial;
    bool block_done = false;
    bool round_done = false;
    bool session_done = false;
  };

  SessionEngine(const ProtocolConfig& config, std::uint64_t seed);

  bool done() const { return done_; }
  int round() const { return round_; }
  /// Block and level the next trial belongs to (valid while !done()).
  int block() const;
  double p_r() const;
  std::uint64_t block_seed() const;
  int successes_in_block() const;
  /// Index of the next trial within its block (0-based).
  std::size_t trial_in_block() const;
  int blocks_completed() const { return blocks_completed_; }
  const std::vector<BlockSeed>& seeds() const { return seeds_; }
  const ProtocolConfig& config() const { return config_; }

  /// Resolves the pending trial against the next robot action.
  Step commit(HumanAction h, std::int64_t chosen_at_ms);

 private:
  struct Level {
    std::vector<RobotAction> sequence;
    std::size_t next = 0;
    int successes = 0;
    std::uint64_t seed = 0;
    double p_r = 0.0;
  };
  void start_round();
  void pick();

  ProtocolConfig config_;
  std::uint64_t seed_;
  std::vector<double> order_;
  std::vector<Level> levels_;
  std::vector<std::size_t> open_;  // unfinished blocks of this round
  std::size_t current_ = 0;
  int round_ = 1;
  int blocks_completed_ = 0;
  bool done_ = false;
  Rng picker_;
  std::vector<BlockSeed> seeds_;
};

SessionLog simulate_session(const AgentSpec& agent, const ProtocolConfig& config, std::uint64_t seed,
                            const std::string& participant_id = "sim");

/// HA2 iff the mean force over the pre-Go window exceeds the threshold.
HumanAction classify_action(const ForceTrace& trace, const ProtocolConfig& config);

/// Disturbance magnitude for RA2 from the participant's maximum held force.
double calibrate_disturbance(double max_sustained_force_n, const ProtocolConfig& config);

/// Synthetic handle-force recording consistent with the given action.
ForceTrace synthesize_force_trace(HumanAction h, const ProtocolConfig& config, std::uint64_t seed);

/// Nominal duration of one trial (countdown, movement, reset) in milliseconds.
std::int64_t trial_period_ms(const ProtocolConfig& config);

}  // namespace cptchoice
