#include "cptchoice/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace cptchoice {
namespace {

constexpr std::uint64_t kAgentStream = 0xa6e47;
constexpr std::uint64_t kForceStream = 0xf04ce;
constexpr std::uint64_t kOrderStream = 0x0d3e7;

class AgentPolicy {
 public:
  AgentPolicy(const AgentSpec& spec, std::uint64_t stream_seed)
      : spec_(spec), rng_(derive_seed(stream_seed, spec.seed ^ kAgentStream)) {}

  HumanAction choose(double p_r) {
    // Draw even for deterministic agents so the stream position depends only
    // on the trial count.
    const double u = rng_.uniform();
    return u < spec_.p_compensate(p_r) ? HumanAction::HA2 : HumanAction::HA1;
  }

 private:
  const AgentSpec& spec_;
  Rng rng_;
};

std::int64_t to_ms(double seconds) { return static_cast<std::int64_t>(std::llround(seconds * 1000.0)); }

std::size_t window_samples(const ProtocolConfig& config, double rate) {
  return static_cast<std::size_t>(std::llround(config.pre_go_window_s * rate));
}

}  // namespace

std::string_view to_string(BlockOrder order) {
  switch (order) {
    case BlockOrder::Ascending: return "ascending";
    case BlockOrder::Descending: return "descending";
    case BlockOrder::RandomizedPerTrial: return "randomized";
  }
  return "ascending";
}

BlockOrder parse_block_order(std::string_view s) {
  if (s == "ascending") return BlockOrder::Ascending;
  if (s == "descending") return BlockOrder::Descending;
  if (s == "randomized" || s == "random") return BlockOrder::RandomizedPerTrial;
  throw std::invalid_argument("unknown block order '" + std::string(s) + "'");
}

void ProtocolConfig::validate() const {
  if (levels.empty()) throw std::invalid_argument("protocol needs at least one level");
  for (double p : levels) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("protocol levels must lie strictly inside (0, 1)");
  }
  if (successes_per_block < 1) throw std::invalid_argument("successes_per_block must be >= 1");
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (!(calibration_factor > 0.0 && calibration_factor <= 1.0)) {
    throw std::invalid_argument("calibration_factor must lie in (0, 1]");
  }
  if (!(pre_go_window_s > 0.0) || !(force_sample_rate_hz > 0.0)) {
    throw std::invalid_argument("force window and sample rate must be positive");
  }
  if (max_trials_per_block < successes_per_block) {
    throw std::invalid_argument("max_trials_per_block below the success quota");
  }
}

std::vector<double> ProtocolConfig::round_levels() const {
  std::vector<double> out = levels;
  std::sort(out.begin(), out.end());
  if (order == BlockOrder::Descending) std::reverse(out.begin(), out.end());
  return out;
}

double AgentSpec::p_compensate(double p_r) const {
  return std::visit(
      [p_r](const auto& policy) -> double {
        using T = std::decay_t<decltype(policy)>;
        if constexpr (std::is_same_v<T, FixedAgent>) {
          switch (policy.kind) {
            case FixedAgent::Kind::AlwaysHA1: return 0.0;
            case FixedAgent::Kind::AlwaysHA2: return 1.0;
            case FixedAgent::Kind::StepThreshold: return p_r >= policy.threshold ? 1.0 : 0.0;
          }
          return 0.0;
        } else if constexpr (std::is_same_v<T, CptAgent>) {
          return cpt_choice_prob(p_r, policy.params, policy.payoff);
        } else {
          return blr_choice_prob(p_r, policy.params);
        }
      },
      policy);
}

void AgentSpec::validate() const {
  if (const auto* fixed = std::get_if<FixedAgent>(&policy)) {
    if (fixed->kind == FixedAgent::Kind::StepThreshold && !(fixed->threshold >= 0.0 && fixed->threshold <= 1.0)) {
      throw std::invalid_argument("step threshold must lie in [0, 1]");
    }
  } else if (const auto* cpt = std::get_if<CptAgent>(&policy)) {
    if (!(cpt->params.alpha > 0.0 && cpt->params.beta > 0.0 && cpt->params.lambda > 0.0)) {
      throw std::invalid_argument("CPT agent needs positive alpha, beta, lambda");
    }
    cpt->payoff.validate();
  } else {
    const auto& blr = std::get<BlrAgent>(policy);
    if (!std::isfinite(blr.params.beta0) || !std::isfinite(blr.params.beta1)) {
      throw std::invalid_argument("BLR agent parameters must be finite");
    }
  }
}

UnfinishableBlock::UnfinishableBlock(double p_r, std::uint64_t seed, int budget)
    : std::runtime_error("block at pR=" + std::to_string(p_r) + " (seed " + std::to_string(seed) +
                         ") did not finish within " + std::to_string(budget) + " trials"),
      p_r_(p_r),
      seed_(seed) {}

std::vector<RobotAction> generate_ra_sequence(double p_r, std::uint64_t seed, std::size_t max_len) {
  checked_probability(p_r);
  Rng rng(seed);
  std::vector<RobotAction> seq(max_len);
  for (auto& ra : seq) ra = rng.bernoulli(p_r) ? RobotAction::RA2 : RobotAction::RA1;
  return seq;
}

bool outcome(HumanAction h, RobotAction r) {
  return h == HumanAction::HA2 || r == RobotAction::RA1;
}

std::int64_t trial_period_ms(const ProtocolConfig& config) {
  return to_ms(config.countdown_s + config.movement_window_s + config.reset_s);
}

std::vector<TrialRecord> simulate_block(const AgentSpec& agent, double p_r, const ProtocolConfig& config,
                                        std::uint64_t seed) {
  const auto sequence = generate_ra_sequence(p_r, seed, static_cast<std::size_t>(config.max_trials_per_block));
  AgentPolicy policy(agent, seed);
  std::vector<TrialRecord> trials;
  int successes = 0;
  const std::int64_t period = trial_period_ms(config);
  for (std::size_t i = 0; i < sequence.size() && successes < config.successes_per_block; ++i) {
    TrialRecord t;
    t.p_r = p_r;
    t.robot_action = sequence[i];
    t.seed = seed;
    t.human_action = policy.choose(p_r);
    if (config.record_force_traces) {
      ForceTrace trace = synthesize_force_trace(t.human_action, config, derive_seed(seed ^ kForceStream, i));
      t.human_action = classify_action(trace, config);
      t.force_trace = std::move(trace);
    }
    t.success = outcome(t.human_action, t.robot_action);
    t.chosen_at_ms = static_cast<std::int64_t>(i) * period + to_ms(config.countdown_s);
    if (t.success) ++successes;
    trials.push_back(std::move(t));
  }
  if (successes < config.successes_per_block) throw UnfinishableBlock(p_r, seed, config.max_trials_per_block);
  return trials;
}

std::uint64_t block_seed(std::uint64_t session_seed, int round, int block) {
  return derive_seed(session_seed, (static_cast<std::uint64_t>(round) << 32) | static_cast<std::uint32_t>(block));
}

SessionEngine::SessionEngine(const ProtocolConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), order_(config.round_levels()), picker_(0) {
  config_.validate();
  start_round();
}

void SessionEngine::start_round() {
  levels_.clear();
  open_.clear();
  for (std::size_t b = 0; b < order_.size(); ++b) {
    const int block = static_cast<int>(b) + 1;
    const std::uint64_t s = cptchoice::block_seed(seed_, round_, block);
    seeds_.push_back({round_, block, order_[b], s});
    levels_.push_back({generate_ra_sequence(order_[b], s, static_cast<std::size_t>(config_.max_trials_per_block)),
                       0, 0, s, order_[b]});
    open_.push_back(b);
  }
  picker_ = Rng(derive_seed(seed_ ^ kOrderStream, static_cast<std::uint64_t>(round_)));
  pick();
}

void SessionEngine::pick() {
  // Sequential orders always work on the first unfinished block; the
  // randomized order draws a fresh one for every trial.
  if (config_.order == BlockOrder::RandomizedPerTrial) {
    current_ = open_[picker_.below(open_.size())];
  } else {
    current_ = open_.front();
  }
}

int SessionEngine::block() const { return static_cast<int>(current_) + 1; }
double SessionEngine::p_r() const { return levels_[current_].p_r; }
std::uint64_t SessionEngine::block_seed() const { return levels_[current_].seed; }
int SessionEngine::successes_in_block() const { return levels_[current_].successes; }
std::size_t SessionEngine::trial_in_block() const { return levels_[current_].next; }

SessionEngine::Step SessionEngine::commit(HumanAction h, std::int64_t chosen_at_ms) {
  if (done_) throw std::logic_error("session already complete");
  auto& level = levels_[current_];
  if (level.next >= level.sequence.size()) {
    throw UnfinishableBlock(level.p_r, level.seed, config_.max_trials_per_block);
  }
  Step step;
  step.trial.round = round_;
  step.trial.block = block();
  step.trial.p_r = level.p_r;
  step.trial.robot_action = level.sequence[level.next++];
  step.trial.human_action = h;
  step.trial.success = outcome(h, step.trial.robot_action);
  step.trial.chosen_at_ms = chosen_at_ms;
  step.trial.seed = level.seed;
  if (step.trial.success && ++level.successes == config_.successes_per_block) {
    step.block_done = true;
    ++blocks_completed_;
    open_.erase(std::find(open_.begin(), open_.end(), current_));
  }
  if (open_.empty()) {
    step.round_done = true;
    if (round_ == config_.rounds) {
      done_ = true;
      step.session_done = true;
      return step;
    }
    ++round_;
    start_round();
    return step;
  }
  pick();
  return step;
}

SessionLog simulate_session(const AgentSpec& agent, const ProtocolConfig& config, std::uint64_t seed,
                            const std::string& participant_id) {
  config.validate();
  agent.validate();
  SessionLog log;
  log.participant_id = participant_id;
  log.order = config.order;
  log.config = config;

  SessionEngine engine(config, seed);
  // One agent stream per block, keyed by the block's sequence seed, so a
  // block's choices match simulate_block under sequential orders.
  std::map<std::uint64_t, AgentPolicy> policies;
  const std::int64_t period = trial_period_ms(config);
  const std::int64_t rest = to_ms(config.rest_between_blocks_s);
  const bool sequential = config.order != BlockOrder::RandomizedPerTrial;
  std::int64_t clock = 0;
  while (!engine.done()) {
    const std::uint64_t s = engine.block_seed();
    auto it = policies.try_emplace(s, agent, s).first;
    const std::size_t index = engine.trial_in_block();
    HumanAction h = it->second.choose(engine.p_r());
    std::optional<ForceTrace> trace;
    if (config.record_force_traces) {
      trace = synthesize_force_trace(h, config, derive_seed(s ^ kForceStream, index));
      h = classify_action(*trace, config);
    }
    auto step = engine.commit(h, clock + to_ms(config.countdown_s));
    step.trial.force_trace = std::move(trace);
    clock += period;
    if (sequential ? step.block_done : step.round_done) clock += rest;
    log.trials.push_back(std::move(step.trial));
  }
  log.seeds = engine.seeds();
  return log;
}

HumanAction classify_action(const ForceTrace& trace, const ProtocolConfig& config) {
  const std::size_t window = window_samples(config, trace.sample_rate_hz);
  if (window == 0) throw std::invalid_argument("pre-Go window shorter than one sample");
  if (trace.go_index < window || trace.go_index > trace.samples.size()) {
    throw std::invalid_argument("force trace does not cover the pre-Go window");
  }
  const auto first = trace.samples.begin() + static_cast<std::ptrdiff_t>(trace.go_index - window);
  const auto last = trace.samples.begin() + static_cast<std::ptrdiff_t>(trace.go_index);
  const double mean = std::accumulate(first, last, 0.0) / static_cast<double>(window);
  return mean > config.force_threshold_n ? HumanAction::HA2 : HumanAction::HA1;
}

double calibrate_disturbance(double max_sustained_force_n, const ProtocolConfig& config) {
  if (!(max_sustained_force_n > 0.0)) throw std::invalid_argument("maximum sustained force must be positive");
  return config.calibration_factor * max_sustained_force_n;
}

ForceTrace synthesize_force_trace(HumanAction h, const ProtocolConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ForceTrace trace;
  trace.sample_rate_hz = config.force_sample_rate_hz;
  const std::size_t pre = window_samples(config, trace.sample_rate_hz) * 3 / 2;
  const auto post = static_cast<std::size_t>(std::llround(config.movement_window_s * trace.sample_rate_hz));
  trace.go_index = pre;
  trace.samples.resize(pre + post);
  // Noise is bounded so that the window mean stays on the correct side of
  // the threshold for every seed.
  const double hold = 1.5 * config.force_threshold_n;
  const double spread = 0.3 * config.force_threshold_n;
  for (std::size_t i = 0; i < trace.samples.size(); ++i) {
    const double noise = std::clamp(rng.normal() * 0.1 * config.force_threshold_n, -spread, spread);
    trace.samples[i] = h == HumanAction::HA2 ? hold + noise : std::abs(noise);
  }
  return trace;
}

}  // namespace cptchoice
