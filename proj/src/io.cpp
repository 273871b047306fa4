#include "cptchoice/io.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>

namespace cptchoice {

ParseError::ParseError(std::string source, std::size_t line, const std::string& what)
    : std::runtime_error(line > 0 ? source + ":" + std::to_string(line) + ": " + what : source + ": " + what),
      line_(line) {}

// ---------------------------------------------------------------------------

std::string trial_jsonl(const TrialRecord& t, const std::string& participant_id) {
  Json j;
  j["participant_id"] = participant_id;
  j["round"] = t.round;
  j["block"] = t.block;
  j["p_r"] = t.p_r;
  j["robot_action"] = std::string(to_string(t.robot_action));
  j["human_action"] = std::string(to_string(t.human_action));
  j["success"] = t.success;
  j["chosen_at_ms"] = t.chosen_at_ms;
  j["seed"] = t.seed;
  return j.dump();
}

void write_session_jsonl(std::ostream& out, const SessionLog& log) {
  for (const auto& t : log.trials) out << trial_jsonl(t, log.participant_id) << '\n';
}

namespace {

struct LineReader {
  const std::string& source;
  std::size_t line;

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source, line, what); }

  const Json& field(const Json& j, const char* key) const {
    auto it = j.find(key);
    if (it == j.end()) fail(std::string("missing field '") + key + "'");
    return *it;
  }
  std::string str(const Json& j, const char* key) const {
    const auto& v = field(j, key);
    if (!v.is_string()) fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  }
  std::int64_t integer(const Json& j, const char* key) const {
    const auto& v = field(j, key);
    if (!v.is_number_integer()) fail(std::string("field '") + key + "' must be an integer");
    return v.get<std::int64_t>();
  }
  double number(const Json& j, const char* key) const {
    const auto& v = field(j, key);
    if (!v.is_number()) fail(std::string("field '") + key + "' must be a number");
    return v.get<double>();
  }
};

}  // namespace

std::vector<SessionLog> read_session_jsonl(std::istream& in, const std::string& source) {
  std::vector<SessionLog> logs;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::set<std::tuple<int, int, std::uint64_t>>> seen_blocks;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    LineReader r{source, line_no};
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      r.fail(std::string("invalid JSON (") + e.what() + ")");
    }
    if (!j.is_object()) r.fail("record must be a JSON object");

    TrialRecord t;
    const std::string pid = r.str(j, "participant_id");
    const auto round = r.integer(j, "round");
    const auto block = r.integer(j, "block");
    if (round < 1 || block < 1) r.fail("round and block are 1-based");
    t.round = static_cast<int>(round);
    t.block = static_cast<int>(block);
    t.p_r = r.number(j, "p_r");
    if (!(t.p_r >= 0.0 && t.p_r <= 1.0)) r.fail("p_r must lie in [0, 1]");
    try {
      t.robot_action = parse_robot_action(r.str(j, "robot_action"));
      t.human_action = parse_human_action(r.str(j, "human_action"));
    } catch (const std::invalid_argument& e) {
      r.fail(e.what());
    }
    const auto& success = r.field(j, "success");
    if (!success.is_boolean()) r.fail("field 'success' must be a boolean");
    t.success = success.get<bool>();
    if (t.success != outcome(t.human_action, t.robot_action)) r.fail("success does not match the outcome rule");
    t.chosen_at_ms = r.integer(j, "chosen_at_ms");
    const auto& seed = r.field(j, "seed");
    if (!seed.is_number_unsigned()) r.fail("field 'seed' must be a non-negative integer");
    t.seed = seed.get<std::uint64_t>();

    auto [it, fresh] = index.try_emplace(pid, logs.size());
    if (fresh) {
      logs.emplace_back();
      logs.back().participant_id = pid;
    }
    auto& log = logs[it->second];
    if (seen_blocks[pid].emplace(t.round, t.block, t.seed).second) {
      log.seeds.push_back({t.round, t.block, t.p_r, t.seed});
    }
    log.trials.push_back(std::move(t));
  }
  return logs;
}

std::vector<SessionLog> read_session_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_session_jsonl(in, path.string());
}

// ---------------------------------------------------------------------------

Json config_to_json(const ProtocolConfig& c) {
  Json j;
  j["levels"] = c.levels;
  j["successesPerBlock"] = c.successes_per_block;
  j["rounds"] = c.rounds;
  j["order"] = std::string(to_string(c.order));
  j["movementWindow"] = c.movement_window_s;
  j["targetRadius"] = c.target_radius_cm;
  j["targetDistance"] = c.target_distance_cm;
  j["forceThreshold"] = c.force_threshold_n;
  j["preGoWindow"] = c.pre_go_window_s;
  j["calibrationFactor"] = c.calibration_factor;
  j["restBetweenBlocks"] = c.rest_between_blocks_s;
  j["countdown"] = c.countdown_s;
  j["reset"] = c.reset_s;
  j["forceSampleRate"] = c.force_sample_rate_hz;
  j["maxTrialsPerBlock"] = c.max_trials_per_block;
  j["recordForceTraces"] = c.record_force_traces;
  return j;
}

ProtocolConfig config_from_json(const Json& doc) {
  if (!doc.is_object()) throw ParseError("config", 0, "config must be a JSON object");
  ProtocolConfig c;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "levels") c.levels = value.get<std::vector<double>>();
      else if (key == "successesPerBlock") c.successes_per_block = value.get<int>();
      else if (key == "rounds") c.rounds = value.get<int>();
      else if (key == "order") c.order = parse_block_order(value.get<std::string>());
      else if (key == "movementWindow") c.movement_window_s = value.get<double>();
      else if (key == "targetRadius") c.target_radius_cm = value.get<double>();
      else if (key == "targetDistance") c.target_distance_cm = value.get<double>();
      else if (key == "forceThreshold") c.force_threshold_n = value.get<double>();
      else if (key == "preGoWindow") c.pre_go_window_s = value.get<double>();
      else if (key == "calibrationFactor") c.calibration_factor = value.get<double>();
      else if (key == "restBetweenBlocks") c.rest_between_blocks_s = value.get<double>();
      else if (key == "countdown") c.countdown_s = value.get<double>();
      else if (key == "reset") c.reset_s = value.get<double>();
      else if (key == "forceSampleRate") c.force_sample_rate_hz = value.get<double>();
      else if (key == "maxTrialsPerBlock") c.max_trials_per_block = value.get<int>();
      else if (key == "recordForceTraces") c.record_force_traces = value.get<bool>();
      else throw ParseError("config", 0, "unknown key '" + key + "'");
    }
  } catch (const Json::exception& e) {
    throw ParseError("config", 0, e.what());
  }
  c.validate();
  return c;
}

ProtocolConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  return config_from_json(doc);
}

// ---------------------------------------------------------------------------

Json to_json(const CptParams& p) {
  return Json{{"alpha", p.alpha}, {"beta", p.beta}, {"C", p.C}, {"lambda", p.lambda}};
}

Json to_json(const BlrParams& p) { return Json{{"beta0", p.beta0}, {"beta1", p.beta1}}; }

Json to_json(const FitResult& fit) {
  Json j;
  j["params"] = to_json(fit.params);
  j["nll"] = fit.nll;
  j["rmse"] = fit.rmse;
  j["restarts"] = fit.restarts;
  Json optima = Json::array();
  for (const auto& o : fit.local_optima) optima.push_back(Json{{"params", to_json(o.params)}, {"nll", o.nll}});
  j["localOptima"] = std::move(optima);
  j["converged"] = fit.converged;
  j["identifiable"] = fit.identifiable;
  j["projectedGradientNorm"] = fit.projected_gradient_norm;
  j["ridgeTieBreak"] = fit.ridge_tie_break;
  return j;
}

namespace {

Json pair_json(const std::array<double, 2>& v) { return Json{{"beta0", v[0]}, {"beta1", v[1]}}; }

}  // namespace

Json to_json(const PosteriorSummary& post) {
  Json j;
  j["mean"] = to_json(post.mean);
  j["sd"] = pair_json(post.sd);
  j["ci95Width"] = post.diagnostics_passed ? pair_json(post.ci95_width) : Json(nullptr);
  j["rHat"] = pair_json(post.r_hat);
  j["effectiveSampleSize"] = pair_json(post.ess);
  j["chains"] = post.chains;
  j["drawsPerChain"] = post.draws_per_chain;
  j["divergences"] = post.divergences;
  j["diagnosticsPassed"] = post.diagnostics_passed;
  j["sampler"] = post.sampler;
  return j;
}

Json to_json(const EmpiricalPoint& point) {
  return Json{{"round", point.round}, {"pR", point.p_r}, {"trials", point.trials}, {"p2", point.p2}};
}

Json to_json(const ParticipantSummary& s, const ClusterRule& rule) {
  Json j;
  j["participantId"] = s.participant_id;
  Json empirical = Json::array();
  for (const auto& e : s.empirical) empirical.push_back(to_json(e));
  j["empirical"] = std::move(empirical);
  j["cptFit"] = to_json(s.cpt_fit);
  j["blrMap"] = to_json(s.blr_map);
  j["blrRmse"] = s.blr_rmse;
  j["blrPosterior"] = s.blr_posterior ? to_json(*s.blr_posterior) : Json(nullptr);
  j["cluster"] = s.cluster ? Json(std::string(to_string(*s.cluster))) : Json(nullptr);
  j["clusterRule"] = rule.describe();
  return j;
}

Json to_json(std::span<const CurvePoint> curve) {
  Json out = Json::array();
  for (const auto& pt : curve) out.push_back(Json{{"pR", pt.p_r}, {"p2", pt.p2}});
  return out;
}

CptParams cpt_params_from_json(const Json& j) {
  return CptParams{j.at("alpha").get<double>(), j.at("beta").get<double>(), j.at("C").get<double>(),
                   j.at("lambda").get<double>()};
}

BlrParams blr_params_from_json(const Json& j) {
  return BlrParams{j.at("beta0").get<double>(), j.at("beta1").get<double>()};
}

}  // namespace cptchoice
