#include "cli.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cptchoice/io.hpp"
#include "cptchoice/service.hpp"

namespace cptchoice::cli {
namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_numbers(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw UsageError("--theta: '" + item + "' is not a number");
    }
    if (used != item.size() || !std::isfinite(v)) throw UsageError("--theta: '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

AgentSpec make_agent(const std::string& kind, const std::string& theta) {
  const auto values = theta.empty() ? std::vector<double>{} : parse_numbers(theta);
  auto need = [&](std::size_t n, const char* shape) {
    if (values.size() != n) throw UsageError("--agent " + kind + " needs --theta " + shape);
  };
  AgentSpec agent;
  if (kind == "always-ha1") {
    agent = AgentSpec::always_ha1();
  } else if (kind == "always-ha2") {
    agent = AgentSpec::always_ha2();
  } else if (kind == "threshold") {
    need(1, "t");
    agent = AgentSpec::step(values[0]);
  } else if (kind == "cpt") {
    need(4, "alpha,beta,C,lambda");
    agent = AgentSpec::cpt(CptParams{values[0], values[1], values[2], values[3]});
  } else if (kind == "blr") {
    need(2, "beta0,beta1");
    agent = AgentSpec::blr(BlrParams{values[0], values[1]});
  } else {
    throw UsageError("unknown agent '" + kind + "'");
  }
  try {
    agent.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return agent;
}

std::string file_stem(const std::string& id) {
  std::string out = id.empty() ? "participant" : id;
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<SessionLog> read_logs(const std::vector<std::string>& inputs) {
  std::vector<SessionLog> logs;
  for (const auto& path : inputs) {
    auto part = read_session_jsonl(std::filesystem::path(path));
    if (part.empty()) throw std::runtime_error("no trials in " + path);
    for (auto& log : part) logs.push_back(std::move(log));
  }
  return logs;
}

struct SimulateArgs {
  std::string agent;
  std::string theta;
  std::string order = "ascending";
  std::uint64_t seed = 1;
  std::uint64_t agent_seed = 0;
  std::string participant = "sim";
  std::string out = "-";
  std::string config_in;
  std::string config_out;
  int rounds = 0;
};

int do_simulate(const SimulateArgs& a, std::ostream& out) {
  ProtocolConfig config;
  if (!a.config_in.empty()) config = read_config(a.config_in);
  try {
    config.order = parse_block_order(a.order);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.rounds > 0) config.rounds = a.rounds;
  AgentSpec agent = make_agent(a.agent, a.theta);
  agent.seed = a.agent_seed;
  const SessionLog log = simulate_session(agent, config, a.seed, a.participant);
  if (a.out == "-") {
    write_session_jsonl(out, log);
  } else {
    std::ofstream file(a.out, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + a.out);
    write_session_jsonl(file, log);
  }
  if (!a.config_out.empty()) write_file(a.config_out, config_to_json(config).dump(2) + "\n");
  return kOk;
}

struct FitArgs {
  std::vector<std::string> inputs;
  std::string out_dir;
  int starts = 16;
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;
  std::uint64_t seed = 0;
  bool no_posterior = false;
  bool rmse_pooled = false;
  double cluster_max_cost = ClusterRule{}.max_cost;
};

SummaryOptions summary_options(const FitArgs& a) {
  if (a.starts < 1) throw UsageError("--starts must be >= 1");
  if (a.chains < 2) throw UsageError("--chains must be >= 2");
  if (a.warmup < 1 || a.samples < 4) throw UsageError("--warmup/--samples too small");
  SummaryOptions o;
  o.cpt.starts = a.starts;
  o.cpt.seed = a.seed;
  o.cpt.rmse.pooled = a.rmse_pooled;
  o.cluster.max_cost = a.cluster_max_cost;
  if (!a.no_posterior) {
    PosteriorConfig post;
    post.chains = a.chains;
    post.warmup = a.warmup;
    post.samples = a.samples;
    post.seed = a.seed;
    o.posterior = post;
  }
  return o;
}

int do_fit(const FitArgs& a, std::ostream& out) {
  const SummaryOptions options = summary_options(a);
  const auto logs = read_logs(a.inputs);
  std::filesystem::create_directories(a.out_dir);
  const auto grid = uniform_grid();
  for (const auto& log : logs) {
    const ParticipantSummary s = summarize_participant(log, options);
    const std::filesystem::path dir(a.out_dir);
    const std::string stem = file_stem(s.participant_id);
    write_file(dir / (stem + ".json"), to_json(s, options.cluster).dump(2) + "\n");
    write_file(dir / (stem + "_cpt.csv"), curve_csv(curve_export(s.cpt_fit.params, grid)));
    write_file(dir / (stem + "_blr.csv"), curve_csv(curve_export(s.blr_map, grid)));
    out << s.participant_id << ": C=" << s.cpt_fit.params.C << " beta0=" << s.blr_map.beta0
        << " cluster=" << to_string(*s.cluster) << '\n';
  }
  return kOk;
}

struct AnalyzeArgs {
  std::vector<std::string> inputs;
  std::string out = "-";
  std::string csv;
  int starts = 16;
  std::uint64_t seed = 0;
  double cluster_max_cost = ClusterRule{}.max_cost;
};

int do_analyze(const AnalyzeArgs& a, std::ostream& out) {
  if (a.starts < 1) throw UsageError("--starts must be >= 1");
  SummaryOptions options;
  options.cpt.starts = a.starts;
  options.cpt.seed = a.seed;
  options.cluster.max_cost = a.cluster_max_cost;
  const auto logs = read_logs(a.inputs);

  Json doc;
  doc["clusterRule"] = options.cluster.describe();
  Json people = Json::array();
  std::string csv = "participant_id,round,p_r,trials,p2\n";
  for (const auto& log : logs) {
    const ParticipantSummary s = summarize_participant(log, options);
    const ChoiceDataset pooled = build_choice_dataset(log).pooled();
    Json levels = Json::array();
    for (const auto& l : pooled.levels) {
      levels.push_back(Json{{"pR", l.p_r}, {"trials", l.total()}, {"p2", l.empirical_p2()}});
    }
    Json empirical = Json::array();
    for (const auto& e : s.empirical) {
      empirical.push_back(to_json(e));
      std::ostringstream row;
      row << std::setprecision(17) << s.participant_id << ',' << e.round << ',' << e.p_r << ',' << e.trials << ','
          << e.p2 << '\n';
      csv += row.str();
    }
    people.push_back(Json{{"participantId", s.participant_id},
                          {"cluster", std::string(to_string(*s.cluster))},
                          {"cptParams", to_json(s.cpt_fit.params)},
                          {"blrMap", to_json(s.blr_map)},
                          {"pooled", std::move(levels)},
                          {"empirical", std::move(empirical)}});
  }
  doc["participants"] = std::move(people);
  if (a.out == "-") {
    out << doc.dump(2) << '\n';
  } else {
    write_file(a.out, doc.dump(2) + "\n");
  }
  if (!a.csv.empty()) write_file(a.csv, csv);
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Choice models under probabilistic robot perturbation", "cptchoice"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Simulate a session and write its JSONL log");
  simulate->add_option("--agent", sim.agent, "always-ha1 | always-ha2 | threshold | cpt | blr")->required();
  simulate->add_option("--theta", sim.theta, "agent parameters, comma separated");
  simulate->add_option("--order", sim.order, "ascending | descending | randomized");
  simulate->add_option("--seed", sim.seed, "session seed");
  simulate->add_option("--agent-seed", sim.agent_seed, "agent choice stream");
  simulate->add_option("--participant", sim.participant, "participant id written to the log");
  simulate->add_option("--rounds", sim.rounds, "override the number of rounds");
  simulate->add_option("--config", sim.config_in, "protocol config JSON");
  simulate->add_option("--config-out", sim.config_out, "write the effective config JSON here");
  simulate->add_option("--out", sim.out, "output JSONL path, - for stdout");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit both models per participant");
  fit_cmd->add_option("--in", fit.inputs, "JSONL session logs")->required();
  fit_cmd->add_option("--out", fit.out_dir, "output directory")->required();
  fit_cmd->add_option("--starts", fit.starts, "multi-start count for the CPT fit");
  fit_cmd->add_option("--chains", fit.chains, "HMC chains");
  fit_cmd->add_option("--warmup", fit.warmup, "HMC warmup iterations per chain");
  fit_cmd->add_option("--samples", fit.samples, "HMC draws per chain");
  fit_cmd->add_option("--seed", fit.seed, "seed for starts and chains");
  fit_cmd->add_flag("--no-posterior", fit.no_posterior, "skip posterior sampling");
  fit_cmd->add_flag("--rmse-pooled", fit.rmse_pooled, "RMSE over one point per level");
  fit_cmd->add_option("--cluster-max-cost", fit.cluster_max_cost, "C threshold of the always-compensate cluster");

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Empirical P2 tables and cluster labels");
  analyze->add_option("--in", an.inputs, "JSONL session logs")->required();
  analyze->add_option("--out", an.out, "output JSON path, - for stdout");
  analyze->add_option("--csv", an.csv, "also write the empirical table as CSV");
  analyze->add_option("--starts", an.starts, "multi-start count for the CPT fit");
  analyze->add_option("--seed", an.seed, "seed for the starts");
  analyze->add_option("--cluster-max-cost", an.cluster_max_cost, "C threshold of the always-compensate cluster");

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir;
  std::string serve_config;
  auto* serve = app.add_subcommand("serve", "Run the interactive session service");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port");
  serve->add_option("--data-dir", data_dir, "JSONL directory (default: $CPTCHOICE_DATA_DIR)");
  serve->add_option("--config", serve_config, "protocol config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*simulate) return do_simulate(sim, out);
    if (*fit_cmd) return do_fit(fit, out);
    if (*analyze) return do_analyze(an, out);
    if (*serve) {
      auto options = service::options_from_env();
      if (!data_dir.empty()) options.data_dir = data_dir;
      if (!serve_config.empty()) options.config = read_config(serve_config);
      return service::serve(host, port, std::move(options));
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace cptchoice::cli
