#include "cptchoice/service.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>

#include <httplib.h>

namespace cptchoice::service {

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::AwaitingChoice: return "AwaitingChoice";
    case Phase::ShowingOutcome: return "ShowingOutcome";
    case Phase::Rest: return "Rest";
    case Phase::Done: return "Done";
  }
  return "Done";
}

ServiceOptions options_from_env() {
  ServiceOptions options;
  if (const char* dir = std::getenv("CPTCHOICE_DATA_DIR"); dir && *dir) options.data_dir = dir;
  return options;
}

struct SessionManager::Session {
  Session(std::string id_, const ProtocolConfig& config, std::uint64_t seed)
      : id(std::move(id_)), engine(config, seed), started(std::chrono::steady_clock::now()) {}

  std::string id;
  SessionEngine engine;
  SessionLog log;
  Phase phase = Phase::AwaitingChoice;
  std::chrono::steady_clock::time_point started;
  std::optional<std::filesystem::path> log_path;

  std::mutex mutex;
  std::condition_variable fit_cv;
  std::uint64_t fit_requested = 0;
  std::uint64_t fit_completed = 0;
  Json fit_result;
};

namespace {

std::string random_hex() {
  static std::mutex m;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(m);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(gen()));
  return buf;
}

std::uint64_t random_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

Json empty_fit() {
  return Json{{"blocksCompleted", 0}, {"empirical", Json::array()}, {"cpt", nullptr}, {"blr", nullptr}};
}

}  // namespace

SessionManager::SessionManager(ServiceOptions options) : options_(std::move(options)) {
  options_.config.validate();
  if (options_.data_dir) std::filesystem::create_directories(*options_.data_dir);
  worker_ = std::thread([this] { worker_loop(); });
}

SessionManager::~SessionManager() {
  {
    std::lock_guard lock(jobs_mutex_);
    stopping_ = true;
  }
  jobs_cv_.notify_all();
  worker_.join();
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + id + "'");
  return it->second;
}

Json SessionManager::create(const Json& body) {
  if (!body.is_object()) throw ServiceError(400, "request body must be a JSON object");
  ProtocolConfig config = options_.config;
  std::uint64_t seed = 0;
  std::string participant;
  try {
    if (auto it = body.find("order"); it != body.end()) config.order = parse_block_order(it->get<std::string>());
    if (auto it = body.find("seed"); it != body.end() && !it->is_null()) {
      if (!it->is_number_unsigned()) throw ServiceError(400, "seed must be a non-negative integer");
      seed = it->get<std::uint64_t>();
    } else {
      seed = random_seed();
    }
    if (auto it = body.find("participantId"); it != body.end() && !it->is_null()) participant = it->get<std::string>();
  } catch (const Json::exception& e) {
    throw ServiceError(400, e.what());
  } catch (const std::invalid_argument& e) {
    throw ServiceError(400, e.what());
  }

  auto session = std::make_shared<Session>(random_hex(), config, seed);
  session->log.participant_id = participant.empty() ? session->id : participant;
  session->log.order = config.order;
  session->log.config = config;
  session->fit_result = empty_fit();
  if (options_.data_dir) {
    session->log_path = *options_.data_dir / (session->id + ".jsonl");
    std::ofstream cfg(*options_.data_dir / (session->id + ".config.json"));
    cfg << config_to_json(config).dump(2) << '\n';
    std::ofstream touch(*session->log_path, std::ios::app);
  }
  {
    std::lock_guard lock(sessions_mutex_);
    sessions_[session->id] = session;
  }
  return Json{{"sessionId", session->id}, {"participantId", session->log.participant_id},
              {"config", config_to_json(config)}};
}

Json SessionManager::next(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (s->phase == Phase::Done || s->engine.done()) {
    return Json{{"phase", std::string(to_string(Phase::Done))}, {"sessionDone", true}};
  }
  // Reset and the advisory rest both end when the client asks for the next trial.
  s->phase = Phase::AwaitingChoice;
  const auto& config = s->engine.config();
  return Json{{"pR", s->engine.p_r()},
              {"round", s->engine.round()},
              {"block", s->engine.block()},
              {"trialIndex", s->engine.trial_in_block()},
              {"successesSoFar", s->engine.successes_in_block()},
              {"successesNeeded", config.successes_per_block - s->engine.successes_in_block()},
              {"countdownSeconds", config.countdown_s},
              {"phase", std::string(to_string(s->phase))},
              {"sessionDone", false}};
}

Json SessionManager::choice(const std::string& id, const Json& body) {
  if (!body.is_object()) throw ServiceError(400, "request body must be a JSON object");
  HumanAction h;
  std::optional<std::int64_t> hold_ms;
  try {
    h = parse_human_action(body.at("humanAction").get<std::string>());
    if (auto it = body.find("holdMs"); it != body.end() && !it->is_null()) hold_ms = it->get<std::int64_t>();
  } catch (const Json::exception& e) {
    throw ServiceError(400, e.what());
  } catch (const std::invalid_argument& e) {
    throw ServiceError(400, e.what());
  }

  auto s = find(id);
  std::unique_lock lock(s->mutex);
  if (s->phase != Phase::AwaitingChoice) {
    throw ServiceError(409, "choice not expected in phase " + std::string(to_string(s->phase)));
  }
  // A compensate press that was released before the pre-Go window elapsed
  // counts as relaxing.
  if (h == HumanAction::HA2 && hold_ms && *hold_ms < kMinHoldMs) h = HumanAction::HA1;
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - s->started).count();
  SessionEngine::Step step;
  try {
    step = s->engine.commit(h, elapsed);
  } catch (const UnfinishableBlock& e) {
    throw ServiceError(409, e.what());
  }
  if (s->log_path) {
    std::ofstream out(*s->log_path, std::ios::app);
    out << trial_jsonl(step.trial, s->log.participant_id) << '\n';
  }
  s->log.trials.push_back(step.trial);
  s->log.seeds = s->engine.seeds();

  s->phase = step.session_done ? Phase::Done : step.block_done ? Phase::Rest : Phase::ShowingOutcome;
  Json reply{{"robotAction", std::string(to_string(step.trial.robot_action))},
             {"humanAction", std::string(to_string(step.trial.human_action))},
             {"success", step.trial.success},
             {"blockDone", step.block_done},
             {"sessionDone", step.session_done},
             {"round", step.trial.round},
             {"block", step.trial.block},
             {"phase", std::string(to_string(s->phase))}};
  if (step.block_done && !step.session_done) reply["restSeconds"] = s->engine.config().rest_between_blocks_s;

  if (step.block_done) {
    const std::uint64_t generation = ++s->fit_requested;
    FitJob job{s, generation, s->log};
    lock.unlock();
    {
      std::lock_guard jl(jobs_mutex_);
      jobs_.push_back(std::move(job));
    }
    jobs_cv_.notify_one();
  }
  return reply;
}

Json SessionManager::summary(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  struct Row {
    int round, block;
    double p_r;
    std::int64_t trials = 0, ha2 = 0, successes = 0;
  };
  std::map<std::pair<int, int>, Row> rows;
  for (const auto& t : s->log.trials) {
    auto& r = rows.try_emplace({t.round, t.block}, Row{t.round, t.block, t.p_r}).first->second;
    ++r.trials;
    r.ha2 += t.human_action == HumanAction::HA2;
    r.successes += t.success;
  }
  const int quota = s->engine.config().successes_per_block;
  Json table = Json::array();
  for (const auto& [key, r] : rows) {
    table.push_back(Json{{"round", r.round},
                         {"block", r.block},
                         {"pR", r.p_r},
                         {"trials", r.trials},
                         {"ha2", r.ha2},
                         {"successes", r.successes},
                         {"p2", static_cast<double>(r.ha2) / static_cast<double>(r.trials)},
                         {"complete", r.successes >= quota}});
  }
  return Json{{"sessionId", s->id},
              {"participantId", s->log.participant_id},
              {"order", std::string(to_string(s->log.order))},
              {"phase", std::string(to_string(s->phase))},
              {"trials", s->log.trials.size()},
              {"blocksCompleted", s->engine.blocks_completed()},
              {"empirical", std::move(table)}};
}

Json SessionManager::fit(const std::string& id) {
  auto s = find(id);
  std::unique_lock lock(s->mutex);
  s->fit_cv.wait(lock, [&] { return s->fit_completed >= s->fit_requested; });
  return s->fit_result;
}

SessionLog SessionManager::log(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return s->log;
}

Json SessionManager::compute_fit(const SessionLog& log, int blocks_completed) const {
  const ChoiceDataset data = build_choice_dataset(log);
  const auto grid = uniform_grid(options_.curve_points);
  Json out;
  out["blocksCompleted"] = blocks_completed;
  Json empirical = Json::array();
  for (const auto& e : empirical_points(data)) empirical.push_back(to_json(e));
  out["empirical"] = std::move(empirical);

  const FitResult cpt = fit_cpt(data, options_.cpt);
  const auto cpt_curve = curve_export(cpt.params, grid, options_.cpt.payoff);
  out["cpt"] = Json{{"params", to_json(cpt.params)},
                    {"nll", cpt.nll},
                    {"rmse", cpt.rmse},
                    {"converged", cpt.converged},
                    {"identifiable", cpt.identifiable},
                    {"curve", to_json(cpt_curve)}};

  const BlrParams blr = blr_map(data, options_.blr);
  const auto blr_curve = curve_export(blr, grid);
  out["blr"] = Json{{"params", to_json(blr)},
                    {"rmse", rmse(data, [&](double p) { return blr_choice_prob(p, blr); }, options_.cpt.rmse)},
                    {"curve", to_json(blr_curve)}};

  ParticipantSummary summary;
  summary.cpt_fit = cpt;
  summary.empirical = empirical_points(data);
  out["cluster"] = std::string(to_string(classify_participant(summary, options_.cluster)));
  out["clusterRule"] = options_.cluster.describe();
  return out;
}

void SessionManager::worker_loop() {
  for (;;) {
    FitJob job;
    {
      std::unique_lock lock(jobs_mutex_);
      jobs_cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    {
      std::lock_guard lock(job.session->mutex);
      // A newer snapshot is already queued; only the latest is worth fitting.
      if (job.generation < job.session->fit_requested) continue;
    }
    Json result;
    try {
      std::map<std::pair<int, int>, int> successes;
      int blocks = 0;
      for (const auto& t : job.snapshot.trials) {
        if (t.success && ++successes[{t.round, t.block}] == job.snapshot.config.successes_per_block) ++blocks;
      }
      result = compute_fit(job.snapshot, blocks);
    } catch (const std::exception& e) {
      result = empty_fit();
      result["error"] = e.what();
    }
    {
      std::lock_guard lock(job.session->mutex);
      if (job.generation > job.session->fit_completed) {
        job.session->fit_result = std::move(result);
        job.session->fit_completed = job.generation;
      }
    }
    job.session->fit_cv.notify_all();
  }
}

// ---------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    send_json(res, f());
  } catch (const ServiceError& e) {
    send_json(res, Json{{"error", e.what()}}, e.status());
  } catch (const std::exception& e) {
    send_json(res, Json{{"error", e.what()}}, 500);
  }
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw ServiceError(400, std::string("invalid JSON body: ") + e.what());
  }
}

}  // namespace

void install_routes(httplib::Server& server, SessionManager& manager) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, Json{{"ok", true}}); });
  server.Post("/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return manager.create(parse_body(req)); });
  });
  server.Get(R"(/sessions/([^/]+)/next)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return manager.next(req.matches[1]); });
  });
  server.Post(R"(/sessions/([^/]+)/choice)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return manager.choice(req.matches[1], parse_body(req)); });
  });
  server.Get(R"(/sessions/([^/]+)/summary)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return manager.summary(req.matches[1]); });
  });
  server.Get(R"(/sessions/([^/]+)/fit)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return manager.fit(req.matches[1]); });
  });
}

int serve(const std::string& host, int port, ServiceOptions options) {
  SessionManager manager(std::move(options));
  httplib::Server server;
  install_routes(server, manager);
  std::fprintf(stderr, "listening on %s:%d\n", host.c_str(), port);
  if (!server.listen(host, port)) {
    std::fprintf(stderr, "cannot listen on %s:%d\n", host.c_str(), port);
    return 1;
  }
  return 0;
}

}  // namespace cptchoice::service
