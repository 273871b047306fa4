#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "cptchoice/service.hpp"

using namespace cptchoice;
using service::ServiceOptions;

namespace {

// Server on an ephemeral port for the lifetime of the fixture.
class Harness {
 public:
  explicit Harness(ServiceOptions options = {}) : manager_(std::move(options)) {
    service::install_routes(server_, manager_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~Harness() {
    server_.stop();
    thread_.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60);
    return c;
  }

  struct Reply {
    int status;
    Json body;
  };

  Reply get(const std::string& path) const {
    auto res = client().Get(path);
    REQUIRE(res);
    return {res->status, Json::parse(res->body)};
  }
  Reply post(const std::string& path, const Json& body) const { return post_raw(path, body.dump()); }
  Reply post_raw(const std::string& path, const std::string& body) const {
    auto res = client().Post(path, body, "application/json");
    REQUIRE(res);
    return {res->status, Json::parse(res->body)};
  }

  std::string create(Json body = Json::object()) const {
    const auto r = post("/sessions", body);
    REQUIRE(r.status == 200);
    return r.body["sessionId"].get<std::string>();
  }

  // One full trial: next, then a choice.
  Json trial(const std::string& id, const std::string& action, std::optional<int> hold = std::nullopt) const {
    const auto n = get("/sessions/" + id + "/next");
    REQUIRE(n.status == 200);
    Json body{{"humanAction", action}};
    if (hold) body["holdMs"] = *hold;
    const auto c = post("/sessions/" + id + "/choice", body);
    REQUIRE(c.status == 200);
    return c.body;
  }

  service::SessionManager& manager() { return manager_; }

 private:
  service::SessionManager manager_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_SUITE("service") {

TEST_CASE("health and CORS") {
  Harness h;
  auto res = h.client().Get("/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  res = h.client().Options("/sessions");
  REQUIRE(res);
  CHECK(res->status == 204);
}

TEST_CASE("create, next, choice") {
  Harness h;
  const auto created = h.post("/sessions", Json{{"order", "ascending"}, {"seed", 4}, {"participantId", "P01"}});
  REQUIRE(created.status == 200);
  CHECK(created.body["participantId"] == "P01");
  CHECK(created.body["config"]["successesPerBlock"] == 10);
  CHECK_FALSE(created.body.contains("seed"));
  const std::string id = created.body["sessionId"];

  const auto next = h.get("/sessions/" + id + "/next");
  REQUIRE(next.status == 200);
  CHECK(next.body["pR"] == 0.1);
  CHECK(next.body["round"] == 1);
  CHECK(next.body["block"] == 1);
  CHECK(next.body["trialIndex"] == 0);
  CHECK(next.body["successesSoFar"] == 0);
  CHECK(next.body["successesNeeded"] == 10);
  CHECK(next.body["countdownSeconds"] == 3.0);
  CHECK(next.body["phase"] == "AwaitingChoice");
  // the robot's action stays hidden until the choice is in
  CHECK_FALSE(next.body.contains("robotAction"));

  const auto choice = h.post("/sessions/" + id + "/choice", Json{{"humanAction", "HA2"}, {"holdMs", 1500}});
  REQUIRE(choice.status == 200);
  CHECK(choice.body["success"] == true);
  CHECK(choice.body["humanAction"] == "HA2");
  CHECK(choice.body["phase"] == "ShowingOutcome");
  CHECK(choice.body["blockDone"] == false);
  CHECK(choice.body.contains("robotAction"));
}

TEST_CASE("block completion advances the level") {
  Harness h;
  const auto id = h.create(Json{{"seed", 9}});
  Json last;
  for (int i = 0; i < 10; ++i) last = h.trial(id, "HA2");
  CHECK(last["blockDone"] == true);
  CHECK(last["phase"] == "Rest");
  CHECK(last["restSeconds"] == 30.0);
  // a choice during the rest is a conflict
  CHECK(h.post("/sessions/" + id + "/choice", Json{{"humanAction", "HA2"}}).status == 409);
  const auto next = h.get("/sessions/" + id + "/next");
  CHECK(next.body["pR"] == 0.3);
  CHECK(next.body["block"] == 2);
  CHECK(next.body["successesSoFar"] == 0);

  const auto fit = h.get("/sessions/" + id + "/fit");
  REQUIRE(fit.status == 200);
  CHECK(fit.body["blocksCompleted"] == 1);
  REQUIRE(fit.body["cpt"].is_object());
  CHECK(fit.body["cpt"]["curve"].size() == 101);
  CHECK(fit.body["cpt"]["curve"][100]["p2"].get<double>() > 0.99);
  CHECK(fit.body["blr"]["params"]["beta0"] == 10.0);
  for (const auto& pt : fit.body["blr"]["curve"]) CHECK(pt["p2"].get<double>() > 0.99);
  CHECK(fit.body["cluster"] == "AlwaysCompensate");

  const auto summary = h.get("/sessions/" + id + "/summary");
  CHECK(summary.body["trials"] == 10);
  CHECK(summary.body["blocksCompleted"] == 1);
  REQUIRE(summary.body["empirical"].size() == 1);
  CHECK(summary.body["empirical"][0]["p2"] == 1.0);
  CHECK(summary.body["empirical"][0]["complete"] == true);
}

TEST_CASE("fit before any block") {
  Harness h;
  const auto id = h.create();
  const auto fit = h.get("/sessions/" + id + "/fit");
  CHECK(fit.status == 200);
  CHECK(fit.body["blocksCompleted"] == 0);
  CHECK(fit.body["cpt"].is_null());
  CHECK(fit.body["blr"].is_null());
}

TEST_CASE("errors") {
  Harness h;
  CHECK(h.get("/sessions/nope/next").status == 404);
  CHECK(h.get("/sessions/nope/fit").status == 404);
  CHECK(h.post("/sessions/nope/choice", Json{{"humanAction", "HA1"}}).status == 404);
  CHECK(h.post("/sessions", Json{{"order", "sideways"}}).status == 400);
  CHECK(h.post("/sessions", Json{{"seed", -1}}).status == 400);
  CHECK(h.post_raw("/sessions", "{oops").status == 400);
  const auto id = h.create();
  h.get("/sessions/" + id + "/next");
  CHECK(h.post("/sessions/" + id + "/choice", Json{{"humanAction", "HA3"}}).status == 400);
  CHECK(h.post("/sessions/" + id + "/choice", Json::object()).status == 400);
  CHECK(h.post("/sessions/" + id + "/choice", Json{{"humanAction", "HA1"}}).status == 200);
  // a second choice for the same trial
  CHECK(h.post("/sessions/" + id + "/choice", Json{{"humanAction", "HA1"}}).status == 409);
}

TEST_CASE("concurrent duplicate choices") {
  Harness h;
  for (int round = 0; round < 5; ++round) {
    const auto id = h.create();
    h.get("/sessions/" + id + "/next");
    std::atomic<int> ok = 0, conflict = 0;
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&] {
        auto res = h.client().Post("/sessions/" + id + "/choice", R"({"humanAction":"HA2"})", "application/json");
        if (res && res->status == 200) ++ok;
        if (res && res->status == 409) ++conflict;
      });
    }
    for (auto& t : threads) t.join();
    CHECK(ok == 1);
    CHECK(conflict == 3);
    CHECK(h.get("/sessions/" + id + "/summary").body["trials"] == 1);
  }
}

TEST_CASE("short hold counts as relaxing") {
  Harness h;
  const auto id = h.create(Json{{"seed", 2}});
  CHECK(h.trial(id, "HA2", 400)["humanAction"] == "HA1");
  CHECK(h.trial(id, "HA2", 1000)["humanAction"] == "HA2");
  CHECK(h.trial(id, "HA2")["humanAction"] == "HA2");
  CHECK(h.trial(id, "HA1", 5000)["humanAction"] == "HA1");
}

TEST_CASE("complete session matches the simulator") {
  const auto dir = std::filesystem::temp_directory_path() / ("cptchoice-test-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  ServiceOptions options;
  options.data_dir = dir;
  for (const char* order : {"ascending", "randomized"}) {
    Harness h(options);
    const auto id = h.create(Json{{"seed", 77}, {"order", order}, {"participantId", "P"}});
    int trials = 0;
    for (;;) {
      const auto r = h.trial(id, "HA2");
      ++trials;
      if (r["sessionDone"] == true) break;
      REQUIRE(trials < 1000);
    }
    CHECK(trials == 100);
    const auto done = h.get("/sessions/" + id + "/next");
    CHECK(done.body["phase"] == "Done");
    CHECK(done.body["sessionDone"] == true);
    CHECK(h.post("/sessions/" + id + "/choice", Json{{"humanAction", "HA2"}}).status == 409);
    const auto fit = h.get("/sessions/" + id + "/fit").body;
    CHECK(fit["blocksCompleted"] == 10);

    ProtocolConfig cfg;
    cfg.order = parse_block_order(order);
    const auto sim = simulate_session(AgentSpec::always_ha2(), cfg, 77, "P");
    const auto logs = read_session_jsonl(dir / (id + ".jsonl"));
    REQUIRE(logs.size() == 1);
    REQUIRE(logs[0].trials.size() == sim.trials.size());
    for (std::size_t i = 0; i < sim.trials.size(); ++i) {
      CHECK(logs[0].trials[i].round == sim.trials[i].round);
      CHECK(logs[0].trials[i].block == sim.trials[i].block);
      CHECK(logs[0].trials[i].p_r == sim.trials[i].p_r);
      CHECK(logs[0].trials[i].robot_action == sim.trials[i].robot_action);
      CHECK(logs[0].trials[i].seed == sim.trials[i].seed);
    }
    // same bytes once the timestamps are masked
    auto mask = [](std::string text) {
      return std::regex_replace(text, std::regex(R"("chosen_at_ms":\d+)"), R"("chosen_at_ms":0)");
    };
    std::ostringstream sim_text;
    write_session_jsonl(sim_text, sim);
    std::ifstream served(dir / (id + ".jsonl"), std::ios::binary);
    CHECK(mask({std::istreambuf_iterator<char>(served), {}}) == mask(sim_text.str()));
    CHECK(read_config(dir / (id + ".config.json")).order == cfg.order);
    // the live fit agrees with an offline fit of the stored log
    const auto offline = summarize_participant(logs[0]);
    const auto live_cpt = cpt_params_from_json(fit["cpt"]["params"]).to_array();
    const auto off_cpt = offline.cpt_fit.params.to_array();
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(live_cpt[i] - off_cpt[i]) <= 1e-6);
    const auto live_blr = blr_params_from_json(fit["blr"]["params"]);
    CHECK(std::abs(live_blr.beta0 - offline.blr_map.beta0) <= 1e-6);
    CHECK(std::abs(live_blr.beta1 - offline.blr_map.beta1) <= 1e-6);
    CHECK(h.manager().log(id).trials.size() == 100);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("data directory from the environment") {
  ::setenv("CPTCHOICE_DATA_DIR", "/tmp/cptchoice-env", 1);
  CHECK(service::options_from_env().data_dir == std::filesystem::path("/tmp/cptchoice-env"));
  ::unsetenv("CPTCHOICE_DATA_DIR");
  CHECK_FALSE(service::options_from_env().data_dir.has_value());
}

}  // TEST_SUITE
