#pragma once

// Interactive session runner behind a small JSON-over-HTTP API. Each session
// wraps a SessionEngine; choices are serialized per session, and the models
// are refitted on a background worker after every completed block.

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include "cptchoice/io.hpp"

namespace httplib {
class Server;
}

namespace cptchoice::service {

enum class Phase { AwaitingChoice, ShowingOutcome, Rest, Done };
std::string_view to_string(Phase p);

/// Maps onto an HTTP status: 400 bad request, 404 unknown session, 409 conflict.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline constexpr std::int64_t kMinHoldMs = 1000;

struct ServiceOptions {
  ProtocolConfig config;
  std::optional<std::filesystem::path> data_dir;  // per-session JSONL when set
  CptFitConfig cpt;
  BlrPrior blr;
  ClusterRule cluster;
  std::size_t curve_points = 101;
};

/// Options with data_dir taken from CPTCHOICE_DATA_DIR when it is set.
ServiceOptions options_from_env();

class SessionManager {
 public:
  explicit SessionManager(ServiceOptions options = {});
  ~SessionManager();
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  Json create(const Json& body);
  Json next(const std::string& id);
  Json choice(const std::string& id, const Json& body);
  Json summary(const std::string& id);
  /// Latest fit; waits for a refit that is still running.
  Json fit(const std::string& id);

  /// Copy of the log recorded so far.
  SessionLog log(const std::string& id);

 private:
  struct Session;
  struct FitJob {
    std::shared_ptr<Session> session;
    std::uint64_t generation;
    SessionLog snapshot;
  };

  std::shared_ptr<Session> find(const std::string& id);
  void worker_loop();
  Json compute_fit(const SessionLog& log, int blocks_completed) const;

  ServiceOptions options_;
  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;

  std::mutex jobs_mutex_;
  std::condition_variable jobs_cv_;
  std::deque<FitJob> jobs_;
  bool stopping_ = false;
  std::thread worker_;
};

void install_routes(httplib::Server& server, SessionManager& manager);

/// Blocks serving on host:port until the process is stopped.
int serve(const std::string& host, int port, ServiceOptions options);

}  // namespace cptchoice::service
