#pragma once

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "peerflow/programs.hpp"
#include "peerflow/runtime.hpp"

namespace httplib {
class Server;
}

namespace peerflow {

struct AgentConfig {
  std::string name = "agent";
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  int cores = 1;
  std::int64_t memory_mb = 1024;
  std::set<std::string> software_tags;
  std::set<ProcessorKind> processor_kinds{ProcessorKind::CPU};
  RuntimeConfig runtime;
  std::string trace_path;  // empty keeps the trace in memory only
  int server_threads = 64;

  /// Throws InvalidConfig.
  void validate() const;
};

void to_json(json& j, const AgentConfig& c);
/// Reads name, port, cores, memory_mb, software_tags, processor_kinds and the
/// recovery fields max_attempts, probe_period_ms, probe_timeout_ms, misses_to_dead.
void from_json(const json& j, AgentConfig& c);

/// One agent process: REST server, worker and master role.
class Agent {
 public:
  explicit Agent(AgentConfig cfg, ProgramRegistry programs = ProgramRegistry::with_demos());
  ~Agent();

  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  /// Binds and starts serving. Throws PortInUse, InvalidConfig.
  void start();
  /// Graceful stop: no new work, running tasks finish, server closes.
  void stop();
  /// Blocks until stop() has been called.
  void wait();

  /// Crash simulation: the server closes at once and nothing is reported anymore.
  void kill();
  /// /health answers 503 while paused.
  void pause_health(bool paused) { health_paused_ = paused; }
  void set_draining(bool d);

  const AgentDescriptor& descriptor() const { return self_; }
  Endpoint endpoint() const { return self_.endpoint; }
  Runtime& runtime() { return *runtime_; }
  Worker& worker() { return *worker_; }
  LocalBlobStore& blobs() { return *blobs_; }
  TraceSink& trace() { return *trace_; }

 private:
  struct AppRecord {
    std::string program;  // "interactive" when tasks come over REST
    std::thread thread;
    bool done = false;
    std::string result;
    std::string error;
    std::string message;
  };

  void routes();
  void start_program(ApplicationId app, const std::string& name, std::vector<Scalar> literals, json hints);
  json app_json(ApplicationId app, const ApplicationSummary& s);

  AgentConfig cfg_;
  ProgramRegistry programs_;
  AgentDescriptor self_;
  std::shared_ptr<LocalBlobStore> blobs_;
  std::shared_ptr<HttpClientPool> pool_;
  std::unique_ptr<TraceSink> trace_;
  std::unique_ptr<Worker> worker_;
  std::unique_ptr<Runtime> runtime_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
  std::int64_t started_us_ = 0;

  std::mutex apps_mu_;
  std::condition_variable apps_cv_;
  std::map<ApplicationId, std::shared_ptr<AppRecord>> apps_;

  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  bool stopped_ = false;
  std::atomic<bool> cancelled_{false};
  std::atomic<bool> health_paused_{false};
  std::atomic<bool> draining_{false};
};

}  // namespace peerflow
