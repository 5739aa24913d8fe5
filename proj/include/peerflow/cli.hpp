#pragma once

// Operator surface: topology files, the localhost process harness and the
// submit/watch loop used by the peerflow command.

#include <sys/types.h>

#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "peerflow/agent.hpp"
#include "peerflow/http.hpp"

namespace peerflow {

enum class CliErrc { Usage, UnknownDemo, MasterUnreachable, StartupTimeout, PortInUse, InvalidConfig };

std::string_view to_string(CliErrc c);
/// 2 for usage-type errors, 3 for connectivity-type errors.
int exit_code(CliErrc c);

class CliError : public std::runtime_error {
 public:
  CliError(CliErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  CliErrc code() const noexcept { return code_; }

 private:
  CliErrc code_;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitTaskFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConnectivity = 3;

struct Topology {
  std::vector<AgentConfig> agents;  // the first agent is the master for submissions

  const AgentConfig& find(const std::string& name) const;
};

/// {"policy"?, "recovery"?: {max_attempts, probe_period_ms, probe_timeout_ms, misses_to_dead},
///  "agents": [{name, port, cores, memory_mb, software_tags, processor_kinds}, ...]}
/// Throws CliError(InvalidConfig).
Topology parse_topology(const json& j);
Topology load_topology(const std::string& path);
json topology_json(const Topology& t);

struct HarnessOptions {
  std::string exe;  // peerflow binary used to start agents
  std::chrono::milliseconds startup_timeout{15000};
  std::string log_dir;  // per-agent stderr logs and traces; empty discards them
  std::string log_level = "warn";
};

/// Agents of a topology as child processes on localhost, health-checked and
/// registered in each other's resource views. Ports given as 0 are picked free.
class Harness {
 public:
  /// Throws CliError(StartupTimeout | PortInUse | InvalidConfig).
  Harness(Topology topology, HarnessOptions opts);
  ~Harness();

  Harness(const Harness&) = delete;
  Harness& operator=(const Harness&) = delete;

  const Topology& topology() const { return topology_; }
  Endpoint endpoint(const std::string& name) const;
  Endpoint master() const { return endpoint(topology_.agents.front().name); }
  pid_t pid(const std::string& name) const;
  std::vector<std::string> names() const;

  /// SIGKILL, no goodbye.
  void kill(const std::string& name);
  /// SIGTERM everything, SIGKILL what is left after a grace period, reap all.
  void teardown();

 private:
  void spawn(const AgentConfig& cfg);
  void await_healthy(std::chrono::steady_clock::time_point deadline);
  void cross_register();

  Topology topology_;
  HarnessOptions opts_;
  std::map<std::string, pid_t> pids_;
  HttpClientPool pool_;
};

/// Binds an ephemeral localhost port, closes it and returns its number.
int pick_free_port();
/// True while something accepts connections on 127.0.0.1:port.
bool port_open(int port);

struct SubmitOptions {
  std::optional<std::int64_t> seed;
  json hints = json::object();
  std::optional<std::string> kill_agent;
  std::int64_t kill_at_task = 0;
  Harness* harness = nullptr;  // needed for kill_agent
  std::function<void(const json& summary)> on_progress;
  std::chrono::milliseconds poll{100};
};

struct SubmitOutcome {
  ApplicationId app;
  json summary;  // last GET /applications/{app}
  std::string result;
  bool ok = false;
  double elapsed_ms = 0;
  bool killed = false;
  std::size_t completed_at_kill = 0;
  std::int64_t killed_at_us = 0;  // same clock as trace timestamps
};

/// Starts a bundled demo on the master and polls until the program is done.
/// Throws CliError(UnknownDemo | MasterUnreachable | Usage).
SubmitOutcome submit_demo(const Endpoint& master, const std::string& demo, const std::vector<std::string>& args,
                          SubmitOptions opts);

/// Numbers become integers or floats, everything else stays text.
Scalar parse_literal(const std::string& s);

}  // namespace peerflow
