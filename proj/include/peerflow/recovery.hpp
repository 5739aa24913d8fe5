#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "peerflow/access_processor.hpp"
#include "peerflow/object_store.hpp"
#include "peerflow/scheduler.hpp"
#include "peerflow/trace.hpp"

namespace peerflow {

enum class Liveness { LIVE, SUSPECT, DEAD };
std::string_view to_string(Liveness l);

struct LivenessRecord {
  AgentId agent;
  std::int64_t last_seen_us = 0;
  int consecutive_misses = 0;
  Liveness status = Liveness::LIVE;
};

struct LivenessTransition {
  AgentId agent;
  Liveness from;
  Liveness to;
};

/// LIVE -> SUSPECT on the first miss, DEAD after `k` consecutive misses, any
/// successful probe resets to LIVE. DEAD is final until reset().
class LivenessTracker {
 public:
  explicit LivenessTracker(int k = 3) : k_(k) {}

  std::optional<LivenessTransition> observe(AgentId agent, bool answered, std::int64_t now_us);
  /// Forgets history (a fresh incarnation of the agent).
  void reset(AgentId agent);
  void forget(AgentId agent);
  std::optional<LivenessRecord> record(AgentId agent) const;
  int k() const { return k_; }

 private:
  int k_;
  mutable std::mutex mu_;
  std::map<AgentId, LivenessRecord> records_;
};

struct ProbeConfig {
  std::chrono::milliseconds period{500};
  std::chrono::milliseconds timeout{250};
  int misses_to_dead = 3;
};

/// Probes every agent of a view each period. The prober and the agent list
/// are injected so the loop can run without a network.
class ProbeLoop {
 public:
  using Prober = std::function<bool(const AgentEntry&)>;
  using Targets = std::function<std::vector<AgentEntry>()>;
  using Listener = std::function<void(const LivenessTransition&)>;
  using Observer = std::function<void(AgentId, bool)>;

  ProbeLoop(ProbeConfig cfg, Targets targets, Prober prober, Listener on_transition, Observer on_probe = {});
  ~ProbeLoop();

  void start();
  void stop();
  /// One synchronous probe round.
  void tick();

  LivenessTracker& tracker() { return tracker_; }

 private:
  ProbeConfig cfg_;
  Targets targets_;
  Prober prober_;
  Listener on_transition_;
  Observer on_probe_;
  LivenessTracker tracker_;
  std::thread thread_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool running_ = false;
};

/// Removes a dead agent: view entry, reservations and replica locations.
/// Every task SCHEDULED/RUNNING there is failed for its current attempt,
/// which resubmits it or (budget exhausted) fails it terminally.
/// Returns the resubmitted tasks.
std::set<TaskId> reclaim(AgentId dead, AccessProcessor& ap, Scheduler& scheduler, ReplicatedStore& store,
                         TraceSink* trace = nullptr);

}  // namespace peerflow
