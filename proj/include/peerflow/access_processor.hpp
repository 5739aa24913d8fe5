#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <ranges>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "peerflow/core.hpp"
#include "peerflow/serialize.hpp"

namespace peerflow {

struct LastWriter {
  std::optional<TaskId> task;  // empty for explicitly put data
  DataVersion version;

  friend bool operator==(const LastWriter&, const LastWriter&) = default;
};

struct TaskNode {
  TaskId task_id;
  TaskSpec spec;
  TaskState state = TaskState::REGISTERED;
  std::vector<DataVersion> reads;   // one per IN/INOUT param, in param order
  std::vector<DataVersion> writes;  // one per OUT/INOUT param, in param order
  std::set<TaskId> preds;
  std::set<TaskId> succs;
  std::optional<AgentId> assigned_agent;
  std::vector<AgentId> assigned_agents;  // gang tasks hold several
  int attempt = 1;
  std::uint64_t seq = 0;  // global registration sequence
  std::string last_error;
};

struct DepGraph {
  ApplicationId app;
  std::map<TaskId, TaskNode> nodes;
  std::map<DataId, LastWriter> last_writer;
  std::vector<TaskId> registration_order;
  bool open = true;
};

struct ApplicationSummary {
  ApplicationId app;
  bool open = true;
  std::size_t total = 0;
  std::map<TaskState, std::size_t> counts;
  std::map<DataId, LastWriter> last_writer;

  std::size_t count(TaskState s) const {
    auto it = counts.find(s);
    return it == counts.end() ? 0 : it->second;
  }
  bool finished() const;
};

struct FailureOutcome {
  bool stale = false;        // the report named an old attempt; nothing changed
  bool resubmitted = false;  // task went FAILED -> RESUBMITTED -> READY
  int attempt = 0;           // attempt number after the call
  std::vector<TaskId> cancelled;
};

/// Builds and tracks the per-application dependency DAG.
///
/// Writes are renamed: every OUT/INOUT access produces a fresh DataVersion, so
/// only read-after-write edges exist. A task is READY once every producer of a
/// version it reads has completed.
///
/// All members are thread-safe. Registration, completion and failure reports
/// are mutually atomic.
class AccessProcessor {
 public:
  explicit AccessProcessor(int max_attempts = 3) : max_attempts_(max_attempts) {}

  int max_attempts() const noexcept { return max_attempts_; }

  ApplicationId open_application(std::optional<ApplicationId> id = std::nullopt);
  bool has_application(ApplicationId app) const;
  std::vector<ApplicationId> applications() const;

  /// Declares data created outside any task (version 0).
  DataVersion put(ApplicationId app, DataId data);
  bool knows_data(ApplicationId app, DataId data) const;

  TaskId register_task(ApplicationId app, TaskSpec spec);

  /// RUNNING -> COMPLETED. Returns successors that became READY. Reports for a
  /// stale attempt, or repeated reports for a completed attempt, return {}.
  std::vector<TaskId> notify_completion(TaskId task, int attempt);

  /// Executor or agent failure for `attempt`. Resubmits while the retry budget
  /// lasts; otherwise the task ends FAILED and its transitive successors are
  /// cancelled.
  FailureOutcome notify_failure(TaskId task, int attempt, const std::string& reason);

  /// READY -> SCHEDULED on the given agents.
  void mark_scheduled(TaskId task, const std::vector<AgentId>& agents);
  /// SCHEDULED -> RUNNING; false if `attempt` is stale.
  bool mark_running(TaskId task, int attempt);

  /// Blocks until every task of the application is terminal, then closes it.
  ApplicationSummary wait_all(ApplicationId app,
                              std::optional<std::chrono::milliseconds> timeout = std::nullopt);
  ApplicationSummary summary(ApplicationId app) const;

  /// Blocks until the task is terminal and returns its final state.
  TaskState wait_task(TaskId task, std::optional<std::chrono::milliseconds> timeout = std::nullopt);

  DepGraph graph_snapshot(ApplicationId app) const;
  TaskNode task(TaskId id) const;
  ApplicationId application_of(TaskId id) const;

  /// Visits READY tasks of all applications in registration order until `fn`
  /// returns false.
  template <typename Fn>
  void for_each_ready(Fn&& fn) const {
    std::lock_guard lock(mu_);
    for (const auto& [seq, id] : ready_) {
      const auto& node = locate(id);
      if (!fn(node)) break;
    }
  }

  /// Calls fn with a lazy range of READY nodes (registration order) while the
  /// graph is locked. The range must not escape fn.
  template <typename Fn>
  decltype(auto) with_ready(Fn&& fn) const {
    std::lock_guard lock(mu_);
    auto range = ready_ | std::views::transform([this](const auto& e) -> const TaskNode& { return locate(e.second); });
    return fn(range);
  }

  std::size_t ready_count() const;

  /// (task, attempt) pairs SCHEDULED or RUNNING on the agent.
  std::vector<std::pair<TaskId, int>> in_flight_on(AgentId agent) const;

 private:
  struct App {
    DepGraph graph;
    std::size_t active = 0;  // non-terminal tasks
  };

  App& app_or_throw(ApplicationId app);
  const App& app_or_throw(ApplicationId app) const;
  TaskNode& locate(TaskId id);
  const TaskNode& locate(TaskId id) const;
  void set_state(App& app, TaskNode& node, LifecycleEvent ev);
  std::vector<TaskId> cancel_successors(App& app, const TaskNode& root);
  ApplicationSummary summarize(const App& app) const;

  int max_attempts_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<ApplicationId, App> apps_;
  std::unordered_map<TaskId, ApplicationId> task_app_;
  std::unordered_map<TaskId, std::size_t> pending_preds_;
  std::set<std::pair<std::uint64_t, TaskId>> ready_;
  std::uint64_t next_seq_ = 0;
};

/// Kahn's algorithm over the snapshot's edges; nullopt when a cycle exists.
std::optional<std::vector<TaskId>> topological_order(const DepGraph& g);
std::size_t edge_count(const DepGraph& g);

void to_json(json& j, const LastWriter& w);
void from_json(const json& j, LastWriter& w);
void to_json(json& j, const TaskNode& n);
void from_json(const json& j, TaskNode& n);
void to_json(json& j, const DepGraph& g);
void from_json(const json& j, DepGraph& g);
void to_json(json& j, const ApplicationSummary& s);
void from_json(const json& j, ApplicationSummary& s);

/// One line per task: "<order> <task> <kind:target> <state> <- preds".
std::string to_listing(const DepGraph& g);
/// Graphviz DOT rendering of the dependency graph.
std::string to_dot(const DepGraph& g);

}  // namespace peerflow
