#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <unordered_map>

#include "peerflow/access_processor.hpp"
#include "peerflow/http.hpp"
#include "peerflow/object_store.hpp"
#include "peerflow/recovery.hpp"
#include "peerflow/scheduler.hpp"
#include "peerflow/trace.hpp"
#include "peerflow/worker.hpp"

namespace httplib {
class ThreadPool;
}

namespace peerflow {

struct RuntimeConfig {
  int max_attempts = 3;
  SchedulingPolicy policy = SchedulingPolicy::Locality;
  ProbeConfig probe;
  bool probing = true;
  int dispatch_threads = 8;
  /// RejectedNoCapacity answers tolerated per dispatch before the attempt fails.
  int capacity_retries = 20;
};

/// Master role of an agent: dependency graph, scheduler, store coordinator,
/// dispatch and recovery for the applications it hosts.
///
/// Values produced by tasks run on the master stay in a pending cache until
/// a remote task needs them; they are persisted before the request leaves.
class Runtime {
 public:
  Runtime(AgentDescriptor self, RuntimeConfig cfg, std::shared_ptr<LocalBlobStore> blobs, Worker& worker,
          std::shared_ptr<HttpClientPool> pool, TraceSink& trace);
  ~Runtime();

  void start();
  void stop();

  const AgentDescriptor& self() const { return self_; }
  AccessProcessor& access_processor() { return ap_; }
  Scheduler& scheduler() { return scheduler_; }
  ReplicatedStore& store() { return store_; }
  TraceSink& trace() { return trace_; }
  LivenessTracker& liveness() { return probe_->tracker(); }

  ApplicationId open_application();
  /// Explicit put (version 0), persisted at `home` (default: this agent).
  DataVersion put(ApplicationId app, DataId data, Bytes payload, std::optional<AgentId> home = std::nullopt);
  TaskId register_task(ApplicationId app, TaskSpec spec);
  ApplicationSummary wait_all(ApplicationId app, std::optional<std::chrono::milliseconds> timeout = std::nullopt);
  /// Value of a version from the pending cache or the store.
  Bytes read(const DataVersion& v);
  bool is_pending(const DataVersion& v) const;
  /// Persists every pending value at this agent.
  void flush_pending();
  /// Store read on behalf of another agent; pending values are persisted first.
  Bytes serve(const DataVersion& v, AgentId requester);
  /// Size and holders; a pending value is held by this agent only.
  std::optional<ObjectInfo> locate(const DataVersion& v);

  void on_completion(const CompletionReport& r);
  void update_resources(const ResourceDelta& d);
  std::set<TaskId> reclaim_agent(AgentId dead);
  /// One assign pass followed by dispatch of the resulting assignments.
  void schedule();

  using Interceptor = std::function<void(const ExecutionRequest&, AgentId target)>;
  /// Called right before a request is sent to a remote agent.
  void set_transport_interceptor(Interceptor fn);

  std::uint64_t completed() const { return completed_; }
  std::uint64_t remote_dispatches() const { return remote_dispatches_; }

 private:
  class LocalHost;
  struct GangProgress {
    std::set<int> done;
    std::vector<VersionRef> outputs;
    AgentId producer;
  };

  void dispatch(const Assignment& a, const TaskNode& node);
  void send_remote(ExecutionRequest req, AgentId target);
  void fail_attempt(TaskId task, int attempt, const std::string& reason);
  void ensure_persisted(const std::vector<VersionRef>& inputs);
  void emit_ready(const std::vector<TaskId>& ids);
  void on_liveness(const LivenessTransition& t);
  std::string agent_name(AgentId id) const;

  AgentDescriptor self_;
  RuntimeConfig cfg_;
  std::shared_ptr<LocalBlobStore> blobs_;
  Worker& worker_;
  std::shared_ptr<HttpClientPool> pool_;
  std::shared_ptr<HttpClientPool> probe_pool_;
  TraceSink& trace_;

  AccessProcessor ap_;
  Scheduler scheduler_;
  ReplicatedStore store_;
  std::shared_ptr<LocalHost> local_host_;
  std::unique_ptr<ProbeLoop> probe_;
  std::unique_ptr<httplib::ThreadPool> dispatch_pool_;

  std::mutex sched_mu_;  // one assign pass or reclaim at a time
  mutable std::mutex pending_mu_;
  std::unordered_map<DataVersion, std::shared_ptr<const Bytes>> pending_;
  std::mutex gang_mu_;
  std::map<std::pair<TaskId, int>, GangProgress> gangs_;
  std::mutex hook_mu_;
  Interceptor interceptor_;
  mutable std::mutex names_mu_;
  std::map<AgentId, std::string> names_;
  std::atomic<std::uint64_t> completed_{0};
  std::atomic<std::uint64_t> remote_dispatches_{0};
  std::atomic<bool> stopped_{false};
};

}  // namespace peerflow
