#pragma once

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "peerflow/executor.hpp"
#include "peerflow/http.hpp"
#include "peerflow/object_store.hpp"
#include "peerflow/serialize.hpp"

namespace peerflow {

struct VersionRef {
  DataVersion version;
  std::uint64_t size_bytes = 0;

  friend bool operator==(const VersionRef&, const VersionRef&) = default;
};

/// Master -> worker. Inputs travel by reference only.
struct ExecutionRequest {
  TaskId task_id;
  TaskSpec spec;
  int attempt = 1;
  std::vector<VersionRef> input_manifest;  // IN/INOUT params in param order
  std::vector<DataVersion> output_versions;  // OUT/INOUT params in param order
  Endpoint reply_to;
  AgentId master;
  int gang_rank = 0;
  int gang_size = 1;
};

/// Worker -> master, at least once.
struct CompletionReport {
  TaskId task_id;
  int attempt = 1;
  AgentId agent;
  int gang_rank = 0;
  bool ok = true;
  std::string error;  // Errc name when !ok
  std::string message;
  std::vector<VersionRef> outputs;
  double elapsed_ms = 0;
};

void to_json(json& j, const VersionRef& r);
void from_json(const json& j, VersionRef& r);
void to_json(json& j, const ExecutionRequest& r);
void from_json(const json& j, ExecutionRequest& r);
void to_json(json& j, const CompletionReport& r);
void from_json(const json& j, CompletionReport& r);

/// Where a running task gets inputs, puts outputs and reports to.
class ExecutionHost {
 public:
  virtual ~ExecutionHost() = default;
  virtual Bytes load(const DataVersion& v) = 0;
  virtual void store(const DataVersion& v, Bytes payload) = 0;
  virtual void report(const CompletionReport& r) = 0;
};

/// Host for requests that arrived over the wire: inputs come from the local
/// blob store or through the master's store, outputs stay in local blobs and
/// the completion is POSTed to reply_to with transport retries.
class RemoteHost final : public ExecutionHost {
 public:
  RemoteHost(AgentId self, Endpoint master, std::shared_ptr<LocalBlobStore> blobs,
             std::shared_ptr<HttpClientPool> pool, const std::atomic<bool>* killed)
      : self_(self), master_(std::move(master)), blobs_(std::move(blobs)), pool_(std::move(pool)), killed_(killed) {}

  Bytes load(const DataVersion& v) override;
  void store(const DataVersion& v, Bytes payload) override;
  void report(const CompletionReport& r) override;

 private:
  AgentId self_;
  Endpoint master_;
  std::shared_ptr<LocalBlobStore> blobs_;
  std::shared_ptr<HttpClientPool> pool_;
  const std::atomic<bool>* killed_;
};

/// Executes tasks against this agent's resource pool, one thread per task.
class Worker {
 public:
  Worker(AgentId self, ResourcePool capacity, ExecutorRegistry registry = ExecutorRegistry::with_builtins());
  ~Worker();

  /// Reserves the request's cores/memory and starts it. Throws
  /// RejectedNoCapacity, AgentDraining. A repeated (task, attempt, rank) is
  /// accepted without running twice.
  void submit(ExecutionRequest req, std::shared_ptr<ExecutionHost> host);

  ResourcePool pool() const;
  /// Largest reserved_cores ever observed.
  int peak_cores() const { return peak_cores_; }
  std::size_t running() const;
  std::uint64_t executed() const { return executed_; }

  void set_draining(bool d) { draining_ = d; }
  bool draining() const { return draining_; }
  /// Suppresses all further completion reports (simulated crash).
  void kill() { killed_ = true; }
  const std::atomic<bool>* killed_flag() const { return &killed_; }
  /// Blocks until no task is running.
  void join();

  const ExecutorRegistry& registry() const { return registry_; }

 private:
  void execute(const ExecutionRequest& req, ExecutionHost& host);

  AgentId self_;
  ExecutorRegistry registry_;
  mutable std::mutex mu_;
  std::condition_variable idle_;
  ResourcePool pool_;
  std::set<std::tuple<TaskId, int, int>> seen_;
  std::size_t running_ = 0;
  std::atomic<int> peak_cores_{0};
  std::atomic<std::uint64_t> executed_{0};
  std::atomic<bool> draining_{false};
  std::atomic<bool> killed_{false};
};

}  // namespace peerflow
