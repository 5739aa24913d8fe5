#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <ranges>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "peerflow/access_processor.hpp"
#include "peerflow/core.hpp"
#include "peerflow/object_store.hpp"
#include "peerflow/trace.hpp"

namespace peerflow {

struct AgentEntry {
  AgentDescriptor descriptor;
  ResourcePool pool;
  bool live = true;
  bool draining = false;
  std::uint64_t incarnation = 0;

  bool schedulable() const noexcept { return live && !draining; }
};

struct ResourceView {
  std::map<AgentId, AgentEntry> agents;

  const AgentEntry* find(AgentId id) const {
    auto it = agents.find(id);
    return it == agents.end() ? nullptr : &it->second;
  }
};

struct Reservation {
  AgentId agent;
  int cores = 0;
  std::int64_t memory_mb = 0;
};

struct Assignment {
  TaskId task_id;
  int attempt = 1;
  std::vector<AgentId> agent_ids;
  std::vector<Reservation> reservation;
  std::uint64_t input_bytes = 0;
  std::uint64_t local_bytes = 0;  // input bytes already resident on agent_ids.front()
};

/// Exact fraction of input bytes resident on an agent; 1 for tasks without inputs.
struct LocalityScore {
  std::uint64_t local_bytes = 0;
  std::uint64_t total_bytes = 0;

  double value() const {
    return total_bytes == 0 ? 1.0 : static_cast<double>(local_bytes) / static_cast<double>(total_bytes);
  }
  friend std::strong_ordering operator<=>(const LocalityScore& a, const LocalityScore& b) {
    auto norm = [](const LocalityScore& s) {
      return s.total_bytes == 0 ? std::pair<unsigned __int128, unsigned __int128>{1, 1}
                                : std::pair<unsigned __int128, unsigned __int128>{s.local_bytes, s.total_bytes};
    };
    auto [an, ad] = norm(a);
    auto [bn, bd] = norm(b);
    return an * bd <=> bn * ad;
  }
  friend bool operator==(const LocalityScore& a, const LocalityScore& b) { return (a <=> b) == 0; }
};

/// Input sizes and replica sets of a task, looked up once per scheduling decision.
struct InputProfile {
  std::vector<ObjectInfo> inputs;
  bool store_unavailable = false;

  LocalityScore score(AgentId agent) const {
    LocalityScore s;
    for (const auto& in : inputs) {
      s.total_bytes += in.size_bytes;
      if (in.replicas.contains(agent)) s.local_bytes += in.size_bytes;
    }
    if (store_unavailable) s = LocalityScore{0, 1};
    return s;
  }
};

/// A Locator maps a DataVersion to its size/replicas (or nullopt when unknown).
template <typename Locator>
concept LocatorFor = requires(Locator l, const DataVersion& v) {
  { l(v) } -> std::convertible_to<std::optional<ObjectInfo>>;
};

template <LocatorFor Locator>
InputProfile profile_inputs(const TaskNode& task, Locator&& locate) {
  InputProfile p;
  try {
    for (const auto& v : task.reads) {
      if (auto info = locate(v)) p.inputs.push_back(std::move(*info));
    }
  } catch (const Error& e) {
    spdlog::warn("location lookup failed for task {}: {}; treating inputs as remote", task.task_id.str(), e.what());
    p.inputs.clear();
    p.store_unavailable = true;
  }
  return p;
}

inline InputProfile profile_inputs(const TaskNode& task, StoreClient& store) {
  return profile_inputs(task, [&](const DataVersion& v) { return store.stat(v); });
}

/// True if the agent satisfies every constraint of the task right now.
inline bool satisfies(const ResourceConstraints& c, const AgentEntry& a) {
  if (!a.schedulable()) return false;
  if (!a.pool.fits(c.cores, c.memory_mb)) return false;
  if (!std::includes(a.descriptor.software_tags.begin(), a.descriptor.software_tags.end(), c.software_tags.begin(),
                     c.software_tags.end()))
    return false;
  return a.descriptor.processor_kinds.contains(c.processor_kind);
}

/// Live agents passing the constraint filter, ascending agent_id.
inline std::vector<AgentId> filter_candidates(const TaskNode& task, const ResourceView& view) {
  std::vector<AgentId> out;
  for (const auto& [id, entry] : view.agents)
    if (satisfies(task.spec.constraints, entry)) out.push_back(id);
  return out;
}

/// Fraction of the task's input bytes held by `agent`.
template <LocatorFor Locator>
LocalityScore locality_score(const TaskNode& task, AgentId agent, Locator&& locate) {
  return profile_inputs(task, std::forward<Locator>(locate)).score(agent);
}

inline LocalityScore locality_score(const TaskNode& task, AgentId agent, StoreClient& store) {
  return profile_inputs(task, store).score(agent);
}

enum class SchedulingPolicy { Locality, RoundRobin };

std::string_view to_string(SchedulingPolicy p);
SchedulingPolicy parse_scheduling_policy(std::string_view s);

struct ResourceDelta {
  enum class Op { Add, Remove, Resize };
  Op op = Op::Add;
  AgentDescriptor agent;              // Add
  AgentId agent_id;                   // Remove / Resize
  std::optional<int> cores;           // Resize
  std::optional<std::int64_t> memory_mb;  // Resize
};

void to_json(json& j, const ResourceDelta& d);
void from_json(const json& j, ResourceDelta& d);
void to_json(json& j, const AgentEntry& e);
void to_json(json& j, const ResourceView& v);
void to_json(json& j, const Assignment& a);

/// Owns the resource view and turns READY tasks into reservations.
///
/// Greedy single pass in registration order. Each task goes to the candidate
/// maximizing (locality score, free cores, -agent_id). Gang tasks need
/// constraints.nodes distinct candidates or are deferred whole.
class Scheduler {
 public:
  explicit Scheduler(SchedulingPolicy policy = SchedulingPolicy::Locality, TraceSink* trace = nullptr)
      : policy_(policy), trace_(trace) {}

  SchedulingPolicy policy() const { return policy_; }
  void set_policy(SchedulingPolicy p) {
    std::lock_guard lock(mu_);
    policy_ = p;
  }

  /// `ready` is any range of TaskNode (references or values) in registration order.
  template <std::ranges::input_range Range, LocatorFor Locator>
  std::vector<Assignment> assign(Range&& ready, Locator&& locate) {
    std::lock_guard lock(mu_);
    std::vector<Assignment> out;
    for (const TaskNode& task : ready) {
      if (!any_free_capacity()) break;
      if (active_.contains(task.task_id)) continue;
      auto profile = profile_inputs(task, locate);
      if (auto a = place(task, profile)) out.push_back(std::move(*a));
    }
    return out;
  }

  std::vector<Assignment> assign(const std::vector<TaskNode>& ready, StoreClient& store) {
    return assign(ready, [&](const DataVersion& v) { return store.stat(v); });
  }

  /// Returns reservations of a terminal task. A second release is a no-op (false).
  bool release(const Assignment& a);
  std::optional<Assignment> active_for(TaskId task) const;
  std::vector<Assignment> active() const;

  /// Elastic changes. Removing a busy agent drains it until its reservations end.
  void update_resources(const ResourceDelta& delta);
  /// Suspect agents stay in the view but receive no new work.
  void set_live(AgentId agent, bool live);
  /// Drops a dead agent from the view regardless of reservations.
  void remove_dead(AgentId agent);

  ResourceView view() const;
  std::optional<AgentEntry> agent(AgentId id) const;

 private:
  bool any_free_capacity() const;
  std::optional<Assignment> place(const TaskNode& task, const InputProfile& profile);
  std::vector<AgentId> choose(const TaskNode& task, const InputProfile& profile, std::vector<AgentId> candidates);
  void defer(const TaskNode& task, const std::string& reason);
  void emit(json record);

  mutable std::mutex mu_;
  SchedulingPolicy policy_;
  TraceSink* trace_;
  ResourceView view_;
  std::map<TaskId, Assignment> active_;
  std::set<std::pair<TaskId, int>> deferred_;
  std::size_t rr_cursor_ = 0;
};

}  // namespace peerflow
