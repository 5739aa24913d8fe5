#include "peerflow/scheduler.hpp"

namespace peerflow {

std::string_view to_string(SchedulingPolicy p) { return p == SchedulingPolicy::RoundRobin ? "round-robin" : "locality"; }

SchedulingPolicy parse_scheduling_policy(std::string_view s) {
  if (s == "locality") return SchedulingPolicy::Locality;
  if (s == "round-robin" || s == "round_robin" || s == "roundrobin" || s == "rr") return SchedulingPolicy::RoundRobin;
  throw Error(Errc::InvalidArgument, "unknown scheduling policy '" + std::string(s) + "'");
}

void Scheduler::emit(json record) {
  if (trace_) trace_->emit(std::move(record));
}

bool Scheduler::any_free_capacity() const {
  for (const auto& [_, a] : view_.agents)
    if (a.schedulable() && a.pool.free_cores() > 0) return true;
  return false;
}

void Scheduler::defer(const TaskNode& task, const std::string& reason) {
  if (!deferred_.insert({task.task_id, task.attempt}).second) return;
  emit(json{{"type", "defer"}, {"task_id", task.task_id}, {"attempt", task.attempt}, {"reason", reason}});
}

std::vector<AgentId> Scheduler::choose(const TaskNode& task, const InputProfile& profile,
                                       std::vector<AgentId> candidates) {
  const auto nodes = static_cast<std::size_t>(task.spec.constraints.nodes);
  if (policy_ == SchedulingPolicy::RoundRobin) {
    std::vector<AgentId> order;
    for (const auto& [id, _] : view_.agents) order.push_back(id);
    std::set<AgentId> eligible(candidates.begin(), candidates.end());
    std::vector<AgentId> picked;
    std::size_t last = rr_cursor_;
    for (std::size_t k = 0; k < order.size() && picked.size() < nodes; ++k) {
      std::size_t idx = (rr_cursor_ + k) % order.size();
      if (eligible.contains(order[idx])) {
        picked.push_back(order[idx]);
        last = idx;
      }
    }
    rr_cursor_ = last + 1;
    return picked;
  }

  struct Key {
    LocalityScore score;
    int free_cores;
    AgentId id;
  };
  std::vector<Key> keys;
  keys.reserve(candidates.size());
  for (const auto& id : candidates)
    keys.push_back(Key{profile.score(id), view_.agents.at(id).pool.free_cores(), id});
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.free_cores != b.free_cores) return a.free_cores > b.free_cores;
    return a.id < b.id;
  });
  std::vector<AgentId> picked;
  for (std::size_t i = 0; i < nodes && i < keys.size(); ++i) picked.push_back(keys[i].id);
  return picked;
}

std::optional<Assignment> Scheduler::place(const TaskNode& task, const InputProfile& profile) {
  const auto& c = task.spec.constraints;
  auto candidates = filter_candidates(task, view_);
  if (candidates.size() < static_cast<std::size_t>(c.nodes)) {
    defer(task, candidates.empty() ? "no agent satisfies the constraints"
                                   : "gang needs " + std::to_string(c.nodes) + " agents, " +
                                         std::to_string(candidates.size()) + " available");
    return std::nullopt;
  }
  auto chosen = choose(task, profile, std::move(candidates));

  Assignment a;
  a.task_id = task.task_id;
  a.attempt = task.attempt;
  a.agent_ids = chosen;
  for (const auto& id : chosen) {
    auto& entry = view_.agents.at(id);
    entry.pool.reserve(c.cores, c.memory_mb);
    a.reservation.push_back(Reservation{id, c.cores, c.memory_mb});
  }
  auto score = profile.score(chosen.front());
  a.input_bytes = profile.store_unavailable ? 0 : score.total_bytes;
  a.local_bytes = profile.store_unavailable ? 0 : score.local_bytes;
  active_[a.task_id] = a;

  json names = json::array();
  for (const auto& id : chosen) names.push_back(view_.agents.at(id).descriptor.name);
  emit(json{{"type", "assign"},
            {"task_id", a.task_id},
            {"attempt", a.attempt},
            {"agents", a.agent_ids},
            {"agent_names", names},
            {"input_bytes", a.input_bytes},
            {"local_bytes", a.local_bytes},
            {"policy", to_string(policy_)}});
  return a;
}

bool Scheduler::release(const Assignment& a) {
  std::lock_guard lock(mu_);
  auto it = active_.find(a.task_id);
  if (it == active_.end() || it->second.attempt != a.attempt) {
    spdlog::warn("release of task {} attempt {} ignored: no such reservation", a.task_id.str(), a.attempt);
    return false;
  }
  for (const auto& r : it->second.reservation) {
    auto entry = view_.agents.find(r.agent);
    if (entry == view_.agents.end()) continue;
    entry->second.pool.release(r.cores, r.memory_mb);
    if (entry->second.draining && entry->second.pool.reserved_cores == 0 &&
        entry->second.pool.reserved_memory_mb == 0)
      view_.agents.erase(entry);
  }
  emit(json{{"type", "release"}, {"task_id", a.task_id}, {"attempt", a.attempt}, {"agents", it->second.agent_ids}});
  active_.erase(it);
  return true;
}

std::optional<Assignment> Scheduler::active_for(TaskId task) const {
  std::lock_guard lock(mu_);
  auto it = active_.find(task);
  if (it == active_.end()) return std::nullopt;
  return it->second;
}

std::vector<Assignment> Scheduler::active() const {
  std::lock_guard lock(mu_);
  std::vector<Assignment> out;
  for (const auto& [_, a] : active_) out.push_back(a);
  return out;
}

void Scheduler::update_resources(const ResourceDelta& delta) {
  std::lock_guard lock(mu_);
  switch (delta.op) {
    case ResourceDelta::Op::Add: {
      const auto& d = delta.agent;
      if (d.capacity.total_cores < 1) throw Error(Errc::InvalidArgument, "agent needs at least one core");
      auto it = view_.agents.find(d.agent_id);
      if (it != view_.agents.end()) {
        auto& e = it->second;
        e.descriptor = d;
        e.pool.total_cores = d.capacity.total_cores;
        e.pool.total_memory_mb = d.capacity.total_memory_mb;
        e.live = true;
        e.draining = false;
        ++e.incarnation;
      } else {
        AgentEntry e;
        e.descriptor = d;
        e.pool = ResourcePool{d.capacity.total_cores, d.capacity.total_memory_mb, 0, 0};
        view_.agents.emplace(d.agent_id, std::move(e));
      }
      emit(json{{"type", "resources"}, {"op", "add"}, {"agent", d.agent_id}, {"agent_name", d.name}});
      break;
    }
    case ResourceDelta::Op::Remove: {
      auto it = view_.agents.find(delta.agent_id);
      if (it == view_.agents.end()) throw Error(Errc::UnknownAgent, delta.agent_id.str());
      auto& pool = it->second.pool;
      bool busy = pool.reserved_cores > 0 || pool.reserved_memory_mb > 0;
      if (busy) it->second.draining = true;
      else view_.agents.erase(it);
      emit(json{{"type", "resources"}, {"op", busy ? "drain" : "remove"}, {"agent", delta.agent_id}});
      break;
    }
    case ResourceDelta::Op::Resize: {
      auto it = view_.agents.find(delta.agent_id);
      if (it == view_.agents.end()) throw Error(Errc::UnknownAgent, delta.agent_id.str());
      auto& e = it->second;
      int cores = delta.cores.value_or(e.pool.total_cores);
      auto mem = delta.memory_mb.value_or(e.pool.total_memory_mb);
      if (cores < 1 || cores < e.pool.reserved_cores || mem < e.pool.reserved_memory_mb)
        throw Error(Errc::InvalidArgument, "resize below current reservations");
      e.pool.total_cores = cores;
      e.pool.total_memory_mb = mem;
      e.descriptor.capacity.total_cores = cores;
      e.descriptor.capacity.total_memory_mb = mem;
      emit(json{{"type", "resources"}, {"op", "resize"}, {"agent", delta.agent_id}});
      break;
    }
  }
}

void Scheduler::set_live(AgentId agent, bool live) {
  std::lock_guard lock(mu_);
  if (auto it = view_.agents.find(agent); it != view_.agents.end()) it->second.live = live;
}

void Scheduler::remove_dead(AgentId agent) {
  std::lock_guard lock(mu_);
  view_.agents.erase(agent);
}

ResourceView Scheduler::view() const {
  std::lock_guard lock(mu_);
  return view_;
}

std::optional<AgentEntry> Scheduler::agent(AgentId id) const {
  std::lock_guard lock(mu_);
  auto it = view_.agents.find(id);
  if (it == view_.agents.end()) return std::nullopt;
  return it->second;
}

// --- serialization ---------------------------------------------------------------

void to_json(json& j, const ResourceDelta& d) {
  switch (d.op) {
    case ResourceDelta::Op::Add: j = json{{"op", "add"}, {"agent", d.agent}}; break;
    case ResourceDelta::Op::Remove: j = json{{"op", "remove"}, {"agent_id", d.agent_id}}; break;
    case ResourceDelta::Op::Resize:
      j = json{{"op", "resize"}, {"agent_id", d.agent_id}};
      if (d.cores) j["cores"] = *d.cores;
      if (d.memory_mb) j["memory_mb"] = *d.memory_mb;
      break;
  }
}

void from_json(const json& j, ResourceDelta& d) {
  auto op = j.at("op").get<std::string>();
  if (op == "add") {
    d.op = ResourceDelta::Op::Add;
    j.at("agent").get_to(d.agent);
    d.agent_id = d.agent.agent_id;
  } else if (op == "remove") {
    d.op = ResourceDelta::Op::Remove;
    j.at("agent_id").get_to(d.agent_id);
  } else if (op == "resize") {
    d.op = ResourceDelta::Op::Resize;
    j.at("agent_id").get_to(d.agent_id);
    if (j.contains("cores")) d.cores = j.at("cores").get<int>();
    if (j.contains("memory_mb")) d.memory_mb = j.at("memory_mb").get<std::int64_t>();
  } else {
    throw Error(Errc::InvalidArgument, "unknown resource op '" + op + "'");
  }
}

void to_json(json& j, const AgentEntry& e) {
  j = json{{"descriptor", e.descriptor}, {"pool", e.pool}, {"live", e.live}, {"draining", e.draining},
           {"incarnation", e.incarnation}};
}

void to_json(json& j, const ResourceView& v) {
  j = json::array();
  for (const auto& [_, e] : v.agents) j.push_back(e);
}

void to_json(json& j, const Assignment& a) {
  json res = json::array();
  for (const auto& r : a.reservation)
    res.push_back(json{{"agent", r.agent}, {"cores", r.cores}, {"memory_mb", r.memory_mb}});
  j = json{{"task_id", a.task_id}, {"attempt", a.attempt}, {"agent_ids", a.agent_ids}, {"reservation", res},
           {"input_bytes", a.input_bytes}, {"local_bytes", a.local_bytes}};
}

}  // namespace peerflow
