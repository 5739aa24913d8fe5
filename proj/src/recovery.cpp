#include "peerflow/recovery.hpp"

#include <future>

#include <spdlog/spdlog.h>

namespace peerflow {

std::string_view to_string(Liveness l) {
  switch (l) {
    case Liveness::LIVE: return "LIVE";
    case Liveness::SUSPECT: return "SUSPECT";
    case Liveness::DEAD: return "DEAD";
  }
  return "?";
}

std::optional<LivenessTransition> LivenessTracker::observe(AgentId agent, bool answered, std::int64_t now_us) {
  std::lock_guard lock(mu_);
  auto [it, fresh] = records_.try_emplace(agent);
  auto& r = it->second;
  if (fresh) {
    r.agent = agent;
    r.last_seen_us = now_us;
  }
  auto before = r.status;
  if (before == Liveness::DEAD) return std::nullopt;
  if (answered) {
    r.last_seen_us = now_us;
    r.consecutive_misses = 0;
    r.status = Liveness::LIVE;
  } else {
    ++r.consecutive_misses;
    r.status = r.consecutive_misses >= k_ ? Liveness::DEAD : Liveness::SUSPECT;
  }
  if (r.status == before) return std::nullopt;
  return LivenessTransition{agent, before, r.status};
}

void LivenessTracker::reset(AgentId agent) {
  std::lock_guard lock(mu_);
  records_.erase(agent);
}

void LivenessTracker::forget(AgentId agent) { reset(agent); }

std::optional<LivenessRecord> LivenessTracker::record(AgentId agent) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(agent);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

ProbeLoop::ProbeLoop(ProbeConfig cfg, Targets targets, Prober prober, Listener on_transition, Observer on_probe)
    : cfg_(cfg),
      targets_(std::move(targets)),
      prober_(std::move(prober)),
      on_transition_(std::move(on_transition)),
      on_probe_(std::move(on_probe)),
      tracker_(cfg.misses_to_dead) {}

ProbeLoop::~ProbeLoop() { stop(); }

void ProbeLoop::start() {
  std::lock_guard lock(mu_);
  if (running_) return;
  running_ = true;
  thread_ = std::thread([this] {
    std::unique_lock lock(mu_);
    while (running_) {
      if (cv_.wait_for(lock, cfg_.period, [&] { return !running_; })) break;
      lock.unlock();
      try {
        tick();
      } catch (const std::exception& e) {
        spdlog::error("probe round failed: {}", e.what());
      }
      lock.lock();
    }
  });
}

void ProbeLoop::stop() {
  {
    std::lock_guard lock(mu_);
    if (!running_) return;
    running_ = false;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void ProbeLoop::tick() {
  auto agents = targets_();
  std::vector<std::future<bool>> answers;
  answers.reserve(agents.size());
  for (const auto& a : agents) answers.push_back(std::async(std::launch::async, [&, a] {
    try {
      return prober_(a);
    } catch (...) {
      return false;
    }
  }));
  auto now = now_us();
  for (std::size_t i = 0; i < agents.size(); ++i) {
    bool ok = answers[i].get();
    auto id = agents[i].descriptor.agent_id;
    if (on_probe_) on_probe_(id, ok);
    if (auto t = tracker_.observe(id, ok, now)) on_transition_(*t);
  }
}

std::set<TaskId> reclaim(AgentId dead, AccessProcessor& ap, Scheduler& scheduler, ReplicatedStore& store,
                         TraceSink* trace) {
  std::set<TaskId> resubmitted;
  scheduler.remove_dead(dead);
  store.purge_agent(dead);
  for (const auto& [task, attempt] : ap.in_flight_on(dead)) {
    if (auto a = scheduler.active_for(task); a && a->attempt == attempt) scheduler.release(*a);
    auto out = ap.notify_failure(task, attempt, "agent " + dead.str() + " lost");
    if (out.stale) continue;
    if (trace) {
      trace->emit(json{{"type", out.resubmitted ? "resubmit" : "complete"},
                       {"task_id", task},
                       {"attempt", out.attempt},
                       {"state", out.resubmitted ? "READY" : "FAILED"},
                       {"reason", "agent lost"}});
      if (out.resubmitted) trace->emit(json{{"type", "ready"}, {"task_id", task}, {"attempt", out.attempt}});
    }
    if (out.resubmitted) resubmitted.insert(task);
  }
  return resubmitted;
}

}  // namespace peerflow
