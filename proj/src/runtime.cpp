#include "peerflow/runtime.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace peerflow {

class Runtime::LocalHost final : public ExecutionHost {
 public:
  explicit LocalHost(Runtime& rt) : rt_(rt) {}

  Bytes load(const DataVersion& v) override { return rt_.read(v); }

  void store(const DataVersion& v, Bytes payload) override {
    std::lock_guard lock(rt_.pending_mu_);
    rt_.pending_[v] = std::make_shared<const Bytes>(std::move(payload));
  }

  void report(const CompletionReport& r) override {
    if (rt_.stopped_) return;
    try {
      rt_.on_completion(r);
    } catch (const std::exception& e) {
      spdlog::error("local completion of {} failed: {}", r.task_id.str(), e.what());
    }
  }

 private:
  Runtime& rt_;
};

Runtime::Runtime(AgentDescriptor self, RuntimeConfig cfg, std::shared_ptr<LocalBlobStore> blobs, Worker& worker,
                 std::shared_ptr<HttpClientPool> pool, TraceSink& trace)
    : self_(std::move(self)),
      cfg_(cfg),
      blobs_(std::move(blobs)),
      worker_(worker),
      pool_(std::move(pool)),
      probe_pool_(std::make_shared<HttpClientPool>(Timeouts{cfg.probe.timeout, cfg.probe.timeout})),
      trace_(trace),
      ap_(cfg.max_attempts),
      scheduler_(cfg.policy, &trace),
      store_([this](AgentId id) -> std::shared_ptr<BlobPeer> {
        if (id == self_.agent_id) return blobs_;
        auto entry = scheduler_.agent(id);
        if (!entry) return nullptr;
        return std::make_shared<HttpBlobPeer>(pool_, entry->descriptor.endpoint);
      }),
      local_host_(std::make_shared<LocalHost>(*this)),
      dispatch_pool_(std::make_unique<httplib::ThreadPool>(cfg.dispatch_threads)) {
  ResourceDelta d;
  d.op = ResourceDelta::Op::Add;
  d.agent = self_;
  d.agent_id = self_.agent_id;
  scheduler_.update_resources(d);
  names_[self_.agent_id] = self_.name;

  probe_ = std::make_unique<ProbeLoop>(
      cfg_.probe,
      [this] {
        std::vector<AgentEntry> out;
        for (const auto& [id, e] : scheduler_.view().agents)
          if (id != self_.agent_id) out.push_back(e);
        return out;
      },
      [this](const AgentEntry& e) {
        auto r = probe_pool_->request(e.descriptor.endpoint, "GET", "/health");
        return r.status == 200;
      },
      [this](const LivenessTransition& t) { on_liveness(t); },
      [this](AgentId id, bool ok) {
        if (!ok) return;
        auto rec = probe_->tracker().record(id);
        if (!rec || rec->status != Liveness::DEAD) scheduler_.set_live(id, true);
      });
}

Runtime::~Runtime() { stop(); }

void Runtime::start() {
  if (cfg_.probing) probe_->start();
}

void Runtime::stop() {
  if (stopped_.exchange(true)) return;
  probe_->stop();
  dispatch_pool_->shutdown();
}

std::string Runtime::agent_name(AgentId id) const {
  std::lock_guard lock(names_mu_);
  auto it = names_.find(id);
  return it == names_.end() ? id.str() : it->second;
}

ApplicationId Runtime::open_application() { return ap_.open_application(); }

DataVersion Runtime::put(ApplicationId app, DataId data, Bytes payload, std::optional<AgentId> home) {
  auto where = home.value_or(self_.agent_id);
  if (where != self_.agent_id && !scheduler_.agent(where)) throw Error(Errc::UnknownAgent, where.str());
  auto v = ap_.put(app, data);
  store_.make_persistent(v, std::move(payload), where);
  return v;
}

TaskId Runtime::register_task(ApplicationId app, TaskSpec spec) {
  spec.app = app;
  auto id = ap_.register_task(app, std::move(spec));
  if (ap_.task(id).state == TaskState::READY) emit_ready({id});
  schedule();
  return id;
}

ApplicationSummary Runtime::wait_all(ApplicationId app, std::optional<std::chrono::milliseconds> timeout) {
  auto s = ap_.wait_all(app, timeout);
  flush_pending();
  return s;
}

Bytes Runtime::read(const DataVersion& v) {
  {
    std::lock_guard lock(pending_mu_);
    if (auto it = pending_.find(v); it != pending_.end()) return *it->second;
  }
  return store_.get(v, self_.agent_id);
}

bool Runtime::is_pending(const DataVersion& v) const {
  std::lock_guard lock(pending_mu_);
  return pending_.contains(v);
}

void Runtime::flush_pending() {
  std::vector<std::pair<DataVersion, std::shared_ptr<const Bytes>>> items;
  {
    std::lock_guard lock(pending_mu_);
    items.assign(pending_.begin(), pending_.end());
  }
  std::vector<VersionRef> refs;
  for (const auto& [v, b] : items) refs.push_back(VersionRef{v, b->size()});
  ensure_persisted(refs);
}

void Runtime::ensure_persisted(const std::vector<VersionRef>& inputs) {
  for (const auto& in : inputs) {
    std::shared_ptr<const Bytes> bytes;
    {
      std::lock_guard lock(pending_mu_);
      auto it = pending_.find(in.version);
      if (it == pending_.end()) continue;
      bytes = it->second;
    }
    store_.make_persistent(in.version, *bytes, self_.agent_id);
    std::lock_guard lock(pending_mu_);
    pending_.erase(in.version);
  }
}

Bytes Runtime::serve(const DataVersion& v, AgentId requester) {
  if (requester == self_.agent_id) return read(v);
  ensure_persisted({VersionRef{v, 0}});
  return store_.get(v, requester);
}

std::optional<ObjectInfo> Runtime::locate(const DataVersion& v) {
  {
    std::lock_guard lock(pending_mu_);
    if (auto it = pending_.find(v); it != pending_.end()) return ObjectInfo{it->second->size(), {self_.agent_id}};
  }
  return store_.stat(v);
}

void Runtime::emit_ready(const std::vector<TaskId>& ids) {
  for (const auto& id : ids) trace_.emit(json{{"type", "ready"}, {"task_id", id}, {"attempt", ap_.task(id).attempt}});
}

void Runtime::schedule() {
  if (stopped_) return;
  std::vector<std::pair<Assignment, TaskNode>> todo;
  {
    std::lock_guard lock(sched_mu_);
    auto assignments = ap_.with_ready([&](auto range) {
      return scheduler_.assign(range, [this](const DataVersion& v) { return locate(v); });
    });
    for (auto& a : assignments) {
      ap_.mark_scheduled(a.task_id, a.agent_ids);
      auto node = ap_.task(a.task_id);
      todo.emplace_back(std::move(a), std::move(node));
    }
  }
  for (auto& [a, node] : todo) dispatch(a, node);
}

void Runtime::dispatch(const Assignment& a, const TaskNode& node) {
  std::vector<VersionRef> manifest;
  for (const auto& v : node.reads) {
    auto info = locate(v);
    manifest.push_back(VersionRef{v, info ? info->size_bytes : 0});
  }
  const int size = static_cast<int>(a.agent_ids.size());
  for (int rank = 0; rank < size; ++rank) {
    ExecutionRequest req;
    req.task_id = node.task_id;
    req.spec = node.spec;
    req.attempt = node.attempt;
    req.input_manifest = manifest;
    req.output_versions = node.writes;
    req.reply_to = self_.endpoint;
    req.master = self_.agent_id;
    req.gang_rank = rank;
    req.gang_size = size;
    auto target = a.agent_ids[rank];
    if (target == self_.agent_id) {
      try {
        worker_.submit(std::move(req), local_host_);
        ap_.mark_running(node.task_id, node.attempt);
      } catch (const Error& e) {
        fail_attempt(node.task_id, node.attempt, e.what());
        return;
      }
    } else {
      dispatch_pool_->enqueue([this, req = std::move(req), target]() mutable { send_remote(std::move(req), target); });
    }
  }
}

void Runtime::send_remote(ExecutionRequest req, AgentId target) {
  auto entry = scheduler_.agent(target);
  if (!entry) {
    fail_attempt(req.task_id, req.attempt, "agent " + target.str() + " left the view");
    return;
  }
  try {
    ensure_persisted(req.input_manifest);
    {
      std::lock_guard lock(hook_mu_);
      if (interceptor_) interceptor_(req, target);
    }
  } catch (const Error& e) {
    fail_attempt(req.task_id, req.attempt, std::string("inputs not persisted: ") + e.what());
    return;
  }
  try {
    json body = req;
    for (int tries = 0;; ++tries) {
      try {
        with_retries([&] { pool_->call(entry->descriptor.endpoint, "POST", "/tasks", body); });
        break;
      } catch (const Error& e) {
        if (e.code() != Errc::RejectedNoCapacity || tries >= cfg_.capacity_retries) throw;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
    }
    ++remote_dispatches_;
    ap_.mark_running(req.task_id, req.attempt);
  } catch (const Error& e) {
    if (e.code() == Errc::TargetUnreachable) {
      spdlog::warn("agent {} unreachable; marking it suspect", agent_name(target));
      scheduler_.set_live(target, false);
    }
    fail_attempt(req.task_id, req.attempt, e.what());
  }
}

void Runtime::fail_attempt(TaskId task, int attempt, const std::string& reason) {
  if (auto a = scheduler_.active_for(task); a && a->attempt == attempt) scheduler_.release(*a);
  {
    std::lock_guard lock(gang_mu_);
    gangs_.erase({task, attempt});
  }
  auto out = ap_.notify_failure(task, attempt, reason);
  if (!out.stale) {
    spdlog::info("task {} attempt {} failed: {}", task.str(), attempt, reason);
    if (out.resubmitted) {
      trace_.emit(json{{"type", "resubmit"}, {"task_id", task}, {"attempt", out.attempt}, {"reason", reason}});
      emit_ready({task});
    } else {
      trace_.emit(json{{"type", "complete"}, {"task_id", task}, {"attempt", attempt}, {"state", "FAILED"},
                       {"reason", reason}});
      for (const auto& c : out.cancelled)
        trace_.emit(json{{"type", "complete"}, {"task_id", c}, {"attempt", 0}, {"state", "CANCELLED"}});
    }
  }
  schedule();
}

void Runtime::on_completion(const CompletionReport& r) {
  auto node = ap_.task(r.task_id);
  if (r.attempt != node.attempt || is_terminal(node.state)) return;
  if (!r.ok) {
    fail_attempt(r.task_id, r.attempt, r.error + ": " + r.message);
    return;
  }

  std::vector<VersionRef> outputs = r.outputs;
  AgentId producer = r.agent;
  if (node.spec.constraints.nodes > 1) {
    std::lock_guard lock(gang_mu_);
    auto& g = gangs_[{r.task_id, r.attempt}];
    g.done.insert(r.gang_rank);
    if (r.gang_rank == 0) {
      g.outputs = r.outputs;
      g.producer = r.agent;
    }
    if (static_cast<int>(g.done.size()) < node.spec.constraints.nodes) return;
    outputs = g.outputs;
    producer = g.producer;
    gangs_.erase({r.task_id, r.attempt});
  }

  if (producer != self_.agent_id) {
    try {
      for (const auto& o : outputs) {
        store_.adopt(o.version, o.size_bytes, producer);
        store_.replicate_to(o.version, self_.agent_id);
      }
    } catch (const Error& e) {
      fail_attempt(r.task_id, r.attempt, std::string("outputs not retrievable: ") + e.what());
      return;
    }
  }

  ap_.mark_running(r.task_id, r.attempt);
  auto ready = ap_.notify_completion(r.task_id, r.attempt);
  bool first = false;
  if (auto a = scheduler_.active_for(r.task_id); a && a->attempt == r.attempt) first = scheduler_.release(*a);
  if (first) {
    ++completed_;
    trace_.emit(json{{"type", "complete"},
                     {"task_id", r.task_id},
                     {"attempt", r.attempt},
                     {"state", "COMPLETED"},
                     {"agent", agent_name(producer)},
                     {"elapsed_ms", r.elapsed_ms}});
  }
  emit_ready(ready);
  schedule();
}

void Runtime::update_resources(const ResourceDelta& d) {
  if (d.op == ResourceDelta::Op::Add) {
    {
      std::lock_guard lock(names_mu_);
      names_[d.agent.agent_id] = d.agent.name;
    }
    probe_->tracker().reset(d.agent.agent_id);
  }
  scheduler_.update_resources(d);
  if (d.op == ResourceDelta::Op::Remove) probe_->tracker().forget(d.agent_id);
  schedule();
}

std::set<TaskId> Runtime::reclaim_agent(AgentId dead) {
  std::set<TaskId> out;
  {
    std::lock_guard lock(sched_mu_);
    auto start = now_us();
    out = reclaim(dead, ap_, scheduler_, store_, &trace_);
    spdlog::warn("agent {} declared dead; {} task(s) resubmitted in {} us", agent_name(dead), out.size(),
                 now_us() - start);
  }
  schedule();
  return out;
}

void Runtime::on_liveness(const LivenessTransition& t) {
  trace_.emit(json{{"type", "liveness"},
                   {"agent", t.agent},
                   {"agent_name", agent_name(t.agent)},
                   {"from", to_string(t.from)},
                   {"to", to_string(t.to)}});
  if (t.to == Liveness::SUSPECT) scheduler_.set_live(t.agent, false);
  if (t.to == Liveness::LIVE) scheduler_.set_live(t.agent, true);
  if (t.to == Liveness::DEAD) reclaim_agent(t.agent);
}

void Runtime::set_transport_interceptor(Interceptor fn) {
  std::lock_guard lock(hook_mu_);
  interceptor_ = std::move(fn);
}

}  // namespace peerflow
