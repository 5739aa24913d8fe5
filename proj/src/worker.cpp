#include "peerflow/worker.hpp"

#include <chrono>
#include <thread>

#include <spdlog/spdlog.h>

namespace peerflow {

void to_json(json& j, const VersionRef& r) {
  j = json{{"data", r.version.data}, {"version", r.version.version}, {"size_bytes", r.size_bytes}};
}
void from_json(const json& j, VersionRef& r) {
  j.at("data").get_to(r.version.data);
  j.at("version").get_to(r.version.version);
  r.size_bytes = j.value("size_bytes", std::uint64_t{0});
}

void to_json(json& j, const ExecutionRequest& r) {
  j = json{{"task_id", r.task_id},
           {"spec", r.spec},
           {"attempt", r.attempt},
           {"input_manifest", r.input_manifest},
           {"output_versions", r.output_versions},
           {"reply_to", r.reply_to},
           {"master", r.master},
           {"gang_rank", r.gang_rank},
           {"gang_size", r.gang_size}};
}
void from_json(const json& j, ExecutionRequest& r) {
  j.at("task_id").get_to(r.task_id);
  j.at("spec").get_to(r.spec);
  r.attempt = j.value("attempt", 1);
  r.input_manifest = j.value("input_manifest", std::vector<VersionRef>{});
  r.output_versions = j.value("output_versions", std::vector<DataVersion>{});
  j.at("reply_to").get_to(r.reply_to);
  j.at("master").get_to(r.master);
  r.gang_rank = j.value("gang_rank", 0);
  r.gang_size = j.value("gang_size", 1);
}

void to_json(json& j, const CompletionReport& r) {
  j = json{{"task_id", r.task_id}, {"attempt", r.attempt},   {"agent", r.agent},       {"gang_rank", r.gang_rank},
           {"ok", r.ok},           {"error", r.error},       {"message", r.message},   {"outputs", r.outputs},
           {"elapsed_ms", r.elapsed_ms}};
}
void from_json(const json& j, CompletionReport& r) {
  j.at("task_id").get_to(r.task_id);
  j.at("attempt").get_to(r.attempt);
  j.at("agent").get_to(r.agent);
  r.gang_rank = j.value("gang_rank", 0);
  r.ok = j.value("ok", true);
  r.error = j.value("error", std::string{});
  r.message = j.value("message", std::string{});
  r.outputs = j.value("outputs", std::vector<VersionRef>{});
  r.elapsed_ms = j.value("elapsed_ms", 0.0);
}

// --- RemoteHost ------------------------------------------------------------------

Bytes RemoteHost::load(const DataVersion& v) {
  if (auto b = blobs_->fetch(v)) return *b;
  return with_retries([&] {
    auto r = pool_->request(master_, "GET", data_path(v) + "?requester=" + self_.str());
    if (!r.ok()) throw_http_error(r.status, r.body);
    return from_body(r.body);
  });
}

void RemoteHost::store(const DataVersion& v, Bytes payload) {
  blobs_->put(v, std::make_shared<const Bytes>(std::move(payload)));
}

void RemoteHost::report(const CompletionReport& r) {
  if (killed_ && *killed_) return;
  try {
    with_retries([&] { pool_->call(master_, "POST", "/tasks/" + r.task_id.str() + "/completion", json(r)); });
  } catch (const Error& e) {
    spdlog::error("completion of task {} attempt {} not delivered: {}", r.task_id.str(), r.attempt, e.what());
  }
}

// --- Worker ----------------------------------------------------------------------

Worker::Worker(AgentId self, ResourcePool capacity, ExecutorRegistry registry)
    : self_(self), registry_(std::move(registry)), pool_(capacity) {
  pool_.reserved_cores = 0;
  pool_.reserved_memory_mb = 0;
}

Worker::~Worker() { join(); }

void Worker::submit(ExecutionRequest req, std::shared_ptr<ExecutionHost> host) {
  const auto& c = req.spec.constraints;
  {
    std::lock_guard lock(mu_);
    if (!seen_.insert({req.task_id, req.attempt, req.gang_rank}).second) return;
    if (draining_) {
      seen_.erase({req.task_id, req.attempt, req.gang_rank});
      throw Error(Errc::AgentDraining, "agent is draining");
    }
    if (!pool_.reserve(c.cores, c.memory_mb)) {
      seen_.erase({req.task_id, req.attempt, req.gang_rank});
      throw Error(Errc::RejectedNoCapacity, "needs " + std::to_string(c.cores) + " cores / " +
                                                std::to_string(c.memory_mb) + " MB, free " +
                                                std::to_string(pool_.free_cores()) + " / " +
                                                std::to_string(pool_.free_memory_mb()));
    }
    int peak = peak_cores_;
    while (pool_.reserved_cores > peak && !peak_cores_.compare_exchange_weak(peak, pool_.reserved_cores)) {
    }
    ++running_;
  }
  std::thread([this, req = std::move(req), host = std::move(host)] {
    execute(req, *host);
    std::lock_guard lock(mu_);
    if (--running_ == 0) idle_.notify_all();
  }).detach();
}

void Worker::execute(const ExecutionRequest& req, ExecutionHost& host) {
  auto start = std::chrono::steady_clock::now();
  CompletionReport rep;
  rep.task_id = req.task_id;
  rep.attempt = req.attempt;
  rep.agent = self_;
  rep.gang_rank = req.gang_rank;
  try {
    std::vector<Bytes> inputs;
    inputs.reserve(req.input_manifest.size());
    for (const auto& in : req.input_manifest) {
      try {
        inputs.push_back(host.load(in.version));
      } catch (const Error& e) {
        throw Error(Errc::MissingInput, to_string(in.version) + ": " + e.what());
      }
    }
    ExecContext ctx;
    ctx.task = req.task_id;
    ctx.gang_rank = req.gang_rank;
    ctx.gang_size = req.gang_size;
    auto expected = req.gang_rank == 0 ? req.output_versions.size() : 0;
    auto outputs = registry_.run(req.spec, inputs, req.gang_rank == 0 ? req.output_versions.size() : 0, ctx);
    if (outputs.size() != expected) throw Error(Errc::ExecutorError, "wrong number of outputs");
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      rep.outputs.push_back(VersionRef{req.output_versions[i], outputs[i].size()});
      host.store(req.output_versions[i], std::move(outputs[i]));
    }
  } catch (const Error& e) {
    rep.ok = false;
    rep.error = std::string(to_string(e.code()));
    rep.message = e.what();
    rep.outputs.clear();
  } catch (const std::exception& e) {
    rep.ok = false;
    rep.error = std::string(to_string(Errc::ExecutorError));
    rep.message = e.what();
    rep.outputs.clear();
  }
  rep.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  {
    std::lock_guard lock(mu_);
    pool_.release(req.spec.constraints.cores, req.spec.constraints.memory_mb);
  }
  ++executed_;
  if (!killed_) host.report(rep);
}

ResourcePool Worker::pool() const {
  std::lock_guard lock(mu_);
  return pool_;
}

std::size_t Worker::running() const {
  std::lock_guard lock(mu_);
  return running_;
}

void Worker::join() {
  std::unique_lock lock(mu_);
  idle_.wait(lock, [&] { return running_ == 0; });
}

}  // namespace peerflow
