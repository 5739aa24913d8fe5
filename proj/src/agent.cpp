#include "peerflow/agent.hpp"

#include <unistd.h>
#include <sys/socket.h>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace peerflow {

void AgentConfig::validate() const {
  if (name.empty()) throw Error(Errc::InvalidConfig, "agent name is empty");
  if (cores < 1) throw Error(Errc::InvalidConfig, "agent '" + name + "': cores must be >= 1");
  if (memory_mb < 0) throw Error(Errc::InvalidConfig, "agent '" + name + "': memory_mb must be >= 0");
  if (port < 0 || port > 65535) throw Error(Errc::InvalidConfig, "agent '" + name + "': port out of range");
  if (runtime.max_attempts < 1) throw Error(Errc::InvalidConfig, "max_attempts must be >= 1");
  if (runtime.probe.misses_to_dead < 1) throw Error(Errc::InvalidConfig, "misses_to_dead must be >= 1");
  if (runtime.probe.period.count() <= 0 || runtime.probe.timeout.count() <= 0)
    throw Error(Errc::InvalidConfig, "probe period and timeout must be positive");
}

void to_json(json& j, const AgentConfig& c) {
  j = json{{"name", c.name},
           {"host", c.host},
           {"port", c.port},
           {"cores", c.cores},
           {"memory_mb", c.memory_mb},
           {"software_tags", c.software_tags},
           {"processor_kinds", c.processor_kinds},
           {"max_attempts", c.runtime.max_attempts},
           {"probe_period_ms", c.runtime.probe.period.count()},
           {"probe_timeout_ms", c.runtime.probe.timeout.count()},
           {"misses_to_dead", c.runtime.probe.misses_to_dead},
           {"policy", to_string(c.runtime.policy)}};
}

void from_json(const json& j, AgentConfig& c) {
  try {
    c.name = j.at("name").get<std::string>();
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.cores = j.value("cores", c.cores);
    c.memory_mb = j.value("memory_mb", c.memory_mb);
    if (j.contains("software_tags")) c.software_tags = j["software_tags"].get<std::set<std::string>>();
    if (j.contains("processor_kinds")) {
      c.processor_kinds.clear();
      for (const auto& k : j["processor_kinds"]) c.processor_kinds.insert(parse_processor_kind(k.get<std::string>()));
    }
    c.runtime.max_attempts = j.value("max_attempts", c.runtime.max_attempts);
    c.runtime.probe.period = std::chrono::milliseconds(j.value("probe_period_ms", c.runtime.probe.period.count()));
    c.runtime.probe.timeout = std::chrono::milliseconds(j.value("probe_timeout_ms", c.runtime.probe.timeout.count()));
    c.runtime.probe.misses_to_dead = j.value("misses_to_dead", c.runtime.probe.misses_to_dead);
    if (j.contains("policy")) c.runtime.policy = parse_scheduling_policy(j["policy"].get<std::string>());
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::InvalidConfig) throw;
    throw Error(Errc::InvalidConfig, e.what());
  }
}

Agent::Agent(AgentConfig cfg, ProgramRegistry programs) : cfg_(std::move(cfg)), programs_(std::move(programs)) {
  cfg_.validate();
  self_.agent_id = AgentId::from_name(cfg_.name);
  self_.name = cfg_.name;
  self_.endpoint = Endpoint{cfg_.host, cfg_.port};
  self_.capacity = ResourcePool{cfg_.cores, cfg_.memory_mb, 0, 0};
  self_.software_tags = cfg_.software_tags;
  self_.processor_kinds = cfg_.processor_kinds;
  blobs_ = std::make_shared<LocalBlobStore>();
  pool_ = std::make_shared<HttpClientPool>();
  trace_ = std::make_unique<TraceSink>(cfg_.trace_path);
  worker_ = std::make_unique<Worker>(self_.agent_id, self_.capacity);
}

Agent::~Agent() {
  stop();
  if (worker_) worker_->join();
  std::map<ApplicationId, std::shared_ptr<AppRecord>> apps;
  {
    std::lock_guard lock(apps_mu_);
    apps.swap(apps_);
  }
  for (auto& [_, rec] : apps)
    if (rec->thread.joinable()) rec->thread.join();
}

void Agent::start() {
  server_ = std::make_unique<httplib::Server>();
  auto threads = static_cast<std::size_t>(cfg_.server_threads);
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  // no SO_REUSEPORT: a second agent on the same port must fail to bind
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  server_->set_tcp_nodelay(true);
  server_->set_keep_alive_max_count(100000);
  server_->set_keep_alive_timeout(1);
  server_->set_payload_max_length(std::size_t{1} << 31);

  int port = cfg_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(cfg_.host);
    if (port < 0) throw Error(Errc::PortInUse, "no free port on " + cfg_.host);
  } else if (!server_->bind_to_port(cfg_.host, port)) {
    throw Error(Errc::PortInUse, cfg_.host + ":" + std::to_string(port));
  }
  self_.endpoint.port = port;
  runtime_ = std::make_unique<Runtime>(self_, cfg_.runtime, blobs_, *worker_, pool_, *trace_);
  routes();
  started_us_ = now_us();
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  runtime_->start();
  spdlog::info("agent {} listening on {}", self_.name, self_.endpoint.str());
}

void Agent::wait() {
  std::unique_lock lock(stop_mu_);
  stop_cv_.wait(lock, [&] { return stopped_; });
}

void Agent::set_draining(bool d) {
  draining_ = d;
  worker_->set_draining(d);
}

void Agent::stop() {
  {
    std::lock_guard lock(stop_mu_);
    if (stopped_) return;
    stopped_ = true;
  }
  cancelled_ = true;
  set_draining(true);
  if (runtime_) runtime_->stop();
  worker_->join();
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
  apps_cv_.notify_all();
  stop_cv_.notify_all();
}

void Agent::kill() {
  {
    std::lock_guard lock(stop_mu_);
    if (stopped_) return;
    stopped_ = true;
  }
  cancelled_ = true;
  worker_->kill();
  set_draining(true);
  blobs_->set_online(false);
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
  if (runtime_) runtime_->stop();
  apps_cv_.notify_all();
  stop_cv_.notify_all();
}

namespace {

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) { send_json(res, http_status(e.code()), error_body(e)); }

Handler guarded(Handler fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const json::exception& e) {
      send_error(res, Error(Errc::InvalidArgument, e.what()));
    } catch (const std::exception& e) {
      send_json(res, 500, json{{"error", "Internal"}, {"message", e.what()}});
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::InvalidArgument, "request body is not JSON");
  return j;
}

DataVersion version_of(const httplib::Request& req) {
  return DataVersion{DataId::parse(req.matches[1].str()), std::stoull(req.matches[2].str())};
}

json replicas_json(const std::set<AgentId>& s) {
  json out = json::array();
  for (const auto& a : s) out.push_back(a);
  return out;
}

}  // namespace

json Agent::app_json(ApplicationId app, const ApplicationSummary& s) {
  json j = s;
  std::shared_ptr<AppRecord> rec;
  {
    std::lock_guard lock(apps_mu_);
    if (auto it = apps_.find(app); it != apps_.end()) rec = it->second;
  }
  if (rec) {
    std::lock_guard lock(apps_mu_);
    j["program"] = rec->program;
    j["program_done"] = rec->done;
    j["result"] = rec->result;
    if (!rec->error.empty()) j["program_error"] = json{{"error", rec->error}, {"message", rec->message}};
  }
  return j;
}

void Agent::start_program(ApplicationId app, const std::string& name, std::vector<Scalar> literals, json hints) {
  auto rec = std::make_shared<AppRecord>();
  rec->program = name;
  std::lock_guard lock(apps_mu_);
  apps_[app] = rec;
  if (name == "interactive") return;
  const auto& program = programs_.get(name);
  rec->thread = std::thread([this, rec, app, &program, literals = std::move(literals), hints = std::move(hints)] {
    ProgramContext ctx(*runtime_, app, literals, hints, &cancelled_);
    std::string err, msg;
    try {
      program(ctx);
      ctx.wait_all();
    } catch (const Error& e) {
      err = std::string(to_string(e.code()));
      msg = e.what();
    } catch (const std::exception& e) {
      err = "Internal";
      msg = e.what();
    }
    if (!err.empty()) spdlog::error("program {} failed: {}", rec->program, msg);
    std::lock_guard lock(apps_mu_);
    rec->done = true;
    rec->result = ctx.result();
    rec->error = err;
    rec->message = msg;
    apps_cv_.notify_all();
  });
}

void Agent::routes() {
  auto& s = *server_;
  auto resolve_agent = [this](const std::string& text) -> AgentId {
    if (auto u = Uuid::parse(text)) return AgentId{*u};
    for (const auto& [id, e] : runtime_->scheduler().view().agents)
      if (e.descriptor.name == text) return id;
    throw Error(Errc::UnknownAgent, "no agent '" + text + "'");
  };

  s.Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
    if (health_paused_) {
      send_json(res, 503, json{{"error", "AgentDraining"}, {"message", "paused"}});
      return;
    }
    send_json(res, 200,
              json{{"status", draining_ ? "draining" : "ok"},
                   {"agent_id", self_.agent_id},
                   {"name", self_.name},
                   {"endpoint", self_.endpoint},
                   {"uptime_ms", (now_us() - started_us_) / 1000},
                   {"pid", ::getpid()},
                   {"pool", worker_->pool()},
                   {"descriptor", self_},
                   {"draining", draining_.load()},
                   {"running", worker_->running()},
                   {"executed", worker_->executed()},
                   {"peak_cores", worker_->peak_cores()}});
  }));

  s.Post("/applications", guarded([this](const httplib::Request& req, httplib::Response& res) {
    if (draining_) throw Error(Errc::AgentDraining, self_.name);
    auto body = parse_body(req);
    std::string name = "interactive";
    if (body.contains("main")) {
      const auto& m = body["main"];
      if (m.is_string()) {
        name = m.get<std::string>();
      } else {
        auto kind = m.get<TaskKind>();
        if (!std::holds_alternative<BuiltinKind>(kind))
          throw Error(Errc::InvalidArgument, "main must be a BUILTIN program");
        name = kind_target(kind);
      }
    }
    if (name != "interactive" && !programs_.contains(name))
      throw Error(Errc::UnknownProgram, "no demo named '" + name + "'");
    std::vector<Scalar> literals;
    if (body.contains("literals")) literals = body["literals"].get<std::vector<Scalar>>();
    json hints = body.value("hints", json::object());
    if (hints.contains("policy")) runtime_->scheduler().set_policy(parse_scheduling_policy(hints["policy"].get<std::string>()));
    auto app = runtime_->open_application();
    start_program(app, name, std::move(literals), std::move(hints));
    send_json(res, 201, json{{"app", app}, {"program", name}});
  }));

  s.Get("/applications", guarded([this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& app : runtime_->access_processor().applications())
      out.push_back(app_json(app, runtime_->access_processor().summary(app)));
    send_json(res, 200, out);
  }));

  s.Get(R"(/applications/([0-9a-f-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto app = ApplicationId::parse(req.matches[1].str());
    auto& ap = runtime_->access_processor();
    ap.summary(app);  // UnknownApplication
    if (req.get_param_value("wait") == "true" || req.get_param_value("wait") == "1") {
      std::optional<std::int64_t> limit;
      if (req.has_param("timeout_ms")) limit = std::stoll(req.get_param_value("timeout_ms"));
      auto deadline = now_us() + limit.value_or(0) * 1000;
      std::shared_ptr<AppRecord> rec;
      {
        std::lock_guard lock(apps_mu_);
        if (auto it = apps_.find(app); it != apps_.end() && it->second->program != "interactive") rec = it->second;
      }
      for (;;) {
        if (cancelled_) throw Error(Errc::AgentDraining, "agent stopping");
        if (limit && now_us() >= deadline) throw Error(Errc::Timeout, "application still running");
        if (rec) {
          std::unique_lock lock(apps_mu_);
          if (apps_cv_.wait_for(lock, std::chrono::milliseconds(200), [&] { return rec->done || cancelled_.load(); }) &&
              rec->done)
            break;
        } else {
          try {
            runtime_->wait_all(app, std::chrono::milliseconds(200));
            break;
          } catch (const Error& e) {
            if (e.code() != Errc::Timeout) throw;
          }
        }
      }
    }
    send_json(res, 200, app_json(app, ap.summary(app)));
  }));

  s.Get(R"(/applications/([0-9a-f-]+)/graph)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto g = runtime_->access_processor().graph_snapshot(ApplicationId::parse(req.matches[1].str()));
    auto format = req.get_param_value("format");
    if (format == "dot") {
      res.set_content(to_dot(g), "text/vnd.graphviz");
    } else if (format == "listing") {
      res.set_content(to_listing(g), "text/plain");
    } else {
      send_json(res, 200, g);
    }
  }));

  s.Post("/tasks", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    if (body.contains("task_id")) {
      if (draining_) throw Error(Errc::AgentDraining, self_.name);
      auto r = body.get<ExecutionRequest>();
      auto host = std::make_shared<RemoteHost>(self_.agent_id, r.reply_to, blobs_, pool_, worker_->killed_flag());
      worker_->submit(std::move(r), host);
      send_json(res, 202, json{{"accepted", true}});
      return;
    }
    TaskSpec spec;
    ApplicationId app;
    if (body.contains("spec")) {
      spec = body["spec"].get<TaskSpec>();
      app = body.contains("app") ? body["app"].get<ApplicationId>() : spec.app;
    } else {
      spec = body.get<TaskSpec>();
      app = spec.app;
    }
    auto id = runtime_->register_task(app, std::move(spec));
    auto node = runtime_->access_processor().task(id);
    send_json(res, 201, json{{"task_id", id}, {"state", to_string(node.state)}, {"reads", node.reads}, {"writes", node.writes}});
  }));

  s.Get(R"(/tasks/([0-9a-f-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto id = TaskId::parse(req.matches[1].str());
    json j = runtime_->access_processor().task(id);
    j["app"] = runtime_->access_processor().application_of(id);
    send_json(res, 200, j);
  }));

  s.Post(R"(/tasks/([0-9a-f-]+)/completion)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto r = parse_body(req).get<CompletionReport>();
    if (r.task_id != TaskId::parse(req.matches[1].str())) throw Error(Errc::InvalidArgument, "task id mismatch");
    runtime_->on_completion(r);
    send_json(res, 200, json{{"ok", true}});
  }));

  s.Put("/resources", guarded([this, resolve_agent](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    auto op = body.value("op", std::string("add"));
    body["op"] = op;
    if (op == "add") {
      json agent = body.value("agent", json::object());
      if (body.contains("endpoint")) agent["endpoint"] = body["endpoint"];
      if (!agent.contains("agent_id")) {
        if (!agent.contains("endpoint")) throw Error(Errc::InvalidArgument, "add needs an agent or an endpoint");
        auto ep = agent["endpoint"].is_string() ? Endpoint::parse(agent["endpoint"].get<std::string>())
                                                : agent["endpoint"].get<Endpoint>();
        auto health = with_retries([&] { return pool_->call(ep, "GET", "/health"); });
        agent = health.at("descriptor");
      }
      body["agent"] = agent;
    } else if (!body.contains("agent_id") && body.contains("agent")) {
      body["agent_id"] = resolve_agent(body["agent"].get<std::string>());
    }
    auto delta = body.get<ResourceDelta>();
    runtime_->update_resources(delta);
    trace_->emit(json{{"type", "resources"}, {"op", op}, {"agent", delta.agent_id}});
    send_json(res, 200, json{{"agents", runtime_->scheduler().view()}});
  }));

  s.Get("/resources", guarded([this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json{{"self", self_.agent_id}, {"agents", runtime_->scheduler().view()}, {"pool", worker_->pool()}});
  }));

  const std::string data_re = R"(/data/([0-9a-f-]+)/(\d+))";

  s.Post(data_re, guarded([this, resolve_agent](const httplib::Request& req, httplib::Response& res) {
    auto v = version_of(req);
    auto bytes = from_body(req.body);
    if (req.has_param("local")) {
      blobs_->put(v, std::make_shared<const Bytes>(std::move(bytes)));
      res.status = 204;
      return;
    }
    std::optional<AgentId> home;
    if (req.has_param("home")) home = resolve_agent(req.get_param_value("home"));
    if (req.has_param("app")) {
      if (v.version != 0) throw Error(Errc::InvalidArgument, "an explicit put creates version 0");
      auto size = bytes.size();
      runtime_->put(ApplicationId::parse(req.get_param_value("app")), v.data, std::move(bytes), home);
      auto info = runtime_->store().stat(v);
      send_json(res, 201, json{{"version", v}, {"size_bytes", size}, {"replicas", replicas_json(info->replicas)}});
      return;
    }
    auto stored = runtime_->store().make_persistent(v, std::move(bytes), home.value_or(self_.agent_id));
    send_json(res, 201,
              json{{"version", v}, {"size_bytes", stored.size_bytes}, {"replicas", replicas_json(stored.replicas)}});
  }));

  s.Get(data_re, guarded([this, resolve_agent](const httplib::Request& req, httplib::Response& res) {
    auto v = version_of(req);
    Bytes bytes;
    if (req.has_param("local")) {
      auto b = blobs_->fetch(v);
      if (!b) throw Error(Errc::NotFound, to_string(v) + " not held by " + self_.name);
      bytes = *b;
    } else {
      auto requester = req.has_param("requester") ? resolve_agent(req.get_param_value("requester")) : self_.agent_id;
      bytes = runtime_->serve(v, requester);
    }
    if (req.get_param_value("format") == "text") {
      send_json(res, 200, json{{"version", v}, {"text", render(decode(bytes))}});
      return;
    }
    res.set_content(to_body(bytes), "application/octet-stream");
  }));

  s.Delete(data_re, guarded([this](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("local")) throw Error(Errc::InvalidArgument, "use /replicas/{agent} to drop a replica");
    blobs_->erase(version_of(req));
    res.status = 204;
  }));

  s.Get(data_re + "/locations", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto info = runtime_->locate(version_of(req));
    if (!info) {
      send_json(res, 200, json{{"known", false}, {"size_bytes", 0}, {"replicas", json::array()}});
      return;
    }
    send_json(res, 200, json{{"known", true}, {"size_bytes", info->size_bytes}, {"replicas", replicas_json(info->replicas)}});
  }));

  s.Post(data_re + R"(/replicas/([^/]+))", guarded([this, resolve_agent](const httplib::Request& req, httplib::Response& res) {
    auto v = version_of(req);
    auto target = resolve_agent(req.matches[3].str());
    if (runtime_->is_pending(v)) runtime_->flush_pending();
    send_json(res, 200, json{{"replicas", replicas_json(runtime_->store().replicate_to(v, target))}});
  }));

  s.Delete(data_re + R"(/replicas/([^/]+))", guarded([this, resolve_agent](const httplib::Request& req, httplib::Response& res) {
    auto v = version_of(req);
    auto target = resolve_agent(req.matches[3].str());
    send_json(res, 200, json{{"replicas", replicas_json(runtime_->store().drop(v, target))}});
  }));

  s.Get("/trace", guarded([this](const httplib::Request&, httplib::Response& res) {
    std::string out;
    for (const auto& r : trace_->records()) out += r.dump() + "\n";
    res.set_content(out, "application/x-ndjson");
  }));
}

}  // namespace peerflow
