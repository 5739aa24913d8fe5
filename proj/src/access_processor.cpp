#include "peerflow/access_processor.hpp"

#include <deque>
#include <sstream>

#include <spdlog/spdlog.h>

namespace peerflow {

bool ApplicationSummary::finished() const {
  std::size_t terminal = count(TaskState::COMPLETED) + count(TaskState::FAILED) + count(TaskState::CANCELLED);
  return terminal == total;
}

ApplicationId AccessProcessor::open_application(std::optional<ApplicationId> id) {
  std::lock_guard lock(mu_);
  ApplicationId app = id.value_or(ApplicationId::random());
  auto [it, inserted] = apps_.try_emplace(app);
  if (!inserted) throw Error(Errc::InvalidArgument, "application " + app.str() + " already exists");
  it->second.graph.app = app;
  return app;
}

bool AccessProcessor::has_application(ApplicationId app) const {
  std::lock_guard lock(mu_);
  return apps_.contains(app);
}

std::vector<ApplicationId> AccessProcessor::applications() const {
  std::lock_guard lock(mu_);
  std::vector<ApplicationId> out;
  for (const auto& [id, _] : apps_) out.push_back(id);
  return out;
}

AccessProcessor::App& AccessProcessor::app_or_throw(ApplicationId app) {
  auto it = apps_.find(app);
  if (it == apps_.end()) throw Error(Errc::UnknownApplication, app.str());
  return it->second;
}

const AccessProcessor::App& AccessProcessor::app_or_throw(ApplicationId app) const {
  auto it = apps_.find(app);
  if (it == apps_.end()) throw Error(Errc::UnknownApplication, app.str());
  return it->second;
}

TaskNode& AccessProcessor::locate(TaskId id) {
  auto it = task_app_.find(id);
  if (it == task_app_.end()) throw Error(Errc::UnknownTask, id.str());
  return apps_.at(it->second).graph.nodes.at(id);
}

const TaskNode& AccessProcessor::locate(TaskId id) const {
  auto it = task_app_.find(id);
  if (it == task_app_.end()) throw Error(Errc::UnknownTask, id.str());
  return apps_.at(it->second).graph.nodes.at(id);
}

void AccessProcessor::set_state(App& app, TaskNode& node, LifecycleEvent ev) {
  TaskState next = transition(node.state, ev);
  bool was_terminal = is_terminal(node.state);
  if (node.state == TaskState::READY) ready_.erase({node.seq, node.task_id});
  node.state = next;
  if (next == TaskState::READY) ready_.insert({node.seq, node.task_id});
  if (!was_terminal && is_terminal(next)) --app.active;
  if (was_terminal && !is_terminal(next)) ++app.active;
}

DataVersion AccessProcessor::put(ApplicationId app_id, DataId data) {
  std::lock_guard lock(mu_);
  auto& app = app_or_throw(app_id);
  if (!app.graph.open) throw Error(Errc::ApplicationClosed, app_id.str());
  auto [it, inserted] = app.graph.last_writer.try_emplace(data, LastWriter{std::nullopt, DataVersion{data, 0}});
  if (!inserted) throw Error(Errc::InvalidArgument, "data " + data.str() + " already exists");
  return it->second.version;
}

bool AccessProcessor::knows_data(ApplicationId app_id, DataId data) const {
  std::lock_guard lock(mu_);
  return app_or_throw(app_id).graph.last_writer.contains(data);
}

TaskId AccessProcessor::register_task(ApplicationId app_id, TaskSpec spec) {
  validate(spec);
  std::lock_guard lock(mu_);
  auto& app = app_or_throw(app_id);
  auto& g = app.graph;
  if (!g.open) throw Error(Errc::ApplicationClosed, app_id.str());
  for (const auto& p : spec.params) {
    if (reads(p.mode) && !g.last_writer.contains(p.data))
      throw Error(Errc::UnknownData, "task reads " + p.data.str() + " which was never written nor put");
  }

  spec.app = app_id;
  TaskNode node;
  node.task_id = TaskId::random();
  node.seq = next_seq_++;
  bool doomed = false;
  for (const auto& p : spec.params) {
    auto lw = g.last_writer.find(p.data);
    if (reads(p.mode)) {
      node.reads.push_back(lw->second.version);
      if (lw->second.task) {
        const auto& producer = g.nodes.at(*lw->second.task);
        if (producer.state != TaskState::COMPLETED) {
          node.preds.insert(producer.task_id);
          if (is_terminal(producer.state)) doomed = true;
        }
      }
    }
    if (writes(p.mode)) {
      std::uint64_t next = lw == g.last_writer.end() ? 1 : lw->second.version.version + 1;
      DataVersion v{p.data, next};
      node.writes.push_back(v);
      g.last_writer[p.data] = LastWriter{node.task_id, v};
    }
  }
  node.spec = std::move(spec);

  TaskId id = node.task_id;
  for (const auto& pred : node.preds) g.nodes.at(pred).succs.insert(id);
  pending_preds_[id] = node.preds.size();
  task_app_.emplace(id, app_id);
  g.registration_order.push_back(id);
  auto& stored = g.nodes.emplace(id, std::move(node)).first->second;
  ++app.active;
  if (doomed) {
    stored.last_error = "a producer of an input failed";
    set_state(app, stored, LifecycleEvent::Cancelled);
    cv_.notify_all();
  } else if (stored.preds.empty()) {
    set_state(app, stored, LifecycleEvent::DepsSatisfied);
  }
  return id;
}

std::vector<TaskId> AccessProcessor::notify_completion(TaskId id, int attempt) {
  std::lock_guard lock(mu_);
  auto& node = locate(id);
  if (attempt != node.attempt) {
    spdlog::debug("discarding completion of {} attempt {} (current {})", id.str(), attempt, node.attempt);
    return {};
  }
  if (node.state == TaskState::COMPLETED) return {};
  auto& app = apps_.at(task_app_.at(id));
  set_state(app, node, LifecycleEvent::Succeeded);

  std::vector<TaskId> ready;
  for (const auto& s : node.succs) {
    auto& succ = app.graph.nodes.at(s);
    auto& pending = pending_preds_.at(s);
    if (pending > 0) --pending;
    if (pending == 0 && succ.state == TaskState::REGISTERED) {
      set_state(app, succ, LifecycleEvent::DepsSatisfied);
      ready.push_back(s);
    }
  }
  cv_.notify_all();
  return ready;
}

std::vector<TaskId> AccessProcessor::cancel_successors(App& app, const TaskNode& root) {
  std::vector<TaskId> cancelled;
  std::deque<TaskId> queue(root.succs.begin(), root.succs.end());
  std::set<TaskId> seen;
  while (!queue.empty()) {
    TaskId id = queue.front();
    queue.pop_front();
    if (!seen.insert(id).second) continue;
    auto& n = app.graph.nodes.at(id);
    if (!is_terminal(n.state)) {
      n.last_error = "cancelled: predecessor " + root.task_id.str() + " failed";
      set_state(app, n, LifecycleEvent::Cancelled);
      cancelled.push_back(id);
    }
    queue.insert(queue.end(), n.succs.begin(), n.succs.end());
  }
  return cancelled;
}

FailureOutcome AccessProcessor::notify_failure(TaskId id, int attempt, const std::string& reason) {
  std::lock_guard lock(mu_);
  auto& node = locate(id);
  FailureOutcome out;
  out.attempt = node.attempt;
  if (attempt != node.attempt || is_terminal(node.state)) {
    out.stale = true;
    return out;
  }
  auto& app = apps_.at(task_app_.at(id));
  node.last_error = reason;
  set_state(app, node, LifecycleEvent::Failed);
  node.assigned_agent.reset();
  node.assigned_agents.clear();
  if (node.attempt < max_attempts_) {
    set_state(app, node, LifecycleEvent::Resubmitted);
    ++node.attempt;
    set_state(app, node, LifecycleEvent::Requeued);
    out.resubmitted = true;
  } else {
    out.cancelled = cancel_successors(app, node);
  }
  out.attempt = node.attempt;
  cv_.notify_all();
  return out;
}

void AccessProcessor::mark_scheduled(TaskId id, const std::vector<AgentId>& agents) {
  std::lock_guard lock(mu_);
  auto& node = locate(id);
  auto& app = apps_.at(task_app_.at(id));
  set_state(app, node, LifecycleEvent::Scheduled);
  node.assigned_agents = agents;
  node.assigned_agent = agents.empty() ? std::nullopt : std::optional<AgentId>(agents.front());
}

bool AccessProcessor::mark_running(TaskId id, int attempt) {
  std::lock_guard lock(mu_);
  auto& node = locate(id);
  if (node.attempt != attempt || node.state != TaskState::SCHEDULED) return false;
  set_state(apps_.at(task_app_.at(id)), node, LifecycleEvent::Started);
  return true;
}

ApplicationSummary AccessProcessor::summarize(const App& app) const {
  ApplicationSummary s;
  s.app = app.graph.app;
  s.open = app.graph.open;
  s.total = app.graph.nodes.size();
  for (const auto& [_, n] : app.graph.nodes) ++s.counts[n.state];
  s.last_writer = app.graph.last_writer;
  return s;
}

ApplicationSummary AccessProcessor::wait_all(ApplicationId app_id, std::optional<std::chrono::milliseconds> timeout) {
  std::unique_lock lock(mu_);
  auto& app = app_or_throw(app_id);
  auto done = [&] { return app.active == 0; };
  if (timeout) {
    if (!cv_.wait_for(lock, *timeout, done)) throw Error(Errc::Timeout, "wait_all on " + app_id.str());
  } else {
    cv_.wait(lock, done);
  }
  app.graph.open = false;
  return summarize(app);
}

ApplicationSummary AccessProcessor::summary(ApplicationId app_id) const {
  std::lock_guard lock(mu_);
  return summarize(app_or_throw(app_id));
}

TaskState AccessProcessor::wait_task(TaskId id, std::optional<std::chrono::milliseconds> timeout) {
  std::unique_lock lock(mu_);
  const auto& node = locate(id);
  auto done = [&] { return is_terminal(node.state); };
  if (timeout) {
    if (!cv_.wait_for(lock, *timeout, done)) throw Error(Errc::Timeout, "waiting for task " + id.str());
  } else {
    cv_.wait(lock, done);
  }
  return node.state;
}

DepGraph AccessProcessor::graph_snapshot(ApplicationId app) const {
  std::lock_guard lock(mu_);
  return app_or_throw(app).graph;
}

TaskNode AccessProcessor::task(TaskId id) const {
  std::lock_guard lock(mu_);
  return locate(id);
}

ApplicationId AccessProcessor::application_of(TaskId id) const {
  std::lock_guard lock(mu_);
  auto it = task_app_.find(id);
  if (it == task_app_.end()) throw Error(Errc::UnknownTask, id.str());
  return it->second;
}

std::size_t AccessProcessor::ready_count() const {
  std::lock_guard lock(mu_);
  return ready_.size();
}

std::vector<std::pair<TaskId, int>> AccessProcessor::in_flight_on(AgentId agent) const {
  std::lock_guard lock(mu_);
  std::vector<std::pair<TaskId, int>> out;
  for (const auto& [_, app] : apps_) {
    for (const auto& [id, n] : app.graph.nodes) {
      if (n.state != TaskState::SCHEDULED && n.state != TaskState::RUNNING) continue;
      for (const auto& a : n.assigned_agents) {
        if (a == agent) {
          out.emplace_back(id, n.attempt);
          break;
        }
      }
    }
  }
  return out;
}

// --- graph utilities --------------------------------------------------------

std::optional<std::vector<TaskId>> topological_order(const DepGraph& g) {
  std::map<TaskId, std::size_t> indegree;
  for (const auto& [id, n] : g.nodes) indegree[id] = 0;
  for (const auto& [id, n] : g.nodes)
    for (const auto& s : n.succs)
      if (indegree.contains(s)) ++indegree[s];
  std::deque<TaskId> queue;
  for (const auto& id : g.registration_order)
    if (indegree[id] == 0) queue.push_back(id);
  std::vector<TaskId> order;
  while (!queue.empty()) {
    TaskId id = queue.front();
    queue.pop_front();
    order.push_back(id);
    for (const auto& s : g.nodes.at(id).succs)
      if (--indegree[s] == 0) queue.push_back(s);
  }
  if (order.size() != g.nodes.size()) return std::nullopt;
  return order;
}

std::size_t edge_count(const DepGraph& g) {
  std::size_t n = 0;
  for (const auto& [_, node] : g.nodes) n += node.preds.size();
  return n;
}

void to_json(json& j, const LastWriter& w) {
  j = json{{"task_id", w.task ? json(*w.task) : json(nullptr)}, {"version", w.version}};
}
void from_json(const json& j, LastWriter& w) {
  if (j.at("task_id").is_null()) w.task.reset();
  else w.task = j.at("task_id").get<TaskId>();
  j.at("version").get_to(w.version);
}

void to_json(json& j, const TaskNode& n) {
  j = json{{"task_id", n.task_id},
           {"spec", n.spec},
           {"state", n.state},
           {"reads", n.reads},
           {"writes", n.writes},
           {"preds", n.preds},
           {"succs", n.succs},
           {"assigned_agent", n.assigned_agent ? json(*n.assigned_agent) : json(nullptr)},
           {"attempt", n.attempt}};
  if (n.assigned_agents.size() > 1) j["assigned_agents"] = n.assigned_agents;
  if (!n.last_error.empty()) j["error"] = n.last_error;
}
void from_json(const json& j, TaskNode& n) {
  j.at("task_id").get_to(n.task_id);
  j.at("spec").get_to(n.spec);
  j.at("state").get_to(n.state);
  j.at("reads").get_to(n.reads);
  j.at("writes").get_to(n.writes);
  j.at("preds").get_to(n.preds);
  j.at("succs").get_to(n.succs);
  if (j.contains("assigned_agent") && !j.at("assigned_agent").is_null())
    n.assigned_agent = j.at("assigned_agent").get<AgentId>();
  if (j.contains("assigned_agents")) j.at("assigned_agents").get_to(n.assigned_agents);
  else if (n.assigned_agent) n.assigned_agents = {*n.assigned_agent};
  n.attempt = j.value("attempt", 1);
  n.last_error = j.value("error", std::string{});
}

void to_json(json& j, const DepGraph& g) {
  json nodes = json::array();
  for (const auto& id : g.registration_order) nodes.push_back(g.nodes.at(id));
  json lw = json::object();
  for (const auto& [d, w] : g.last_writer) lw[d.str()] = w;
  j = json{{"app", g.app}, {"open", g.open}, {"nodes", nodes}, {"last_writer", lw},
           {"registration_order", g.registration_order}};
}
void from_json(const json& j, DepGraph& g) {
  j.at("app").get_to(g.app);
  g.open = j.value("open", true);
  g.nodes.clear();
  for (const auto& jn : j.at("nodes")) {
    auto n = jn.get<TaskNode>();
    g.nodes.emplace(n.task_id, std::move(n));
  }
  g.last_writer.clear();
  for (const auto& [k, v] : j.at("last_writer").items()) g.last_writer[DataId::parse(k)] = v.get<LastWriter>();
  j.at("registration_order").get_to(g.registration_order);
}

void to_json(json& j, const ApplicationSummary& s) {
  json counts = json::object();
  for (const auto& [st, n] : s.counts) counts[std::string(to_string(st))] = n;
  json lw = json::object();
  for (const auto& [d, w] : s.last_writer) lw[d.str()] = w;
  j = json{{"app", s.app}, {"open", s.open}, {"finished", s.finished()}, {"total", s.total},
           {"counts", counts}, {"last_writer", lw}};
}
void from_json(const json& j, ApplicationSummary& s) {
  j.at("app").get_to(s.app);
  s.open = j.value("open", true);
  s.total = j.value("total", std::size_t{0});
  s.counts.clear();
  for (const auto& [k, v] : j.at("counts").items()) s.counts[parse_task_state(k)] = v.get<std::size_t>();
  s.last_writer.clear();
  if (j.contains("last_writer"))
    for (const auto& [k, v] : j.at("last_writer").items()) s.last_writer[DataId::parse(k)] = v.get<LastWriter>();
}

std::string to_listing(const DepGraph& g) {
  std::ostringstream os;
  std::map<TaskId, std::size_t> index;
  for (std::size_t i = 0; i < g.registration_order.size(); ++i) index[g.registration_order[i]] = i + 1;
  for (const auto& id : g.registration_order) {
    const auto& n = g.nodes.at(id);
    os << 'T' << index[id] << ' ' << id.str() << ' ' << kind_name(n.spec.kind) << ':' << kind_target(n.spec.kind)
       << ' ' << to_string(n.state);
    if (!n.preds.empty()) {
      os << " <-";
      for (const auto& p : n.preds) os << " T" << index[p];
    }
    os << '\n';
  }
  return os.str();
}

std::string to_dot(const DepGraph& g) {
  std::ostringstream os;
  std::map<TaskId, std::size_t> index;
  for (std::size_t i = 0; i < g.registration_order.size(); ++i) index[g.registration_order[i]] = i + 1;
  os << "digraph \"" << g.app.str() << "\" {\n";
  for (const auto& id : g.registration_order) {
    const auto& n = g.nodes.at(id);
    os << "  T" << index[id] << " [label=\"T" << index[id] << "\\n" << kind_target(n.spec.kind) << "\\n"
       << to_string(n.state) << "\"];\n";
  }
  for (const auto& id : g.registration_order)
    for (const auto& s : g.nodes.at(id).succs) os << "  T" << index[id] << " -> T" << index[s] << ";\n";
  os << "}\n";
  return os.str();
}

}  // namespace peerflow
