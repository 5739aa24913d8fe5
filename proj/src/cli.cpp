#include "peerflow/cli.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

namespace peerflow {

std::string_view to_string(CliErrc c) {
  switch (c) {
    case CliErrc::Usage: return "Usage";
    case CliErrc::UnknownDemo: return "UnknownDemo";
    case CliErrc::MasterUnreachable: return "MasterUnreachable";
    case CliErrc::StartupTimeout: return "StartupTimeout";
    case CliErrc::PortInUse: return "PortInUse";
    case CliErrc::InvalidConfig: return "InvalidConfig";
  }
  return "?";
}

int exit_code(CliErrc c) {
  switch (c) {
    case CliErrc::Usage:
    case CliErrc::UnknownDemo:
    case CliErrc::InvalidConfig: return kExitUsage;
    case CliErrc::MasterUnreachable:
    case CliErrc::StartupTimeout:
    case CliErrc::PortInUse: return kExitConnectivity;
  }
  return kExitUsage;
}

const AgentConfig& Topology::find(const std::string& name) const {
  for (const auto& a : agents)
    if (a.name == name) return a;
  throw CliError(CliErrc::Usage, "no agent named '" + name + "' in the topology");
}

Topology parse_topology(const json& j) {
  if (!j.is_object() || !j.contains("agents") || !j["agents"].is_array())
    throw CliError(CliErrc::InvalidConfig, "topology needs an \"agents\" list");
  if (j["agents"].empty()) throw CliError(CliErrc::InvalidConfig, "topology has no agents");
  json defaults = j.value("recovery", json::object());
  if (!defaults.is_object()) throw CliError(CliErrc::InvalidConfig, "\"recovery\" must be an object");
  if (j.contains("policy")) defaults["policy"] = j["policy"];
  Topology t;
  std::set<std::string> names;
  std::set<int> ports;
  for (const auto& entry : j["agents"]) {
    if (!entry.is_object()) throw CliError(CliErrc::InvalidConfig, "agent entries must be objects");
    json merged = defaults;
    merged.update(entry);
    AgentConfig c;
    try {
      merged.get_to(c);
      c.validate();
    } catch (const Error& e) {
      throw CliError(CliErrc::InvalidConfig, e.what());
    }
    if (!names.insert(c.name).second) throw CliError(CliErrc::InvalidConfig, "duplicate agent name '" + c.name + "'");
    if (c.port != 0 && !ports.insert(c.port).second)
      throw CliError(CliErrc::InvalidConfig, "duplicate port " + std::to_string(c.port));
    t.agents.push_back(std::move(c));
  }
  return t;
}

Topology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError(CliErrc::InvalidConfig, "cannot read topology '" + path + "'");
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw CliError(CliErrc::InvalidConfig, "topology '" + path + "' is not valid JSON");
  return parse_topology(j);
}

json topology_json(const Topology& t) {
  json agents = json::array();
  for (const auto& a : t.agents) agents.push_back(a);
  return json{{"agents", agents}};
}

int pick_free_port() {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw CliError(CliErrc::PortInUse, "socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  socklen_t len = sizeof(addr);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    ::close(fd);
    throw CliError(CliErrc::PortInUse, "no free port");
  }
  ::close(fd);
  return ntohs(addr.sin_port);
}

bool port_open(int port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return false;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  bool open = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0;
  ::close(fd);
  return open;
}

Harness::Harness(Topology topology, HarnessOptions opts)
    : topology_(std::move(topology)),
      opts_(std::move(opts)),
      pool_(Timeouts{std::chrono::milliseconds(500), std::chrono::milliseconds(5000)}) {
  if (opts_.exe.empty()) throw CliError(CliErrc::InvalidConfig, "harness needs the peerflow executable");
  auto deadline = std::chrono::steady_clock::now() + opts_.startup_timeout;
  try {
    std::multiset<int> taken;
    for (const auto& a : topology_.agents) taken.insert(a.port);
    for (auto& a : topology_.agents) {
      // a child may not have bound its port yet, so the kernel can hand it out twice
      while (a.port == 0 || (taken.count(a.port) > 1)) {
        taken.erase(taken.find(a.port));
        a.port = pick_free_port();
        taken.insert(a.port);
      }
      a.host = "127.0.0.1";
      spawn(a);
    }
    await_healthy(deadline);
    cross_register();
  } catch (...) {
    teardown();
    throw;
  }
}

Harness::~Harness() { teardown(); }

Endpoint Harness::endpoint(const std::string& name) const {
  const auto& a = topology_.find(name);
  return Endpoint{a.host, a.port};
}

pid_t Harness::pid(const std::string& name) const {
  auto it = pids_.find(name);
  return it == pids_.end() ? -1 : it->second;
}

std::vector<std::string> Harness::names() const {
  std::vector<std::string> out;
  for (const auto& a : topology_.agents) out.push_back(a.name);
  return out;
}

void Harness::spawn(const AgentConfig& cfg) {
  auto config = json(cfg).dump();
  std::string log = opts_.log_dir.empty() ? "/dev/null" : opts_.log_dir + "/" + cfg.name + ".log";
  std::string trace = opts_.log_dir.empty() ? "" : opts_.log_dir + "/" + cfg.name + ".trace";
  pid_t parent = ::getpid();
  pid_t pid = ::fork();
  if (pid < 0) throw CliError(CliErrc::StartupTimeout, "fork failed");
  if (pid == 0) {
    ::prctl(PR_SET_PDEATHSIG, SIGKILL);
    if (::getppid() != parent) ::_exit(127);
    int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      ::dup2(fd, STDOUT_FILENO);
      ::dup2(fd, STDERR_FILENO);
      ::close(fd);
    }
    sigset_t none;
    sigemptyset(&none);
    ::sigprocmask(SIG_SETMASK, &none, nullptr);
    std::vector<std::string> argv = {opts_.exe, "agent", "--config", config, "--log-level", opts_.log_level};
    if (!trace.empty()) {
      argv.push_back("--trace");
      argv.push_back(trace);
    }
    std::vector<char*> cargv;
    for (auto& a : argv) cargv.push_back(a.data());
    cargv.push_back(nullptr);
    ::execv(opts_.exe.c_str(), cargv.data());
    ::_exit(127);
  }
  pids_[cfg.name] = pid;
}

void Harness::await_healthy(std::chrono::steady_clock::time_point deadline) {
  std::set<std::string> waiting;
  for (const auto& a : topology_.agents) waiting.insert(a.name);
  while (!waiting.empty()) {
    for (auto it = waiting.begin(); it != waiting.end();) {
      int status = 0;
      if (::waitpid(pids_[*it], &status, WNOHANG) == pids_[*it]) {
        pids_.erase(*it);
        int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        if (code == kExitConnectivity)
          throw CliError(CliErrc::PortInUse, "agent '" + *it + "' could not bind port " + std::to_string(endpoint(*it).port));
        if (code == kExitUsage) throw CliError(CliErrc::InvalidConfig, "agent '" + *it + "' rejected its configuration");
        throw CliError(CliErrc::StartupTimeout, "agent '" + *it + "' exited during startup");
      }
      bool healthy = false;
      try {
        auto r = pool_.request(endpoint(*it), "GET", "/health");
        healthy = r.status == 200 && json::parse(r.body).value("pid", -1) == pids_[*it];
      } catch (const std::exception&) {
      }
      it = healthy ? waiting.erase(it) : std::next(it);
    }
    if (waiting.empty()) break;
    if (std::chrono::steady_clock::now() > deadline) {
      std::string names;
      for (const auto& n : waiting) names += (names.empty() ? "" : ", ") + n;
      throw CliError(CliErrc::StartupTimeout, "agents not healthy in time: " + names);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

void Harness::cross_register() {
  std::map<std::string, json> descriptors;
  for (const auto& a : topology_.agents)
    descriptors[a.name] = pool_.call(endpoint(a.name), "GET", "/health").at("descriptor");
  for (const auto& a : topology_.agents)
    for (const auto& b : topology_.agents) {
      if (a.name == b.name) continue;
      pool_.call(endpoint(a.name), "PUT", "/resources", json{{"op", "add"}, {"agent", descriptors[b.name]}});
    }
}

void Harness::kill(const std::string& name) {
  auto it = pids_.find(name);
  if (it == pids_.end()) return;
  ::kill(it->second, SIGKILL);
  ::waitpid(it->second, nullptr, 0);
  pids_.erase(it);
}

void Harness::teardown() {
  for (const auto& [_, pid] : pids_) ::kill(pid, SIGTERM);
  auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (!pids_.empty() && std::chrono::steady_clock::now() < deadline) {
    for (auto it = pids_.begin(); it != pids_.end();) {
      if (::waitpid(it->second, nullptr, WNOHANG) == it->second)
        it = pids_.erase(it);
      else
        ++it;
    }
    if (!pids_.empty()) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  for (const auto& [_, pid] : pids_) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
  }
  pids_.clear();
}

Scalar parse_literal(const std::string& s) {
  if (s.empty()) return s;
  try {
    std::size_t pos = 0;
    auto i = std::stoll(s, &pos);
    if (pos == s.size()) return i;
  } catch (const std::exception&) {
  }
  try {
    std::size_t pos = 0;
    auto d = std::stod(s, &pos);
    if (pos == s.size()) return d;
  } catch (const std::exception&) {
  }
  return s;
}

namespace {

std::size_t count_of(const json& summary, const char* state) {
  if (!summary.contains("counts")) return 0;
  return summary["counts"].value(state, std::size_t{0});
}

}  // namespace

SubmitOutcome submit_demo(const Endpoint& master, const std::string& demo, const std::vector<std::string>& args,
                          SubmitOptions opts) {
  if (opts.kill_agent && !opts.harness)
    throw CliError(CliErrc::Usage, "--kill-agent needs a harness-managed topology (--topology)");
  HttpClientPool pool(Timeouts{std::chrono::milliseconds(1000), std::chrono::milliseconds(30000)});
  json literals = json::array();
  for (const auto& a : args) literals.push_back(parse_literal(a));
  json hints = opts.hints.is_object() ? opts.hints : json::object();
  if (opts.seed) hints["seed"] = *opts.seed;
  json body{{"main", demo}, {"literals", literals}, {"hints", hints}};

  auto call = [&](const std::string& method, const std::string& path, const json& b) {
    try {
      return with_retries([&] { return pool.call(master, method, path, b); });
    } catch (const Error& e) {
      if (e.code() == Errc::TargetUnreachable) throw CliError(CliErrc::MasterUnreachable, "master " + master.str() + " unreachable");
      if (e.code() == Errc::UnknownProgram) throw CliError(CliErrc::UnknownDemo, "unknown demo '" + demo + "'");
      throw CliError(CliErrc::Usage, e.what());
    }
  };

  SubmitOutcome out;
  auto t0 = std::chrono::steady_clock::now();
  out.app = call("POST", "/applications", body).at("app").get<ApplicationId>();
  auto path = "/applications/" + out.app.str();
  for (;;) {
    out.summary = call("GET", path, nullptr);
    if (opts.on_progress) opts.on_progress(out.summary);
    bool done = out.summary.value("program_done", false);
    if (opts.kill_agent && !out.killed && !done &&
        count_of(out.summary, "COMPLETED") >= static_cast<std::size_t>(opts.kill_at_task)) {
      out.completed_at_kill = count_of(out.summary, "COMPLETED");
      opts.harness->kill(*opts.kill_agent);
      out.killed_at_us = now_us();
      out.killed = true;
      spdlog::info("killed agent {} after {} completed task(s)", *opts.kill_agent, out.completed_at_kill);
    }
    if (done) break;
    bool kill_pending = opts.kill_agent && !out.killed;
    std::this_thread::sleep_for(kill_pending ? std::chrono::milliseconds(2) : opts.poll);
  }
  out.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  out.result = out.summary.value("result", std::string());
  out.ok = !out.summary.contains("program_error") && count_of(out.summary, "FAILED") == 0 &&
           count_of(out.summary, "CANCELLED") == 0;
  return out;
}

}  // namespace peerflow
