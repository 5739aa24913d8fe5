// peerflow: agent daemon, localhost harness and operator commands.

#include <signal.h>
#include <unistd.h>

#include <climits>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "peerflow/cli.hpp"
#include "peerflow/trace.hpp"

using namespace peerflow;

namespace {

std::string self_exe() {
  char buf[PATH_MAX];
  auto n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) return {};
  buf[n] = '\0';
  return buf;
}

/// Blocks SIGINT/SIGTERM in every thread started afterwards; returns the set for sigwait.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

Endpoint master_of(const std::string& url) {
  try {
    return Endpoint::parse(url);
  } catch (const Error& e) {
    throw CliError(CliErrc::Usage, e.what());
  }
}

json get_or_unreachable(HttpClientPool& pool, const Endpoint& ep, const std::string& path) {
  try {
    return with_retries([&] { return pool.call(ep, "GET", path); });
  } catch (const Error& e) {
    if (e.code() == Errc::TargetUnreachable) throw CliError(CliErrc::MasterUnreachable, "master " + ep.str() + " unreachable");
    throw CliError(CliErrc::Usage, e.what());
  }
}

void print_progress(const json& s, std::string& last) {
  std::string line = "  ";
  auto counts = s.value("counts", json::object());
  for (const auto& [state, n] : counts.items()) line += state + "=" + n.dump() + " ";
  line += "total=" + s.value("total", json(0)).dump();
  if (line != last) {
    std::cerr << line << "\n";
    last = line;
  }
}

int cmd_agent(const std::string& config_text, const std::string& topology, const std::string& name, AgentConfig cfg,
              const std::string& trace) {
  if (!config_text.empty()) {
    auto j = json::parse(config_text, nullptr, false);
    if (j.is_discarded()) throw CliError(CliErrc::InvalidConfig, "--config is not valid JSON");
    try {
      cfg = j.get<AgentConfig>();
    } catch (const Error& e) {
      throw CliError(CliErrc::InvalidConfig, e.what());
    }
  } else if (!topology.empty()) {
    auto t = load_topology(topology);
    cfg = name.empty() ? t.agents.front() : t.find(name);
  }
  cfg.trace_path = trace;
  auto signals = block_stop_signals();
  std::unique_ptr<Agent> agent;
  try {
    agent = std::make_unique<Agent>(cfg);
    agent->start();
  } catch (const Error& e) {
    if (e.code() == Errc::PortInUse) throw CliError(CliErrc::PortInUse, e.what());
    if (e.code() == Errc::InvalidConfig) throw CliError(CliErrc::InvalidConfig, e.what());
    throw;
  }
  std::cout << json{{"name", cfg.name}, {"agent_id", agent->descriptor().agent_id}, {"endpoint", agent->endpoint().str()}}.dump()
            << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("signal {}; stopping", sig);
  agent->stop();
  return kExitOk;
}

int cmd_up(const std::string& topology, const std::string& log_dir, const std::string& log_level, bool as_json) {
  auto signals = block_stop_signals();
  HarnessOptions opts;
  opts.exe = self_exe();
  opts.log_dir = log_dir;
  opts.log_level = log_level;
  Harness h(load_topology(topology), opts);
  json out = json::array();
  for (const auto& n : h.names()) out.push_back(json{{"name", n}, {"endpoint", h.endpoint(n).str()}, {"pid", h.pid(n)}});
  if (as_json) {
    std::cout << out.dump() << std::endl;
  } else {
    for (const auto& a : out)
      std::cout << a["name"].get<std::string>() << "  http://" << a["endpoint"].get<std::string>() << "  pid "
                << a["pid"] << "\n";
    std::cout << "ctrl-c to tear down" << std::endl;
  }
  int sig = 0;
  sigwait(&signals, &sig);
  h.teardown();
  return kExitOk;
}

struct SubmitArgs {
  std::string demo;
  std::vector<std::string> args;
  std::string master;
  std::string topology;
  bool json = false;
  std::optional<std::int64_t> seed;
  std::string kill_agent;
  std::int64_t at_task = 0;
  std::vector<std::string> hints;
  std::string trace_out;
  std::string log_dir;
  std::string log_level;
};

int cmd_submit(SubmitArgs a) {
  if (a.master.empty() == a.topology.empty()) throw CliError(CliErrc::Usage, "give exactly one of --master or --topology");
  if (!a.kill_agent.empty() && a.topology.empty()) throw CliError(CliErrc::Usage, "--kill-agent needs --topology");
  // file arguments are read by the master, which may run elsewhere in the tree
  if (a.demo == "wordcount" && !a.args.empty() && std::filesystem::exists(a.args[0]))
    a.args[0] = std::filesystem::absolute(a.args[0]).string();

  SubmitOptions opts;
  opts.seed = a.seed;
  for (const auto& h : a.hints) {
    auto eq = h.find('=');
    if (eq == std::string::npos) throw CliError(CliErrc::Usage, "--hint expects key=value, got '" + h + "'");
    auto text = h.substr(eq + 1);
    auto parsed = json::parse(text, nullptr, false);
    opts.hints[h.substr(0, eq)] = parsed.is_array() || parsed.is_object() ? parsed : json(parse_literal(text));
  }
  std::string last;
  if (!a.json) opts.on_progress = [&](const json& s) { print_progress(s, last); };

  std::unique_ptr<Harness> harness;
  Endpoint master;
  if (!a.topology.empty()) {
    HarnessOptions ho;
    ho.exe = self_exe();
    ho.log_dir = a.log_dir;
    ho.log_level = a.log_level;
    harness = std::make_unique<Harness>(load_topology(a.topology), ho);
    master = harness->master();
    if (!a.kill_agent.empty()) {
      harness->topology().find(a.kill_agent);
      if (a.kill_agent == harness->topology().agents.front().name)
        throw CliError(CliErrc::Usage, "--kill-agent must name a worker, not the master");
      opts.kill_agent = a.kill_agent;
      opts.kill_at_task = a.at_task;
      opts.harness = harness.get();
    }
  } else {
    master = master_of(a.master);
  }

  auto out = submit_demo(master, a.demo, a.args, opts);
  if (!a.trace_out.empty()) {
    HttpClientPool pool;
    auto r = pool.request(master, "GET", "/trace");
    std::ofstream(a.trace_out) << r.body;
  }
  if (a.json) {
    std::cout << json{{"app", out.app},
                      {"ok", out.ok},
                      {"result", out.result},
                      {"elapsed_ms", out.elapsed_ms},
                      {"killed", out.killed},
                      {"summary", out.summary}}
                     .dump()
              << std::endl;
  } else {
    std::cout << "app " << out.app.str() << ": " << (out.ok ? "ok" : "FAILED") << " in " << static_cast<long>(out.elapsed_ms)
              << " ms\n";
    if (!out.result.empty()) std::cout << "result: " << out.result << "\n";
    if (out.summary.contains("program_error"))
      std::cout << "error: " << out.summary["program_error"].value("message", std::string()) << "\n";
  }
  return out.ok ? kExitOk : kExitTaskFailure;
}

int cmd_status(const std::string& url, bool as_json) {
  auto master = master_of(url);
  HttpClientPool pool;
  auto health = get_or_unreachable(pool, master, "/health");
  auto resources = get_or_unreachable(pool, master, "/resources");
  auto apps = get_or_unreachable(pool, master, "/applications");
  std::map<std::string, std::string> liveness;
  auto trace = pool.request(master, "GET", "/trace");
  std::istringstream in(trace.body);
  for (const auto& r : parse_trace(in))
    if (r.value("type", "") == "liveness") liveness[r.value("agent_name", "")] = r.value("to", "");
  if (as_json) {
    std::cout << json{{"master", health}, {"agents", resources["agents"]}, {"liveness", liveness}, {"applications", apps}}.dump()
              << std::endl;
    return kExitOk;
  }
  std::cout << "master " << health["name"].get<std::string>() << " up " << health["uptime_ms"] << " ms\n";
  std::cout << "agents:\n";
  for (const auto& e : resources["agents"]) {
    auto name = e["descriptor"]["name"].get<std::string>();
    auto state = liveness.contains(name) ? liveness[name] : (e["live"].get<bool>() ? "LIVE" : "SUSPECT");
    std::cout << "  " << name << "  " << e["descriptor"]["endpoint"].dump() << "  cores " << e["pool"]["reserved_cores"]
              << "/" << e["pool"]["total_cores"] << "  " << state << (e["draining"].get<bool>() ? " draining" : "") << "\n";
  }
  std::cout << "applications:\n";
  for (const auto& a : apps) {
    std::cout << "  " << a["app"].get<std::string>() << "  " << a.value("program", "?") << "  total " << a["total"];
    for (const auto& [state, n] : a["counts"].items()) std::cout << "  " << state << "=" << n;
    std::cout << "\n";
  }
  return kExitOk;
}

int cmd_graph(const std::string& url, const std::string& app, const std::string& format) {
  auto master = master_of(url);
  HttpClientPool pool;
  HttpResponse r;
  try {
    r = with_retries([&] { return pool.request(master, "GET", "/applications/" + app + "/graph?format=" + format); });
  } catch (const Error&) {
    throw CliError(CliErrc::MasterUnreachable, "master " + master.str() + " unreachable");
  }
  if (!r.ok()) {
    try {
      throw_http_error(r.status, r.body);
    } catch (const Error& e) {
      throw CliError(CliErrc::Usage, e.what());
    }
  }
  std::cout << r.body;
  if (!r.body.empty() && r.body.back() != '\n') std::cout << "\n";
  return kExitOk;
}

int cmd_stats(const std::string& file, bool as_json) {
  std::ifstream in(file);
  if (!in) throw CliError(CliErrc::Usage, "cannot read trace '" + file + "'");
  TraceStats s;
  try {
    s = trace_stats(in);
  } catch (const Error& e) {
    throw CliError(CliErrc::Usage, e.what());
  }
  if (as_json)
    std::cout << json(s).dump() << std::endl;
  else
    std::cout << render_table(s);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"peerflow: task-based runtime for edge-to-cloud agents"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  auto* agent = app.add_subcommand("agent", "run one agent daemon");
  AgentConfig cfg;
  std::string config_text, topology, agent_name, trace;
  agent->add_option("--config", config_text, "agent configuration as one JSON object");
  agent->add_option("--topology", topology, "topology file; serves the agent named by --agent (default: first)");
  agent->add_option("--agent", agent_name, "agent name within --topology");
  agent->add_option("--name", cfg.name)->capture_default_str();
  agent->add_option("--host", cfg.host)->capture_default_str();
  agent->add_option("--port", cfg.port)->capture_default_str();
  agent->add_option("--cores", cfg.cores)->capture_default_str();
  agent->add_option("--memory-mb", cfg.memory_mb)->capture_default_str();
  std::vector<std::string> tags, kinds;
  agent->add_option("--tags", tags, "software tags")->delimiter(',');
  agent->add_option("--kinds", kinds, "processor kinds (CPU,GPU)")->delimiter(',');
  agent->add_option("--trace", trace, "write the scheduling trace to this file");

  auto* up = app.add_subcommand("up", "start a localhost topology and keep it running");
  std::string up_topology, log_dir;
  bool up_json = false;
  up->add_option("--topology", up_topology, "topology file")->required();
  up->add_option("--log-dir", log_dir, "directory for agent logs and traces");
  up->add_flag("--json", up_json);

  auto* submit = app.add_subcommand("submit", "run a bundled demo and wait for it");
  SubmitArgs sa;
  submit->add_option("demo", sa.demo, "chain | diamond | wordcount | montecarlo-pi | gangdemo | ...")->required();
  submit->add_option("args", sa.args, "demo arguments");
  submit->add_option("--master", sa.master, "master agent URL");
  submit->add_option("--topology", sa.topology, "start this topology for the run; its first agent is the master");
  submit->add_flag("--json", sa.json, "machine-readable output");
  submit->add_option("--seed", sa.seed, "seed for randomized demos");
  submit->add_option("--kill-agent", sa.kill_agent, "SIGKILL this worker during the run");
  submit->add_option("--at-task", sa.at_task, "... once this many tasks have completed")->capture_default_str();
  submit->add_option("--hint", sa.hints, "key=value passed to the demo");
  submit->add_option("--trace-out", sa.trace_out, "save the master's scheduling trace here");
  submit->add_option("--log-dir", sa.log_dir, "directory for agent logs and traces (with --topology)");

  auto* status = app.add_subcommand("status", "show agents, liveness and applications of a master");
  std::string status_master;
  bool status_json = false;
  status->add_option("--master", status_master, "master agent URL")->required();
  status->add_flag("--json", status_json);

  auto* graph = app.add_subcommand("graph", "dump an application's dependency graph");
  std::string graph_master, graph_app, graph_format = "listing";
  graph->add_option("--master", graph_master, "master agent URL")->required();
  graph->add_option("--app", graph_app, "application id")->required();
  graph->add_option("--format", graph_format, "listing | dot | json")
      ->check(CLI::IsMember({"listing", "dot", "json"}))
      ->capture_default_str();

  auto* stats = app.add_subcommand("stats", "summarize a scheduling trace");
  std::string stats_file;
  bool stats_json = false;
  stats->add_option("trace", stats_file, "trace file")->required();
  stats->add_flag("--json", stats_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("peerflow"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (agent->parsed()) {
      for (const auto& t : tags) cfg.software_tags.insert(t);
      if (!kinds.empty()) {
        cfg.processor_kinds.clear();
        for (const auto& k : kinds) cfg.processor_kinds.insert(parse_processor_kind(k));
      }
      return cmd_agent(config_text, topology, agent_name, cfg, trace);
    }
    if (up->parsed()) return cmd_up(up_topology, log_dir, log_level, up_json);
    if (submit->parsed()) {
      sa.log_level = log_level;
      return cmd_submit(sa);
    }
    if (status->parsed()) return cmd_status(status_master, status_json);
    if (graph->parsed()) return cmd_graph(graph_master, graph_app, graph_format);
    if (stats->parsed()) return cmd_stats(stats_file, stats_json);
  } catch (const CliError& e) {
    std::cerr << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    if (e.code() == Errc::TargetUnreachable) return kExitConnectivity;
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
