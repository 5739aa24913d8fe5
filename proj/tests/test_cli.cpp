#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <signal.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "peerflow/cli.hpp"
#include "peerflow/trace.hpp"
#include "test_support.hpp"

using namespace peerflow;
using namespace peerflow::testing;

namespace {

struct CliRun {
  int exit = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  std::string cmd = std::string(PEERFLOW_EXE) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, n);
  int status = ::pclose(p);
  r.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::filesystem::path scratch() {
  auto dir = std::filesystem::temp_directory_path() / ("peerflow-cli-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

std::string write_file(const std::string& name, const std::string& text) {
  auto path = scratch() / name;
  std::ofstream(path) << text;
  return path.string();
}

std::string topology_file(const std::string& name, std::vector<json> agents, const json& extra = json::object()) {
  json t = extra;
  t["agents"] = agents;
  return write_file(name, t.dump());
}

json agent(const std::string& name, int cores, json tags = json::array()) {
  return json{{"name", name}, {"port", 0}, {"cores", cores}, {"memory_mb", 1024}, {"software_tags", tags}};
}

std::vector<json> records(std::initializer_list<json> rs) { return rs; }

CliErrc cli_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const CliError& e) {
    return e.code();
  }
  FAIL("no CliError thrown");
  return CliErrc::Usage;
}

bool alive(pid_t pid) { return ::kill(pid, 0) == 0; }

}  // namespace

TEST_CASE("trace stats: empty trace gives a zeroed table") {
  auto s = trace_stats(std::vector<json>{});
  CHECK(s.tasks_per_agent.empty());
  CHECK(s.transfer_bytes == 0);
  CHECK(s.locality_hit_rate == 0.0);
  CHECK(s.makespan_ms == 0.0);
  std::istringstream empty("");
  CHECK(trace_stats(empty).assignments == 0);
}

TEST_CASE("trace stats: hand-computed example") {
  auto s = trace_stats(records({
      {{"type", "ready"}, {"ts_us", 1000}, {"task_id", "t1"}},
      {{"type", "assign"}, {"ts_us", 1100}, {"agent_names", {"A"}}, {"input_bytes", 100}, {"local_bytes", 100}},
      {{"type", "assign"}, {"ts_us", 1200}, {"agent_names", {"B"}}, {"input_bytes", 300}, {"local_bytes", 0}},
      {{"type", "assign"}, {"ts_us", 1300}, {"agent_names", {"B", "C"}}, {"input_bytes", 0}, {"local_bytes", 0}},
      {{"type", "defer"}, {"ts_us", 1350}},
      {{"type", "complete"}, {"ts_us", 3000}, {"state", "COMPLETED"}},
      {{"type", "complete"}, {"ts_us", 4500}, {"state", "FAILED"}},
      {{"type", "complete"}, {"ts_us", 4600}, {"state", "CANCELLED"}},
      {{"type", "resubmit"}, {"ts_us", 2000}},
      {{"type", "liveness"}, {"ts_us", 2000}},
  }));
  CHECK(s.tasks_per_agent == std::map<std::string, std::size_t>{{"A", 1}, {"B", 2}, {"C", 1}});
  CHECK(s.input_bytes == 400);
  CHECK(s.local_bytes == 100);
  CHECK(s.transfer_bytes == 300);
  CHECK(s.locality_hit_rate == doctest::Approx(0.25));
  CHECK(s.makespan_ms == doctest::Approx(3.6));
  CHECK(s.assignments == 3);
  CHECK(s.deferrals == 1);
  CHECK(s.completed == 1);
  CHECK(s.failed == 1);
  CHECK(s.cancelled == 1);
  CHECK(s.resubmissions == 1);
  CHECK(s.liveness_transitions == 1);
}

TEST_CASE("trace stats: assignments without input bytes count as fully local") {
  auto s = trace_stats(records({{{"type", "assign"}, {"ts_us", 1}, {"agent_names", {"A"}}, {"input_bytes", 0}}}));
  CHECK(s.locality_hit_rate == 1.0);
}

TEST_CASE("trace stats: malformed lines are reported with MalformedTrace") {
  std::istringstream bad("{\"type\":\"ready\",\"ts_us\":1}\nnot json\n");
  CHECK(error_code([&] { trace_stats(bad); }) == Errc::MalformedTrace);
  CHECK(error_code([&] { trace_stats(records({{{"type", "ready"}}})); }) == Errc::MalformedTrace);
}

TEST_CASE("topology parsing") {
  auto t = parse_topology(json{{"recovery", {{"max_attempts", 5}, {"probe_period_ms", 200}}},
                               {"policy", "round-robin"},
                               {"agents",
                                {{{"name", "A"}, {"port", 7101}, {"cores", 2}, {"memory_mb", 512}, {"software_tags", {"x"}},
                                  {"processor_kinds", {"CPU", "GPU"}}},
                                 {{"name", "B"}, {"port", 7102}, {"cores", 1}, {"max_attempts", 2}}}}});
  REQUIRE(t.agents.size() == 2);
  CHECK(t.agents[0].runtime.max_attempts == 5);
  CHECK(t.agents[1].runtime.max_attempts == 2);
  CHECK(t.agents[0].runtime.probe.period.count() == 200);
  CHECK(t.agents[0].runtime.policy == SchedulingPolicy::RoundRobin);
  CHECK(t.agents[0].processor_kinds.size() == 2);
  CHECK(t.agents[0].software_tags == std::set<std::string>{"x"});
  CHECK(t.find("B").port == 7102);
  CHECK(parse_topology(topology_json(t)).agents.size() == 2);

  CHECK(cli_error([] { parse_topology(json{{"agents", json::array()}}); }) == CliErrc::InvalidConfig);
  CHECK(cli_error([] { parse_topology(json{{"agents", {{{"name", "A"}}, {{"name", "A"}}}}}); }) == CliErrc::InvalidConfig);
  CHECK(cli_error([] {
          parse_topology(json{{"agents", {{{"name", "A"}, {"port", 9}}, {{"name", "B"}, {"port", 9}}}}});
        }) == CliErrc::InvalidConfig);
  CHECK(cli_error([] { parse_topology(json{{"agents", json::array({{{"name", "A"}, {"cores", 0}}})}}); }) == CliErrc::InvalidConfig);
  CHECK(cli_error([] { parse_topology(json{{"agents", json::array({{{"name", "A"}, {"cores", "two"}}})}}); }) == CliErrc::InvalidConfig);
  CHECK(cli_error([] { load_topology("/no/such/topology.json"); }) == CliErrc::InvalidConfig);
  CHECK(cli_error([] { load_topology(write_file("broken.json", "{agents: [")); }) == CliErrc::InvalidConfig);
}

TEST_CASE("exit codes are fixed") {
  CHECK(exit_code(CliErrc::Usage) == 2);
  CHECK(exit_code(CliErrc::UnknownDemo) == 2);
  CHECK(exit_code(CliErrc::InvalidConfig) == 2);
  CHECK(exit_code(CliErrc::MasterUnreachable) == 3);
  CHECK(exit_code(CliErrc::StartupTimeout) == 3);
  CHECK(exit_code(CliErrc::PortInUse) == 3);
}

TEST_CASE("literals parse as numbers when they look like numbers") {
  CHECK(std::get<std::int64_t>(parse_literal("42")) == 42);
  CHECK(std::get<double>(parse_literal("2.5")) == 2.5);
  CHECK(std::get<std::string>(parse_literal("words.txt")) == "words.txt");
  CHECK(std::get<std::string>(parse_literal("")) == "");
}

TEST_CASE("harness: 3 agents come up healthy and cross-registered, teardown closes everything") {
  auto t = parse_topology(json{{"agents", {agent("A", 1), agent("B", 1), agent("C", 1)}}});
  HarnessOptions opts;
  opts.exe = PEERFLOW_EXE;
  std::vector<int> ports;
  std::vector<pid_t> pids;
  {
    Harness h(t, opts);
    HttpClientPool pool;
    for (const auto& n : h.names()) {
      ports.push_back(h.endpoint(n).port);
      pids.push_back(h.pid(n));
      auto health = pool.call(h.endpoint(n), "GET", "/health");
      CHECK(health["name"] == n);
      CHECK(pool.call(h.endpoint(n), "GET", "/resources")["agents"].size() == 3);
    }
    h.teardown();
  }
  for (int p : ports) CHECK_FALSE(port_open(p));
  for (pid_t p : pids) CHECK_FALSE(alive(p));
}

TEST_CASE("harness: an executable that never serves gives StartupTimeout") {
  auto t = parse_topology(json{{"agents", json::array({agent("A", 1)})}});
  HarnessOptions opts;
  opts.exe = "/bin/sleep";
  opts.startup_timeout = std::chrono::milliseconds(500);
  CHECK(cli_error([&] { Harness h(t, opts); }) == CliErrc::StartupTimeout);
}

TEST_CASE("harness: a taken port gives PortInUse") {
  auto t = parse_topology(json{{"agents", json::array({agent("A", 1)})}});
  HarnessOptions opts;
  opts.exe = PEERFLOW_EXE;
  Harness first(t, opts);
  auto again = t;
  again.agents[0].port = first.endpoint("A").port;
  CHECK(cli_error([&] { Harness h(again, opts); }) == CliErrc::PortInUse);
}

TEST_CASE("cli: submit chain 3 exits 0 with 3 completed tasks") {
  auto topo = topology_file("two.json", {agent("A", 1), agent("B", 1)});
  auto r = cli("submit chain 3 --topology " + topo + " --json");
  CHECK(r.exit == 0);
  auto j = json::parse(r.out);
  CHECK(j["summary"]["counts"]["COMPLETED"] == 3);
  CHECK(j["result"] == "3");
}

TEST_CASE("cli: failing task exits 1") {
  auto topo = topology_file("one.json", {agent("A", 1)});
  auto r = cli("submit chain 4 --topology " + topo + " --hint fail_at=2 --json");
  CHECK(r.exit == 1);
  auto j = json::parse(r.out);
  CHECK(j["summary"]["counts"]["FAILED"] == 1);
  CHECK(j["summary"]["counts"]["CANCELLED"] == 1);
}

TEST_CASE("cli: usage and connectivity errors") {
  auto topo = topology_file("one.json", {agent("A", 1)});
  CHECK(cli("").exit == 2);
  CHECK(cli("submit").exit == 2);
  CHECK(cli("submit no-such-demo --topology " + topo).exit == 2);
  CHECK(cli("submit chain 3").exit == 2);
  CHECK(cli("submit chain 3 --master 127.0.0.1:1").exit == 3);
  CHECK(cli("status --master 127.0.0.1:1").exit == 3);
  CHECK(cli("agent --name x --cores 0").exit == 2);
  CHECK(cli("submit chain 3 --topology /no/such/file").exit == 2);
  CHECK(cli("stats /no/such/trace").exit == 2);
}

TEST_CASE("cli: agent on a taken port exits 3") {
  auto t = parse_topology(json{{"agents", json::array({agent("A", 1)})}});
  HarnessOptions opts;
  opts.exe = PEERFLOW_EXE;
  Harness h(t, opts);
  CHECK(cli("agent --name dup --port " + std::to_string(h.endpoint("A").port)).exit == 3);
}

TEST_CASE("cli: status, graph and stats against a live master") {
  auto t = parse_topology(json{{"agents", {agent("A", 2), agent("B", 2)}}});
  HarnessOptions opts;
  opts.exe = PEERFLOW_EXE;
  Harness h(t, opts);
  auto master = "--master http://" + h.master().str();
  auto sub = cli("submit diamond " + master + " --json --trace-out " + (scratch() / "diamond.trace").string());
  REQUIRE(sub.exit == 0);
  auto app = json::parse(sub.out)["app"].get<std::string>();

  auto status = cli("status " + master + " --json");
  CHECK(status.exit == 0);
  auto s = json::parse(status.out);
  CHECK(s["agents"].size() == 2);
  CHECK(s["applications"].size() == 1);

  auto dot = cli("graph " + master + " --app " + app + " --format dot");
  CHECK(dot.exit == 0);
  CHECK(dot.out.find("digraph") != std::string::npos);
  CHECK(cli("graph " + master + " --app " + app).exit == 0);
  CHECK(cli("graph " + master + " --app " + ApplicationId::random().str()).exit == 2);

  auto stats = cli("stats " + (scratch() / "diamond.trace").string() + " --json");
  CHECK(stats.exit == 0);
  auto st = json::parse(stats.out);
  CHECK(st["completed"] == 4);
  auto table = cli("stats " + (scratch() / "diamond.trace").string());
  CHECK(table.out.find("locality hit-rate") != std::string::npos);
}

TEST_CASE("cli: single-agent run reads everything locally; forced-remote chain transfers") {
  auto solo = topology_file("solo.json", {agent("A", 2)});
  auto t1 = (scratch() / "solo.trace").string();
  REQUIRE(cli("submit chain 6 --topology " + solo + " --trace-out " + t1).exit == 0);
  std::ifstream in1(t1);
  auto s1 = trace_stats(in1);
  CHECK(s1.locality_hit_rate == 1.0);
  CHECK(s1.transfer_bytes == 0);

  auto pair = topology_file("rr.json", {agent("A", 1), agent("B", 1)}, json{{"policy", "round-robin"}});
  auto t2 = (scratch() / "rr.trace").string();
  REQUIRE(cli("submit chain 6 --topology " + pair + " --trace-out " + t2).exit == 0);
  std::ifstream in2(t2);
  auto s2 = trace_stats(in2);
  CHECK(s2.transfer_bytes > 0);
  CHECK(s2.tasks_per_agent.size() == 2);
}

TEST_CASE("cli: tag-constrained work lands on the tagged agent in a harness") {
  auto t = parse_topology(json{{"agents", {agent("A", 1), agent("gpu", 1, {"cuda"})}}});
  HarnessOptions opts;
  opts.exe = PEERFLOW_EXE;
  Harness h(t, opts);
  HttpClientPool pool;
  auto app = pool.call(h.master(), "POST", "/applications", json{{"main", "interactive"}})["app"];
  auto spec = builtin("noop", {{DataId::random(), AccessMode::OUT}});
  spec.constraints.software_tags = {"cuda"};
  auto id = pool.call(h.master(), "POST", "/tasks", json{{"app", app}, {"spec", spec}})["task_id"].get<std::string>();
  pool.call(h.master(), "GET", "/applications/" + app.get<std::string>() + "?wait=true");
  auto gpu_id = pool.call(h.endpoint("gpu"), "GET", "/health")["agent_id"];
  CHECK(pool.call(h.master(), "GET", "/tasks/" + id)["assigned_agent"] == gpu_id);
}

TEST_CASE("cli: killed worker mid-diamond still exits 0 with the same value") {
  auto topo = topology_file("three.json", {agent("A", 1), agent("B", 1), agent("C", 1)});
  auto r = cli("submit diamond --topology " + topo + " --hint delay_ms=300 --kill-agent B --at-task 1 --json");
  CHECK(r.exit == 0);
  auto j = json::parse(r.out);
  CHECK(j["result"] == "4");
  CHECK(j["killed"] == true);
  CHECK(cli("submit diamond --topology " + topo + " --kill-agent A --at-task 1").exit == 2);
  CHECK(cli("submit diamond --master 127.0.0.1:1 --kill-agent B --at-task 1").exit == 2);
}
