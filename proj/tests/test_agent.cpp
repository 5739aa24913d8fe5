#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <thread>

#include "cluster.hpp"
#include "peerflow/cli.hpp"
#include "store_contract.hpp"
#include "test_support.hpp"

using namespace peerflow;
using namespace peerflow::testing;
using namespace std::chrono_literals;

namespace {

std::string app_of(Cluster& c) {
  return c.call("POST", "/applications", json{{"main", "interactive"}})["app"].get<std::string>();
}

json register_task(Cluster& c, const std::string& app, const TaskSpec& spec) {
  return c.call("POST", "/tasks", json{{"app", app}, {"spec", spec}});
}

DataVersion put_value(Cluster& c, const std::string& app, DataId d, const Value& v, const std::string& home = "") {
  DataVersion ver{d, 0};
  auto path = data_path(ver) + "?app=" + app + (home.empty() ? "" : "&home=" + home);
  auto r = c.request("POST", path, to_body(encode(v)), "application/octet-stream");
  REQUIRE(r.status == 201);
  return ver;
}

Value read_value(Cluster& c, const DataVersion& v) {
  auto r = c.request("GET", data_path(v));
  REQUIRE(r.ok());
  return decode(from_body(r.body));
}

int status_of(Cluster& c, const std::string& method, const std::string& path, const std::string& body = "{}") {
  return c.request(method, path, body).status;
}

}  // namespace

TEST_CASE("health answers 200 with the agent id") {
  Cluster c({agent_config("solo", 2)});
  auto h = c.call("GET", "/health");
  CHECK(h["agent_id"] == c.master().descriptor().agent_id.str());
  CHECK(h["name"] == "solo");
  CHECK(h["pool"]["total_cores"] == 2);
  CHECK(h["pool"]["reserved_cores"] == 0);
}

TEST_CASE("a second agent on the same port fails with PortInUse") {
  Cluster c({agent_config("first", 1)});
  auto cfg = agent_config("second", 1);
  cfg.port = c.master().endpoint().port;
  Agent again(cfg);
  CHECK(error_code([&] { again.start(); }) == Errc::PortInUse);
}

TEST_CASE("cores=0 is rejected as InvalidConfig") {
  auto cfg = agent_config("broken", 0);
  CHECK(error_code([&] { Agent a(cfg); }) == Errc::InvalidConfig);
}

TEST_CASE("status codes: 400 validation, 404 unknown, 409 capacity, 503 draining") {
  Cluster c({agent_config("m", 1)});
  CHECK(status_of(c, "POST", "/tasks", "not json") == 400);
  CHECK(status_of(c, "GET", "/tasks/" + TaskId::random().str()) == 404);
  CHECK(status_of(c, "GET", "/applications/" + ApplicationId::random().str()) == 404);
  CHECK(status_of(c, "POST", "/applications", json{{"main", "no-such-demo"}}.dump()) == 404);
  CHECK(status_of(c, "GET", data_path(DataVersion{DataId::random(), 3})) == 404);

  // a worker with one core refuses a second concurrent request
  auto request = [&](std::int64_t ms) {
    ExecutionRequest r;
    r.task_id = TaskId::random();
    r.spec.kind = BuiltinKind{"sleep_ms"};
    r.spec.literals = {ms};
    r.output_versions = {DataVersion{DataId::random(), 1}};
    r.reply_to = Endpoint{"127.0.0.1", 1};
    r.master = AgentId::random();
    return json(r).dump();
  };
  CHECK(status_of(c, "POST", "/tasks", request(300)) == 202);
  CHECK(status_of(c, "POST", "/tasks", request(1)) == 409);
  c.master().set_draining(true);
  CHECK(status_of(c, "POST", "/tasks", request(1)) == 503);
  CHECK(status_of(c, "POST", "/applications", "{}") == 503);
  c.master().worker().join();
}

TEST_CASE("duplicate execution requests run once") {
  Cluster c({agent_config("m", 2)});
  ExecutionRequest r;
  r.task_id = TaskId::random();
  r.spec.kind = BuiltinKind{"sleep_ms"};
  r.spec.literals = {std::int64_t{50}};
  r.output_versions = {DataVersion{DataId::random(), 1}};
  r.reply_to = Endpoint{"127.0.0.1", 1};
  r.master = AgentId::random();
  CHECK(status_of(c, "POST", "/tasks", json(r).dump()) == 202);
  CHECK(status_of(c, "POST", "/tasks", json(r).dump()) == 202);
  c.master().worker().join();
  CHECK(c.master().worker().executed() == 1);
}

TEST_CASE("REST store passes the contract suite") {
  Cluster c({agent_config("m", 1), agent_config("s1", 1), agent_config("s2", 1)});
  RemoteStoreClient client(std::make_shared<HttpClientPool>(), c.master().endpoint());
  StoreFixture fx;
  fx.store = [&]() -> StoreClient& { return client; };
  for (auto& a : c.agents()) fx.agents.push_back(a->descriptor().agent_id);
  fx.set_online = [&](AgentId id, bool on) {
    for (auto& a : c.agents())
      if (a->descriptor().agent_id == id) a->blobs().set_online(on);
  };
  fx.transfers = [&] { return c.master().runtime().store().transfer_count(); };
  for (const auto& r : run_store_contract(fx, 7, 200)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.ok);
  }
}

TEST_CASE("interactive application over REST: put, register, wait, read") {
  Cluster c({agent_config("m", 2), agent_config("w", 2)});
  auto app = app_of(c);
  auto x = DataId::random(), y = DataId::random();
  auto x0 = put_value(c, app, x, Value{std::int64_t{40}});
  auto locs = c.call("GET", data_path(x0) + "/locations");
  CHECK(locs["known"] == true);
  CHECK(locs["replicas"].size() == 1);

  auto t1 = register_task(c, app, builtin("inc", {{x, AccessMode::INOUT}}));
  CHECK(t1["writes"][0]["version"] == 1);
  auto t2 = register_task(c, app, builtin("inc", {{x, AccessMode::IN}, {y, AccessMode::OUT}}));
  auto t3 = register_task(c, app, builtin("add", {{x, AccessMode::INOUT}, {y, AccessMode::IN}}));
  CHECK(t3["writes"][0]["version"] == 2);

  auto s = c.call("GET", "/applications/" + app + "?wait=true");
  CHECK(s["counts"]["COMPLETED"] == 3);
  CHECK(s["open"] == false);
  CHECK(render(read_value(c, DataVersion{x, 1})) == "41");
  CHECK(render(read_value(c, DataVersion{y, 1})) == "42");
  CHECK(render(read_value(c, DataVersion{x, 2})) == "83");
  auto text = c.call("GET", data_path(DataVersion{x, 2}) + "?format=text");
  CHECK(text["text"] == "83");

  auto task = c.call("GET", "/tasks/" + t2["task_id"].get<std::string>());
  CHECK(task["state"] == "COMPLETED");
  CHECK(task["app"] == app);

  auto listing = c.request("GET", "/applications/" + app + "/graph?format=listing");
  CHECK(listing.ok());
  auto dot = c.request("GET", "/applications/" + app + "/graph?format=dot");
  CHECK(dot.body.find("digraph") != std::string::npos);
  CHECK(status_of(c, "POST", "/tasks", json{{"app", app}, {"spec", {{"params", "x"}}}}.dump()) == 400);
  CHECK(status_of(c, "POST", "/tasks", json{{"app", ApplicationId::random()}, {"spec", builtin("noop", {})}}.dump()) == 404);
}

TEST_CASE("inputs are persisted before a request leaves the master") {
  Cluster c({agent_config("m", 1), agent_config("w", 1)});
  auto& rt = c.master().runtime();
  std::atomic<int> sent{0}, unpersisted{0};
  rt.set_transport_interceptor([&](const ExecutionRequest& req, AgentId) {
    ++sent;
    for (const auto& in : req.input_manifest) {
      auto info = rt.store().stat(in.version);
      if (!info || info->replicas.empty() || rt.is_pending(in.version)) ++unpersisted;
    }
  });
  auto s = c.run("chain", json::array({12}), json{{"policy", "round_robin"}});
  CHECK(s["result"] == "12");
  CHECK(sent > 0);
  CHECK(unpersisted == 0);
}

TEST_CASE("outputs stay readable after the worker that made them leaves") {
  Cluster c({agent_config("m", 1), agent_config("w", 1, {"only-w"})});
  auto app = app_of(c);
  auto y = DataId::random();
  auto spec = builtin("const", {{y, AccessMode::OUT}}, {std::int64_t{99}});
  spec.constraints.software_tags = {"only-w"};
  auto t = register_task(c, app, spec);
  c.call("GET", "/applications/" + app + "?wait=true");
  auto where = c.call("GET", "/tasks/" + t["task_id"].get<std::string>())["assigned_agent"];
  CHECK(where == c["w"].descriptor().agent_id.str());
  c["w"].stop();
  CHECK(render(read_value(c, DataVersion{y, 1})) == "99");
}

TEST_CASE("health reports reserved cores while a task runs") {
  Cluster c({agent_config("m", 2)});
  auto app = app_of(c);
  register_task(c, app, builtin("sleep_ms", {{DataId::random(), AccessMode::OUT}}, {std::int64_t{400}}));
  std::this_thread::sleep_for(100ms);
  CHECK(c.call("GET", "/health")["pool"]["reserved_cores"] == 1);
  c.call("GET", "/applications/" + app + "?wait=true");
  c.master().worker().join();
  CHECK(c.call("GET", "/health")["pool"]["reserved_cores"] == 0);
}

TEST_CASE("tag constraints hold end to end") {
  Cluster c({agent_config("m", 2), agent_config("gpu", 2, {"cuda"}), agent_config("plain", 2)});
  auto app = app_of(c);
  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) {
    auto spec = builtin("noop", {{DataId::random(), AccessMode::OUT}});
    spec.constraints.software_tags = {"cuda"};
    ids.push_back(register_task(c, app, spec)["task_id"].get<std::string>());
  }
  auto none = builtin("noop", {{DataId::random(), AccessMode::OUT}});
  none.constraints.software_tags = {"missing"};
  auto stuck = register_task(c, app, none)["task_id"].get<std::string>();
  std::this_thread::sleep_for(300ms);
  for (const auto& id : ids) {
    auto t = c.call("GET", "/tasks/" + id);
    CHECK(t["state"] == "COMPLETED");
    CHECK(t["assigned_agent"] == c["gpu"].descriptor().agent_id.str());
  }
  CHECK(c.call("GET", "/tasks/" + stuck)["state"] == "READY");
  bool deferred = false;
  for (const auto& r : c.master().trace().records())
    deferred |= r["type"] == "defer" && r["task_id"] == stuck;
  CHECK(deferred);
}

TEST_CASE("gang task runs every rank and releases everything") {
  Cluster c({agent_config("m", 1), agent_config("g1", 1), agent_config("g2", 1)});
  auto s = c.run("gangdemo", json::array({3}), json{{"delay_ms", 50}});
  CHECK(s["result"] == "4");
  for (auto& a : c.agents()) {
    a->worker().join();
    CHECK(a->worker().executed() >= 1);
    CHECK(a->worker().pool().reserved_cores == 0);
  }
}

TEST_CASE("a gang larger than the view is deferred whole") {
  Cluster c({agent_config("m", 1), agent_config("g1", 1)});
  auto app = c.call("POST", "/applications", json{{"main", "gangdemo"}, {"literals", {3}}})["app"].get<std::string>();
  std::this_thread::sleep_for(300ms);
  auto g = c.call("GET", "/applications/" + app + "/graph");
  CHECK(g["nodes"][0]["state"] == "READY");
  bool deferred = false;
  for (const auto& r : c.master().trace().records()) deferred |= r["type"] == "defer";
  CHECK(deferred);
  for (auto& a : c.agents()) CHECK(a->worker().executed() == 0);
}

TEST_CASE("resources: add by endpoint, resize, remove") {
  Cluster c({agent_config("m", 1), agent_config("extra", 3)}, false);
  CHECK(c.call("GET", "/resources")["agents"].size() == 1);
  auto view = c.call("PUT", "/resources", json{{"op", "add"}, {"endpoint", c["extra"].endpoint().str()}});
  CHECK(view["agents"].size() == 2);
  c.call("PUT", "/resources", json{{"op", "resize"}, {"agent", "extra"}, {"cores", 5}});
  auto entry = c.master().runtime().scheduler().agent(c["extra"].descriptor().agent_id);
  REQUIRE(entry);
  CHECK(entry->pool.total_cores == 5);
  c.call("PUT", "/resources", json{{"op", "remove"}, {"agent", "extra"}});
  CHECK(c.call("GET", "/resources")["agents"].size() == 1);
  CHECK(status_of(c, "PUT", "/resources", json{{"op", "remove"}, {"agent_id", AgentId::random()}}.dump()) == 404);
}

TEST_CASE("bundled programs produce their expected values") {
  Cluster c({agent_config("m", 2), agent_config("w", 2)});
  CHECK(c.run("chain", json::array({3}))["result"] == "3");
  CHECK(c.run("diamond")["result"] == "4");
  auto pi = c.run("montecarlo-pi", json::array({400000, 8}), json{{"seed", 3}});
  CHECK(std::abs(std::stod(pi["result"].get<std::string>()) - 3.14159) < 0.02);
  // fixed seed -> identical estimate
  CHECK(c.run("montecarlo-pi", json::array({400000, 8}), json{{"seed", 3}})["result"] == pi["result"]);
  auto bad = c.run("wordcount", json::array({"/no/such/file"}));
  CHECK(bad.contains("program_error"));
}

TEST_CASE("application records are listed") {
  Cluster c({agent_config("m", 1)});
  c.run("chain", json::array({2}));
  auto apps = c.call("GET", "/applications");
  REQUIRE(apps.size() == 1);
  CHECK(apps[0]["program"] == "chain");
  CHECK(apps[0]["counts"]["COMPLETED"] == 2);
  auto trace = c.request("GET", "/trace");
  CHECK(trace.body.find("\"type\":\"complete\"") != std::string::npos);
}
