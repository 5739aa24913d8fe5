#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <thread>

#include "peerflow/scheduler.hpp"
#include "test_support.hpp"

using namespace peerflow;
using namespace peerflow::testing;

namespace {

AgentDescriptor agent(const std::string& name, int cores, std::int64_t mem = 4096, std::set<std::string> tags = {},
                      std::set<ProcessorKind> kinds = {ProcessorKind::CPU}) {
  AgentDescriptor d;
  d.agent_id = AgentId::from_name(name);
  d.name = name;
  d.endpoint = Endpoint{"127.0.0.1", 7000};
  d.capacity = ResourcePool{cores, mem, 0, 0};
  d.software_tags = std::move(tags);
  d.processor_kinds = std::move(kinds);
  return d;
}

ResourceDelta add(AgentDescriptor d) {
  ResourceDelta r;
  r.op = ResourceDelta::Op::Add;
  r.agent = d;
  r.agent_id = d.agent_id;
  return r;
}

ResourceDelta remove(AgentId id) {
  ResourceDelta r;
  r.op = ResourceDelta::Op::Remove;
  r.agent_id = id;
  return r;
}

TaskNode node(ResourceConstraints c = {}, std::vector<DataVersion> reads = {}, TaskKind kind = BuiltinKind{"noop"}) {
  TaskNode n;
  n.task_id = TaskId::random();
  n.spec.kind = std::move(kind);
  n.spec.constraints = std::move(c);
  n.reads = std::move(reads);
  n.state = TaskState::READY;
  return n;
}

struct Placement {
  std::map<DataVersion, ObjectInfo> objects;
  std::optional<ObjectInfo> operator()(const DataVersion& v) const {
    auto it = objects.find(v);
    if (it == objects.end()) return std::nullopt;
    return it->second;
  }
};

}  // namespace

TEST_CASE("filter: capacity, tags, processor kind") {
  Scheduler s;
  auto a = agent("A", 2), b = agent("B", 8);
  s.update_resources(add(a));
  s.update_resources(add(b));
  ResourceConstraints four;
  four.cores = 4;
  CHECK(filter_candidates(node(four), s.view()) == std::vector<AgentId>{b.agent_id});

  ResourceConstraints tagged;
  tagged.software_tags = {"guidance-binaries"};
  CHECK(filter_candidates(node(tagged), s.view()).empty());

  auto all = filter_candidates(node(), s.view());
  auto expected = std::vector<AgentId>{a.agent_id, b.agent_id};
  std::sort(expected.begin(), expected.end());
  CHECK(all == expected);

  ResourceConstraints gpu;
  gpu.processor_kind = ProcessorKind::GPU;
  CHECK(filter_candidates(node(gpu), s.view()).empty());
  s.update_resources(add(agent("G", 1, 1024, {}, {ProcessorKind::CPU, ProcessorKind::GPU})));
  CHECK(filter_candidates(node(gpu), s.view()) == std::vector<AgentId>{AgentId::from_name("G")});

  ResourceConstraints mem;
  mem.memory_mb = 2048;
  CHECK(filter_candidates(node(mem), s.view()).size() == 2);
}

TEST_CASE("locality score: 100 bytes on A, 300 on B") {
  auto A = AgentId::from_name("A"), B = AgentId::from_name("B");
  DataVersion x{DataId::random(), 1}, y{DataId::random(), 1};
  Placement p;
  p.objects[x] = ObjectInfo{100, {A}};
  p.objects[y] = ObjectInfo{300, {B}};
  auto t = node({}, {x, y});
  CHECK(locality_score(t, A, p).value() == doctest::Approx(0.25));
  CHECK(locality_score(t, B, p).value() == doctest::Approx(0.75));
  CHECK(locality_score(node(), A, p).value() == 1.0);
  auto both = node({}, {x});
  p.objects[x].replicas.insert(B);
  CHECK(locality_score(both, A, p).value() == 1.0);
  CHECK(LocalityScore{1, 3} == LocalityScore{2, 6});
  CHECK(LocalityScore{1, 3} < LocalityScore{1, 2});
  CHECK(LocalityScore{0, 0} == LocalityScore{5, 5});
}

TEST_CASE("locality score: store failure counts as remote") {
  auto t = node({}, {DataVersion{DataId::random(), 1}});
  auto broken = [](const DataVersion&) -> std::optional<ObjectInfo> {
    throw Error(Errc::TargetUnreachable, "down");
  };
  CHECK(locality_score(t, AgentId::from_name("A"), broken).value() == 0.0);
}

TEST_CASE("assign: single candidate, locality decides, gang deferral") {
  TraceSink trace;
  Scheduler s(SchedulingPolicy::Locality, &trace);
  auto a = agent("A", 4), b = agent("B", 4);
  s.update_resources(add(a));
  Placement p;
  auto t1 = node();
  auto out = s.assign(std::vector<TaskNode>{t1}, p);
  REQUIRE(out.size() == 1);
  CHECK(out[0].agent_ids == std::vector<AgentId>{a.agent_id});
  s.release(out[0]);

  s.update_resources(add(b));
  DataVersion x{DataId::random(), 1};
  p.objects[x] = ObjectInfo{1000, {b.agent_id}};
  auto t2 = node({}, {x});
  out = s.assign(std::vector<TaskNode>{t2}, p);
  REQUIRE(out.size() == 1);
  CHECK(out[0].agent_ids == std::vector<AgentId>{b.agent_id});
  CHECK(out[0].local_bytes == 1000);
  s.release(out[0]);

  ResourceConstraints gang;
  gang.nodes = 3;
  auto g = node(gang, {}, GangKind{"gang_stub"});
  out = s.assign(std::vector<TaskNode>{g}, p);
  CHECK(out.empty());
  for (const auto& [_, e] : s.view().agents) CHECK(e.pool.reserved_cores == 0);
  auto recs = trace.records();
  CHECK(std::count_if(recs.begin(), recs.end(), [](const json& r) { return r["type"] == "defer"; }) == 1);
  s.assign(std::vector<TaskNode>{g}, p);
  recs = trace.records();
  CHECK(std::count_if(recs.begin(), recs.end(), [](const json& r) { return r["type"] == "defer"; }) == 1);

  s.update_resources(add(agent("C", 1)));
  out = s.assign(std::vector<TaskNode>{g}, p);
  REQUIRE(out.size() == 1);
  CHECK(out[0].agent_ids.size() == 3);
  CHECK(std::set<AgentId>(out[0].agent_ids.begin(), out[0].agent_ids.end()).size() == 3);
}

TEST_CASE("assign: ties go to most free cores, then lowest id") {
  Scheduler s;
  auto a = agent("A", 2), b = agent("B", 6);
  s.update_resources(add(a));
  s.update_resources(add(b));
  Placement p;
  auto out = s.assign(std::vector<TaskNode>{node()}, p);
  CHECK(out.at(0).agent_ids.front() == b.agent_id);

  Scheduler s2;
  auto c = agent("C", 3), d = agent("D", 3);
  s2.update_resources(add(c));
  s2.update_resources(add(d));
  out = s2.assign(std::vector<TaskNode>{node()}, p);
  CHECK(out.at(0).agent_ids.front() == std::min(c.agent_id, d.agent_id));
}

TEST_CASE("assign: tasks without candidates stay unassigned, later ones still run") {
  Scheduler s;
  s.update_resources(add(agent("A", 1)));
  ResourceConstraints tagged;
  tagged.software_tags = {"absent"};
  Placement p;
  auto out = s.assign(std::vector<TaskNode>{node(tagged), node()}, p);
  CHECK(out.size() == 1);
}

TEST_CASE("release: exact restore and idempotence") {
  Scheduler s;
  auto a = agent("A", 8, 1000);
  s.update_resources(add(a));
  ResourceConstraints four;
  four.cores = 4;
  four.memory_mb = 300;
  Placement p;
  auto before = s.view().agents.at(a.agent_id).pool;
  auto out = s.assign(std::vector<TaskNode>{node(four)}, p);
  REQUIRE(out.size() == 1);
  CHECK(s.view().agents.at(a.agent_id).pool.reserved_cores == 4);
  CHECK(s.release(out[0]));
  CHECK(s.view().agents.at(a.agent_id).pool == before);
  CHECK_FALSE(s.release(out[0]));
  CHECK(s.view().agents.at(a.agent_id).pool == before);
}

TEST_CASE("update_resources: add, remove idle, drain busy, unknown") {
  Scheduler s;
  Placement p;
  CHECK(s.assign(std::vector<TaskNode>{node()}, p).empty());
  auto a = agent("A", 1);
  s.update_resources(add(a));
  CHECK(filter_candidates(node(), s.view()).size() == 1);
  s.update_resources(remove(a.agent_id));
  CHECK(s.view().agents.empty());

  s.update_resources(add(a));
  auto out = s.assign(std::vector<TaskNode>{node()}, p);
  REQUIRE(out.size() == 1);
  s.update_resources(remove(a.agent_id));
  REQUIRE(s.agent(a.agent_id));
  CHECK(s.agent(a.agent_id)->draining);
  CHECK(s.assign(std::vector<TaskNode>{node()}, p).empty());
  s.release(out[0]);
  CHECK_FALSE(s.agent(a.agent_id));

  CHECK(error_code([&] { s.update_resources(remove(AgentId::from_name("nobody"))); }) == Errc::UnknownAgent);
  ResourceDelta rz;
  rz.op = ResourceDelta::Op::Resize;
  rz.agent_id = AgentId::from_name("nobody");
  CHECK(error_code([&] { s.update_resources(rz); }) == Errc::UnknownAgent);
}

TEST_CASE("resize grows capacity") {
  Scheduler s;
  auto a = agent("A", 1);
  s.update_resources(add(a));
  ResourceDelta rz;
  rz.op = ResourceDelta::Op::Resize;
  rz.agent_id = a.agent_id;
  rz.cores = 3;
  s.update_resources(rz);
  Placement p;
  CHECK(s.assign(std::vector<TaskNode>{node(), node(), node(), node()}, p).size() == 3);
}

TEST_CASE("suspect agents receive no new work") {
  Scheduler s;
  auto a = agent("A", 1);
  s.update_resources(add(a));
  s.set_live(a.agent_id, false);
  Placement p;
  CHECK(s.assign(std::vector<TaskNode>{node()}, p).empty());
  s.set_live(a.agent_id, true);
  CHECK(s.assign(std::vector<TaskNode>{node()}, p).size() == 1);
}

TEST_CASE("round-robin cycles through eligible agents") {
  Scheduler s(SchedulingPolicy::RoundRobin);
  std::vector<AgentDescriptor> ds{agent("A", 8), agent("B", 8), agent("C", 8)};
  for (auto& d : ds) s.update_resources(add(d));
  Placement p;
  std::vector<TaskNode> tasks;
  for (int i = 0; i < 6; ++i) tasks.push_back(node());
  auto out = s.assign(tasks, p);
  REQUIRE(out.size() == 6);
  std::map<AgentId, int> count;
  for (auto& a : out) ++count[a.agent_ids.front()];
  for (auto& [_, n] : count) CHECK(n == 2);
  CHECK(out[0].agent_ids != out[1].agent_ids);
}

TEST_CASE("property: locality dominance") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    Scheduler s;
    int n = 2 + rng() % 5;
    std::vector<AgentDescriptor> ds;
    for (int i = 0; i < n; ++i) {
      ds.push_back(agent("agent-" + std::to_string(trial) + "-" + std::to_string(i), 4));
      s.update_resources(add(ds.back()));
    }
    auto holder = ds[rng() % n].agent_id;
    Placement p;
    std::vector<DataVersion> reads;
    for (int k = 0; k < 1 + static_cast<int>(rng() % 4); ++k) {
      DataVersion v{DataId::random(), 1};
      std::set<AgentId> reps{holder};
      // other agents may hold a strict subset of inputs
      if (k > 0) reps.insert(ds[rng() % n].agent_id);
      p.objects[v] = ObjectInfo{1 + rng() % 1000, k == 0 ? std::set<AgentId>{holder} : reps};
      reads.push_back(v);
    }
    auto out = s.assign(std::vector<TaskNode>{node({}, reads)}, p);
    REQUIRE(out.size() == 1);
    CHECK(out[0].agent_ids.front() == holder);
  }
}

TEST_CASE("property: determinism for identical inputs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<AgentDescriptor> ds;
    for (int i = 0; i < 4; ++i) ds.push_back(agent("d" + std::to_string(i), 1 + rng() % 4, 1000));
    Placement p;
    std::vector<TaskNode> tasks;
    for (int i = 0; i < 12; ++i) {
      ResourceConstraints c;
      c.cores = 1 + rng() % 2;
      c.memory_mb = rng() % 400;
      std::vector<DataVersion> reads;
      DataVersion v{DataId::random(), 1};
      p.objects[v] = ObjectInfo{rng() % 500, {ds[rng() % 4].agent_id}};
      reads.push_back(v);
      tasks.push_back(node(c, reads));
    }
    auto run_once = [&] {
      Scheduler s;
      for (auto& d : ds) s.update_resources(add(d));
      std::vector<std::pair<TaskId, std::vector<AgentId>>> r;
      for (auto& a : s.assign(tasks, p)) r.push_back({a.task_id, a.agent_ids});
      return r;
    };
    CHECK(run_once() == run_once());
  }
}

TEST_CASE("property: liveness with free capacity") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Scheduler s;
    int free_agents = 0;
    for (int i = 0; i < 3; ++i) {
      auto d = agent("l" + std::to_string(i), 1 + rng() % 2);
      s.update_resources(add(d));
      if (rng() % 2) s.set_live(d.agent_id, false);
      else ++free_agents;
    }
    Placement p;
    auto out = s.assign(std::vector<TaskNode>{node()}, p);
    CHECK((out.size() == 1) == (free_agents > 0));
  }
}

TEST_CASE("property: random reserve/release interleaving keeps pool bounds") {
  std::mt19937_64 rng(99);
  Scheduler s;
  std::vector<AgentDescriptor> ds{agent("p0", 4, 2000), agent("p1", 2, 1000), agent("p2", 8, 500)};
  for (auto& d : ds) s.update_resources(add(d));
  Placement p;
  std::vector<Assignment> held;
  for (int step = 0; step < 100; ++step) {
    if (held.empty() || rng() % 3) {
      ResourceConstraints c;
      c.cores = 1 + rng() % 4;
      c.memory_mb = rng() % 600;
      for (auto& a : s.assign(std::vector<TaskNode>{node(c)}, p)) held.push_back(a);
    } else {
      auto idx = rng() % held.size();
      CHECK(s.release(held[idx]));
      held.erase(held.begin() + idx);
    }
    for (const auto& [_, e] : s.view().agents) REQUIRE(e.pool.within_bounds());
  }
  for (auto& a : held) s.release(a);
  for (const auto& [_, e] : s.view().agents) {
    CHECK(e.pool.reserved_cores == 0);
    CHECK(e.pool.reserved_memory_mb == 0);
  }
}

TEST_CASE("property: concurrent assign/release never break bounds") {
  Scheduler s;
  std::vector<AgentDescriptor> ds{agent("c0", 3, 900), agent("c1", 2, 600)};
  for (auto& d : ds) s.update_resources(add(d));
  std::atomic<bool> violated{false};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      std::mt19937_64 rng(t);
      Placement p;
      for (int i = 0; i < 500; ++i) {
        ResourceConstraints c;
        c.cores = 1 + rng() % 2;
        c.memory_mb = rng() % 300;
        auto out = s.assign(std::vector<TaskNode>{node(c)}, p);
        for (const auto& [_, e] : s.view().agents)
          if (!e.pool.within_bounds()) violated = true;
        for (auto& a : out) s.release(a);
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK_FALSE(violated);
  for (const auto& [_, e] : s.view().agents) CHECK(e.pool.reserved_cores == 0);
}

TEST_CASE("property: constraint soundness by audit replay") {
  std::mt19937_64 rng(17);
  TraceSink trace;
  Scheduler s(SchedulingPolicy::Locality, &trace);
  std::vector<AgentDescriptor> ds{agent("h0", 2, 1000, {"x"}), agent("h1", 4, 4000, {"x", "y"}),
                                  agent("h2", 1, 500, {}, {ProcessorKind::CPU, ProcessorKind::GPU}),
                                  agent("h3", 8, 8000, {"y"})};
  for (auto& d : ds) s.update_resources(add(d));
  const std::vector<std::string> tags{"x", "y", "z"};
  Placement p;
  std::vector<Assignment> held;
  std::size_t violations = 0, placed = 0;
  for (int i = 0; i < 1000; ++i) {
    ResourceConstraints c;
    c.cores = 1 + rng() % 4;
    c.memory_mb = rng() % 3000;
    if (rng() % 3 == 0) c.software_tags.insert(tags[rng() % 3]);
    if (rng() % 5 == 0) c.processor_kind = ProcessorKind::GPU;
    auto t = node(c);
    auto before = s.view();
    for (auto& a : s.assign(std::vector<TaskNode>{t}, p)) {
      ++placed;
      for (auto id : a.agent_ids)
        if (!satisfies(c, before.agents.at(id))) ++violations;
      if (c.software_tags.contains("z")) ++violations;
      held.push_back(a);
    }
    while (held.size() > 3) {
      s.release(held.front());
      held.erase(held.begin());
    }
  }
  CHECK(placed > 100);
  CHECK(violations == 0);
}

TEST_CASE("resource delta JSON") {
  auto d = add(agent("A", 2));
  json j = d;
  CHECK(j["op"] == "add");
  auto back = j.get<ResourceDelta>();
  CHECK(back.agent.agent_id == d.agent.agent_id);
  CHECK(error_code([] { json{{"op", "explode"}}.get<ResourceDelta>(); }) == Errc::InvalidArgument);
}
