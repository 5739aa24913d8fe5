#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "peerflow/object_store.hpp"
#include "store_contract.hpp"

using namespace peerflow;
using namespace peerflow::testing;

TEST_CASE("in-memory store passes the contract suite") {
  InMemoryStore store;
  StoreFixture fx;
  fx.store = [&]() -> StoreClient& { return store; };
  fx.agents = {AgentId::from_name("a"), AgentId::from_name("b"), AgentId::from_name("c")};
  fx.set_online = [&](AgentId a, bool on) { store.agent(a).set_online(on); };
  fx.transfers = [&] { return store.transfer_count(); };
  for (const auto& r : run_store_contract(fx)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.ok);
  }
}

TEST_CASE("get never copies bytes for a local replica") {
  InMemoryStore store;
  auto a = AgentId::from_name("a"), b = AgentId::from_name("b");
  DataVersion v{DataId::random(), 0};
  store.make_persistent(v, Bytes(1000, 1), a);
  store.get(v, a);
  CHECK(store.transferred_bytes() == 0);
  store.get(v, b);
  CHECK(store.transferred_bytes() == 1000);
  CHECK(store.agent(b).contains(v));
}

TEST_CASE("adopt records bytes a worker already holds") {
  InMemoryStore store;
  auto w = AgentId::from_name("worker");
  DataVersion v{DataId::random(), 2};
  store.agent(w).put(v, std::make_shared<const Bytes>(Bytes{1, 2, 3}));
  store.adopt(v, 3, w);
  CHECK(store.get_locations(v) == std::set<AgentId>{w});
  CHECK(store.get(v, AgentId::from_name("master")) == Bytes{1, 2, 3});
}

TEST_CASE("purge_agent removes a dead holder everywhere") {
  InMemoryStore store;
  auto a = AgentId::from_name("a"), b = AgentId::from_name("b");
  DataVersion v1{DataId::random(), 1}, v2{DataId::random(), 1};
  store.make_persistent(v1, Bytes{1}, a);
  store.replicate_to(v1, b);
  store.make_persistent(v2, Bytes{2}, b);
  store.purge_agent(b);
  CHECK(store.get_locations(v1) == std::set<AgentId>{a});
  CHECK(store.get_locations(v2).empty());
}

TEST_CASE("get skips an offline replica and reads another") {
  InMemoryStore store;
  auto a = AgentId::from_name("a"), b = AgentId::from_name("b"), c = AgentId::from_name("c");
  DataVersion v{DataId::random(), 1};
  store.make_persistent(v, Bytes{4, 2}, a);
  store.replicate_to(v, b);
  store.agent(a).set_online(false);
  CHECK(store.get(v, c) == Bytes{4, 2});
  CHECK(store.get_locations(v) == std::set<AgentId>{a, b, c});
  store.agent(b).set_online(false);
  store.agent(c).set_online(false);
  CHECK_THROWS_AS(store.get(v, AgentId::from_name("d")), Error);
}
