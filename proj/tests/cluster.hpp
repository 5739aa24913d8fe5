#pragma once

// In-process agents on ephemeral localhost ports, registered with each other
// over REST.

#include <chrono>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "peerflow/agent.hpp"
#include "peerflow/http.hpp"

namespace peerflow::testing {

inline AgentConfig agent_config(std::string name, int cores, std::set<std::string> tags = {},
                                std::chrono::milliseconds probe_period = std::chrono::milliseconds(500)) {
  AgentConfig c;
  c.name = std::move(name);
  c.cores = cores;
  c.memory_mb = 4096;
  c.software_tags = std::move(tags);
  c.runtime.probe.period = probe_period;
  c.runtime.probe.timeout = std::min(probe_period, std::chrono::milliseconds(250));
  c.server_threads = 32;
  return c;
}

class Cluster {
 public:
  explicit Cluster(std::vector<AgentConfig> configs, bool cross_register = true) {
    for (auto& c : configs) {
      agents_.push_back(std::make_unique<Agent>(c));
      agents_.back()->start();
    }
    if (!cross_register) return;
    for (auto& a : agents_)
      for (auto& b : agents_)
        if (a != b) add(*a, *b);
  }

  ~Cluster() {
    for (auto& a : agents_) a->stop();
  }

  Agent& operator[](const std::string& name) {
    for (auto& a : agents_)
      if (a->descriptor().name == name) return *a;
    throw std::out_of_range(name);
  }
  Agent& master() { return *agents_.front(); }
  std::vector<std::unique_ptr<Agent>>& agents() { return agents_; }
  HttpClientPool& http() { return pool_; }

  json call(const std::string& method, const std::string& path, const json& body = nullptr) {
    return pool_.call(master().endpoint(), method, path, body);
  }
  HttpResponse request(const std::string& method, const std::string& path, const std::string& body = {},
                       const std::string& type = "application/json") {
    return pool_.request(master().endpoint(), method, path, body, type);
  }

  /// Registers `b` in `a`'s view via PUT /resources.
  void add(Agent& a, Agent& b) {
    pool_.call(a.endpoint(), "PUT", "/resources", json{{"op", "add"}, {"agent", b.descriptor()}});
  }

  /// Starts a bundled program on the master and waits for it.
  json run(const std::string& program, json literals = json::array(), json hints = json::object()) {
    auto app = call("POST", "/applications", json{{"main", program}, {"literals", literals}, {"hints", hints}})["app"];
    return call("GET", "/applications/" + app.get<std::string>() + "?wait=true");
  }

 private:
  std::vector<std::unique_ptr<Agent>> agents_;
  HttpClientPool pool_;
};

}  // namespace peerflow::testing
