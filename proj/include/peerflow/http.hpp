#pragma once

// HTTP transport shared by agents, the store client and the CLI.

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "peerflow/core.hpp"
#include "peerflow/object_store.hpp"
#include "peerflow/serialize.hpp"

namespace httplib {
class Client;
class Server;
struct Request;
struct Response;
}  // namespace httplib

namespace peerflow {

/// HTTP status for an error code (400 validation, 404 unknown, 409 capacity/conflict, 503 draining).
int http_status(Errc code);
/// {"error": <code name>, "message": ...}
json error_body(const Error& e);
/// Rebuilds the Error carried by a non-2xx response.
[[noreturn]] void throw_http_error(int status, const std::string& body);

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string content_type;

  bool ok() const { return status >= 200 && status < 300; }
  json as_json() const;
};

struct Timeouts {
  std::chrono::milliseconds connect{1000};
  std::chrono::milliseconds read{60000};
};

/// Keep-alive connections per endpoint. Thread-safe; each call borrows a
/// connection so concurrent requests to one endpoint do not serialize.
/// Connection failures throw Errc::TargetUnreachable.
class HttpClientPool {
 public:
  explicit HttpClientPool(Timeouts t = {});
  ~HttpClientPool();

  HttpResponse request(const Endpoint& to, const std::string& method, const std::string& path,
                       const std::string& body = {}, const std::string& content_type = "application/json");

  /// request() then throw_http_error() on non-2xx; parses an empty body as null.
  json call(const Endpoint& to, const std::string& method, const std::string& path, const json& body = nullptr);

 private:
  std::unique_ptr<httplib::Client> borrow(const Endpoint& to);
  void give_back(const Endpoint& to, std::unique_ptr<httplib::Client> c);

  Timeouts timeouts_;
  std::mutex mu_;
  std::map<Endpoint, std::vector<std::unique_ptr<httplib::Client>>> idle_;
};

/// Runs a request with the fixed transport retry schedule (100, 300, 900 ms)
/// on TargetUnreachable, then rethrows.
template <typename Fn>
auto with_retries(Fn&& fn, const std::vector<std::chrono::milliseconds>& backoff = {
                                   std::chrono::milliseconds(100), std::chrono::milliseconds(300),
                                   std::chrono::milliseconds(900)}) -> decltype(fn()) {
  for (std::size_t i = 0;; ++i) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() != Errc::TargetUnreachable || i >= backoff.size()) throw;
      std::this_thread::sleep_for(backoff[i]);
    }
  }
}

/// Byte holder of a remote agent, reached through /data/{id}/{v}?local=1.
class HttpBlobPeer final : public BlobPeer {
 public:
  HttpBlobPeer(std::shared_ptr<HttpClientPool> pool, Endpoint ep) : pool_(std::move(pool)), ep_(std::move(ep)) {}

  void put(const DataVersion& v, std::shared_ptr<const Bytes> payload) override;
  std::shared_ptr<const Bytes> fetch(const DataVersion& v) override;
  void erase(const DataVersion& v) override;

 private:
  std::shared_ptr<HttpClientPool> pool_;
  Endpoint ep_;
};

/// StoreClient over an agent's /data API; the agent acts as store coordinator.
class RemoteStoreClient final : public StoreClient {
 public:
  RemoteStoreClient(std::shared_ptr<HttpClientPool> pool, Endpoint coordinator)
      : pool_(std::move(pool)), ep_(std::move(coordinator)) {}

  StoredObject make_persistent(const DataVersion& v, Bytes payload, AgentId home) override;
  Bytes get(const DataVersion& v, AgentId requester) override;
  std::set<AgentId> get_locations(const DataVersion& v) override;
  std::set<AgentId> replicate_to(const DataVersion& v, AgentId target) override;
  std::set<AgentId> drop(const DataVersion& v, AgentId agent) override;
  std::optional<ObjectInfo> stat(const DataVersion& v) override;

 private:
  std::shared_ptr<HttpClientPool> pool_;
  Endpoint ep_;
};

std::string data_path(const DataVersion& v);

/// Bytes as an std::string body and back.
std::string to_body(const Bytes& b);
Bytes from_body(const std::string& s);

}  // namespace peerflow
