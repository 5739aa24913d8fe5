#include "peerflow/http.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace peerflow {

int http_status(Errc code) {
  switch (code) {
    case Errc::UnknownApplication:
    case Errc::UnknownTask:
    case Errc::UnknownAgent:
    case Errc::UnknownProgram:
    case Errc::UnknownData:
    case Errc::NotFound: return 404;
    case Errc::RejectedNoCapacity:
    case Errc::VersionConflict:
    case Errc::LastReplica: return 409;
    case Errc::AgentDraining: return 503;
    case Errc::TargetUnreachable: return 502;
    case Errc::Timeout: return 504;
    case Errc::IllegalTransition:
    case Errc::ExecutorError:
    case Errc::MissingInput:
    case Errc::PortInUse: return 500;
    default: return 400;
  }
}

json error_body(const Error& e) {
  std::string msg = e.what();
  auto prefix = std::string(to_string(e.code())) + ": ";
  if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
  return json{{"error", to_string(e.code())}, {"message", msg}};
}

void throw_http_error(int status, const std::string& body) {
  try {
    auto j = json::parse(body);
    if (j.is_object() && j.contains("error")) {
      auto code = parse_errc(j["error"].get<std::string>());
      if (code) throw Error(*code, j.value("message", std::string{}));
    }
  } catch (const json::exception&) {
  }
  if (status == 404) throw Error(Errc::NotFound, "HTTP 404");
  throw Error(Errc::InvalidArgument, "HTTP " + std::to_string(status) + ": " + body.substr(0, 200));
}

json HttpResponse::as_json() const {
  if (body.empty()) return nullptr;
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed response body: ") + e.what());
  }
}

HttpClientPool::HttpClientPool(Timeouts t) : timeouts_(t) {}
HttpClientPool::~HttpClientPool() = default;

std::unique_ptr<httplib::Client> HttpClientPool::borrow(const Endpoint& to) {
  {
    std::lock_guard lock(mu_);
    auto& v = idle_[to];
    if (!v.empty()) {
      auto c = std::move(v.back());
      v.pop_back();
      return c;
    }
  }
  auto c = std::make_unique<httplib::Client>(to.host, to.port);
  c->set_keep_alive(true);
  c->set_tcp_nodelay(true);
  c->set_connection_timeout(timeouts_.connect);
  c->set_read_timeout(timeouts_.read);
  c->set_write_timeout(timeouts_.read);
  return c;
}

void HttpClientPool::give_back(const Endpoint& to, std::unique_ptr<httplib::Client> c) {
  std::lock_guard lock(mu_);
  auto& v = idle_[to];
  if (v.size() < 16) v.push_back(std::move(c));
}

HttpResponse HttpClientPool::request(const Endpoint& to, const std::string& method, const std::string& path,
                                     const std::string& body, const std::string& content_type) {
  // a pooled connection may have been closed by the server; retry once on a fresh one
  for (int round = 0; round < 2; ++round) {
    auto client = borrow(to);
    httplib::Result res{nullptr, httplib::Error::Unknown};
    if (method == "GET") res = client->Get(path);
    else if (method == "POST") res = client->Post(path, body, content_type);
    else if (method == "PUT") res = client->Put(path, body, content_type);
    else if (method == "DELETE") res = client->Delete(path, body, content_type);
    else throw Error(Errc::InvalidArgument, "unsupported method " + method);

    if (res) {
      HttpResponse out{res->status, std::move(res->body), res->get_header_value("Content-Type")};
      give_back(to, std::move(client));
      return out;
    }
    auto err = res.error();
    bool connect_failed = err == httplib::Error::Connection || err == httplib::Error::ConnectionTimeout;
    if (connect_failed || round == 1) {
      throw Error(Errc::TargetUnreachable,
                  method + " " + to.str() + path + ": " + httplib::to_string(err));
    }
  }
  throw Error(Errc::TargetUnreachable, to.str());
}

json HttpClientPool::call(const Endpoint& to, const std::string& method, const std::string& path,
                          const json& body) {
  auto r = request(to, method, path, body.is_null() ? std::string{} : body.dump());
  if (!r.ok()) throw_http_error(r.status, r.body);
  return r.as_json();
}

std::string data_path(const DataVersion& v) { return "/data/" + v.data.str() + "/" + std::to_string(v.version); }

std::string to_body(const Bytes& b) { return std::string(b.begin(), b.end()); }
Bytes from_body(const std::string& s) { return Bytes(s.begin(), s.end()); }

// --- HttpBlobPeer -----------------------------------------------------------------

void HttpBlobPeer::put(const DataVersion& v, std::shared_ptr<const Bytes> payload) {
  auto r = pool_->request(ep_, "POST", data_path(v) + "?local=1", to_body(*payload), "application/octet-stream");
  if (!r.ok()) throw_http_error(r.status, r.body);
}

std::shared_ptr<const Bytes> HttpBlobPeer::fetch(const DataVersion& v) {
  auto r = pool_->request(ep_, "GET", data_path(v) + "?local=1");
  if (r.status == 404) return nullptr;
  if (!r.ok()) throw_http_error(r.status, r.body);
  return std::make_shared<const Bytes>(from_body(r.body));
}

void HttpBlobPeer::erase(const DataVersion& v) {
  auto r = pool_->request(ep_, "DELETE", data_path(v) + "?local=1");
  if (!r.ok() && r.status != 404) throw_http_error(r.status, r.body);
}

// --- RemoteStoreClient --------------------------------------------------------------

namespace {

std::set<AgentId> replicas_of(const json& j) { return j.at("replicas").get<std::set<AgentId>>(); }

}  // namespace

StoredObject RemoteStoreClient::make_persistent(const DataVersion& v, Bytes payload, AgentId home) {
  auto r = pool_->request(ep_, "POST", data_path(v) + "?home=" + home.str(), to_body(payload),
                          "application/octet-stream");
  if (!r.ok()) throw_http_error(r.status, r.body);
  auto j = r.as_json();
  StoredObject o;
  o.version = v;
  o.size_bytes = j.at("size_bytes").get<std::uint64_t>();
  o.replicas = replicas_of(j);
  o.payload = std::make_shared<const Bytes>(std::move(payload));
  return o;
}

Bytes RemoteStoreClient::get(const DataVersion& v, AgentId requester) {
  auto r = pool_->request(ep_, "GET", data_path(v) + "?requester=" + requester.str());
  if (!r.ok()) throw_http_error(r.status, r.body);
  return from_body(r.body);
}

std::set<AgentId> RemoteStoreClient::get_locations(const DataVersion& v) {
  return replicas_of(pool_->call(ep_, "GET", data_path(v) + "/locations"));
}

std::set<AgentId> RemoteStoreClient::replicate_to(const DataVersion& v, AgentId target) {
  return replicas_of(pool_->call(ep_, "POST", data_path(v) + "/replicas/" + target.str()));
}

std::set<AgentId> RemoteStoreClient::drop(const DataVersion& v, AgentId agent) {
  return replicas_of(pool_->call(ep_, "DELETE", data_path(v) + "/replicas/" + agent.str()));
}

std::optional<ObjectInfo> RemoteStoreClient::stat(const DataVersion& v) {
  auto j = pool_->call(ep_, "GET", data_path(v) + "/locations");
  if (!j.value("known", false)) return std::nullopt;
  return ObjectInfo{j.at("size_bytes").get<std::uint64_t>(), replicas_of(j)};
}

}  // namespace peerflow
