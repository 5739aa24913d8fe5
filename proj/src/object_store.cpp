#include "peerflow/object_store.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

namespace peerflow {

// --- LocalBlobStore -------------------------------------------------------------

void LocalBlobStore::check_online() const {
  if (!online_) throw Error(Errc::TargetUnreachable, "blob peer is offline");
}

void LocalBlobStore::put(const DataVersion& v, std::shared_ptr<const Bytes> payload) {
  check_online();
  std::lock_guard lock(mu_);
  blobs_[v] = std::move(payload);
}

std::shared_ptr<const Bytes> LocalBlobStore::fetch(const DataVersion& v) {
  check_online();
  std::lock_guard lock(mu_);
  auto it = blobs_.find(v);
  return it == blobs_.end() ? nullptr : it->second;
}

void LocalBlobStore::erase(const DataVersion& v) {
  check_online();
  std::lock_guard lock(mu_);
  blobs_.erase(v);
}

bool LocalBlobStore::contains(const DataVersion& v) const {
  std::lock_guard lock(mu_);
  return blobs_.contains(v);
}

std::size_t LocalBlobStore::object_count() const {
  std::lock_guard lock(mu_);
  return blobs_.size();
}

std::uint64_t LocalBlobStore::bytes_held() const {
  std::lock_guard lock(mu_);
  std::uint64_t n = 0;
  for (const auto& [_, b] : blobs_) n += b->size();
  return n;
}

// --- ReplicatedStore ----------------------------------------------------------------

std::shared_ptr<ReplicatedStore::Entry> ReplicatedStore::find(const DataVersion& v) const {
  std::lock_guard lock(meta_);
  auto it = entries_.find(v);
  return it == entries_.end() ? nullptr : it->second;
}

std::shared_ptr<ReplicatedStore::Entry> ReplicatedStore::find_or_create(const DataVersion& v) {
  std::lock_guard lock(meta_);
  auto& e = entries_[v];
  if (!e) e = std::make_shared<Entry>();
  return e;
}

std::shared_ptr<BlobPeer> ReplicatedStore::peer(AgentId a) const { return resolver_(a); }

std::pair<std::shared_ptr<const Bytes>, AgentId> ReplicatedStore::read_from_replicas(
    const DataVersion& v, const std::set<AgentId>& replicas, std::optional<AgentId> skip) {
  for (const auto& source : replicas) {
    if (skip && source == *skip) continue;
    auto p = peer(source);
    if (!p) continue;
    try {
      if (auto bytes = p->fetch(v)) return {bytes, source};
    } catch (const Error& e) {
      if (e.code() != Errc::TargetUnreachable) throw;
      spdlog::debug("replica {} of {} unreachable", source.str(), to_string(v));
    }
  }
  return {nullptr, AgentId{}};
}

StoredObject ReplicatedStore::make_persistent(const DataVersion& v, Bytes payload, AgentId home) {
  auto e = find_or_create(v);
  std::lock_guard io(e->io);
  auto shared = std::make_shared<const Bytes>(std::move(payload));

  std::set<AgentId> replicas;
  bool present = false;
  {
    std::lock_guard lock(meta_);
    present = e->present;
    replicas = e->replicas;
  }
  if (present) {
    auto [existing, _] = read_from_replicas(v, replicas, std::nullopt);
    if (existing) {
      if (*existing != *shared) throw Error(Errc::VersionConflict, to_string(v) + " already persisted with different bytes");
      return StoredObject{v, existing, existing->size(), replicas};
    }
    // every replica is gone: the re-produced value takes its place
    spdlog::info("{} had no reachable replica; persisting it again at {}", to_string(v), home.str());
  }

  auto p = peer(home);
  if (!p) throw Error(Errc::TargetUnreachable, "home agent " + home.str() + " is not reachable");
  p->put(v, shared);
  std::lock_guard lock(meta_);
  e->present = true;
  e->size = shared->size();
  e->replicas = {home};
  return StoredObject{v, shared, shared->size(), e->replicas};
}

Bytes ReplicatedStore::get(const DataVersion& v, AgentId requester) {
  auto e = find(v);
  if (!e) throw Error(Errc::NotFound, to_string(v));
  std::lock_guard io(e->io);
  std::set<AgentId> replicas;
  {
    std::lock_guard lock(meta_);
    if (!e->present) throw Error(Errc::NotFound, to_string(v));
    replicas = e->replicas;
  }
  if (replicas.contains(requester)) {
    if (auto p = peer(requester)) {
      try {
        if (auto bytes = p->fetch(v)) return *bytes;
      } catch (const Error& err) {
        if (err.code() != Errc::TargetUnreachable) throw;
      }
    }
  }
  auto [bytes, source] = read_from_replicas(v, replicas, requester);
  if (!bytes) throw Error(Errc::TargetUnreachable, "no reachable replica of " + to_string(v));
  ++transfers_;
  transferred_bytes_ += bytes->size();
  if (auto p = peer(requester)) {
    try {
      p->put(v, bytes);
      std::lock_guard lock(meta_);
      e->replicas.insert(requester);
    } catch (const Error& err) {
      if (err.code() != Errc::TargetUnreachable) throw;
    }
  }
  return *bytes;
}

std::set<AgentId> ReplicatedStore::get_locations(const DataVersion& v) {
  std::lock_guard lock(meta_);
  auto it = entries_.find(v);
  if (it == entries_.end() || !it->second->present) return {};
  return it->second->replicas;
}

std::optional<ObjectInfo> ReplicatedStore::stat(const DataVersion& v) {
  std::lock_guard lock(meta_);
  auto it = entries_.find(v);
  if (it == entries_.end() || !it->second->present) return std::nullopt;
  return ObjectInfo{it->second->size, it->second->replicas};
}

std::set<AgentId> ReplicatedStore::replicate_to(const DataVersion& v, AgentId target) {
  auto e = find(v);
  if (!e) throw Error(Errc::NotFound, to_string(v));
  std::lock_guard io(e->io);
  std::set<AgentId> replicas;
  {
    std::lock_guard lock(meta_);
    if (!e->present) throw Error(Errc::NotFound, to_string(v));
    replicas = e->replicas;
  }
  if (replicas.contains(target)) return replicas;
  auto p = peer(target);
  if (!p) throw Error(Errc::TargetUnreachable, "target " + target.str() + " is not reachable");
  auto [bytes, source] = read_from_replicas(v, replicas, target);
  if (!bytes) throw Error(Errc::TargetUnreachable, "no reachable replica of " + to_string(v));
  p->put(v, bytes);
  ++transfers_;
  transferred_bytes_ += bytes->size();
  std::lock_guard lock(meta_);
  e->replicas.insert(target);
  return e->replicas;
}

std::set<AgentId> ReplicatedStore::drop(const DataVersion& v, AgentId agent) {
  auto e = find(v);
  if (!e) throw Error(Errc::NotFound, to_string(v));
  std::lock_guard io(e->io);
  {
    std::lock_guard lock(meta_);
    if (!e->present || !e->replicas.contains(agent))
      throw Error(Errc::NotFound, to_string(v) + " has no replica on " + agent.str());
    if (e->replicas.size() == 1) throw Error(Errc::LastReplica, "refusing to drop the last replica of " + to_string(v));
  }
  if (auto p = peer(agent)) {
    try {
      p->erase(v);
    } catch (const Error& err) {
      if (err.code() != Errc::TargetUnreachable) throw;
    }
  }
  std::lock_guard lock(meta_);
  e->replicas.erase(agent);
  return e->replicas;
}

void ReplicatedStore::adopt(const DataVersion& v, std::uint64_t size_bytes, AgentId holder) {
  auto e = find_or_create(v);
  std::lock_guard io(e->io);
  std::lock_guard lock(meta_);
  if (e->present && e->size != size_bytes)
    throw Error(Errc::VersionConflict, to_string(v) + " adopted with a different size");
  e->present = true;
  e->size = size_bytes;
  e->replicas.insert(holder);
}

void ReplicatedStore::purge_agent(AgentId agent) {
  std::lock_guard lock(meta_);
  for (auto& [v, e] : entries_) {
    e->replicas.erase(agent);
    if (e->present && e->replicas.empty()) spdlog::warn("{} lost its last replica with agent {}", to_string(v), agent.str());
  }
}

std::vector<DataVersion> ReplicatedStore::versions() const {
  std::lock_guard lock(meta_);
  std::vector<DataVersion> out;
  for (const auto& [v, e] : entries_)
    if (e->present) out.push_back(v);
  std::sort(out.begin(), out.end());
  return out;
}

// --- InMemoryStore -------------------------------------------------------------------

InMemoryStore::InMemoryStore()
    : InMemoryStore(std::make_shared<std::mutex>(), std::make_shared<std::map<AgentId, std::shared_ptr<LocalBlobStore>>>()) {}

InMemoryStore::InMemoryStore(std::shared_ptr<std::mutex> mu,
                             std::shared_ptr<std::map<AgentId, std::shared_ptr<LocalBlobStore>>> peers)
    : ReplicatedStore([mu, peers](AgentId id) -> std::shared_ptr<BlobPeer> {
        std::lock_guard lock(*mu);
        auto& p = (*peers)[id];
        if (!p) p = std::make_shared<LocalBlobStore>();
        return p;
      }),
      mu_(std::move(mu)),
      peers_(std::move(peers)) {}

LocalBlobStore& InMemoryStore::agent(AgentId id) {
  std::lock_guard lock(*mu_);
  auto& p = (*peers_)[id];
  if (!p) p = std::make_shared<LocalBlobStore>();
  return *p;
}

}  // namespace peerflow
