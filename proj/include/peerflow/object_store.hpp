#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "peerflow/codec.hpp"
#include "peerflow/core.hpp"

namespace peerflow {

struct ObjectInfo {
  std::uint64_t size_bytes = 0;
  std::set<AgentId> replicas;
};

struct StoredObject {
  DataVersion version;
  std::shared_ptr<const Bytes> payload;
  std::uint64_t size_bytes = 0;
  std::set<AgentId> replicas;
};

/// Persistent-object interface. Object-facing calls (make_persistent, get)
/// and runtime-facing calls (get_locations, replicate_to, drop, stat) share
/// one contract that every backend must satisfy.
class StoreClient {
 public:
  virtual ~StoreClient() = default;

  /// Idempotent for identical bytes; Errc::VersionConflict for different bytes.
  virtual StoredObject make_persistent(const DataVersion& v, Bytes payload, AgentId home) = 0;
  /// A requester outside the replica set becomes a replica (fetch-caching).
  virtual Bytes get(const DataVersion& v, AgentId requester) = 0;
  /// Empty for unknown versions.
  virtual std::set<AgentId> get_locations(const DataVersion& v) = 0;
  virtual std::set<AgentId> replicate_to(const DataVersion& v, AgentId target) = 0;
  /// Refuses to remove the last replica (Errc::LastReplica).
  virtual std::set<AgentId> drop(const DataVersion& v, AgentId agent) = 0;
  /// Size and replica metadata without moving bytes.
  virtual std::optional<ObjectInfo> stat(const DataVersion& v) = 0;
};

/// Byte holder of a single agent.
class BlobPeer {
 public:
  virtual ~BlobPeer() = default;
  virtual void put(const DataVersion& v, std::shared_ptr<const Bytes> payload) = 0;
  /// nullptr when the agent does not hold the version; throws TargetUnreachable.
  virtual std::shared_ptr<const Bytes> fetch(const DataVersion& v) = 0;
  virtual void erase(const DataVersion& v) = 0;
};

class LocalBlobStore final : public BlobPeer {
 public:
  void put(const DataVersion& v, std::shared_ptr<const Bytes> payload) override;
  std::shared_ptr<const Bytes> fetch(const DataVersion& v) override;
  void erase(const DataVersion& v) override;

  bool contains(const DataVersion& v) const;
  std::size_t object_count() const;
  std::uint64_t bytes_held() const;
  /// Offline peers throw TargetUnreachable on every call (simulates a stopped agent).
  void set_online(bool online) { online_ = online; }
  bool online() const { return online_; }

 private:
  void check_online() const;

  mutable std::mutex mu_;
  std::unordered_map<DataVersion, std::shared_ptr<const Bytes>> blobs_;
  std::atomic<bool> online_{true};
};

/// Returns nullptr for agents that cannot be reached.
using PeerResolver = std::function<std::shared_ptr<BlobPeer>(AgentId)>;

/// Reference store: bytes live on agents' blob peers, replica metadata lives
/// here. Operations on one version are linearizable; distinct versions
/// proceed in parallel.
class ReplicatedStore : public StoreClient {
 public:
  explicit ReplicatedStore(PeerResolver resolver) : resolver_(std::move(resolver)) {}

  StoredObject make_persistent(const DataVersion& v, Bytes payload, AgentId home) override;
  Bytes get(const DataVersion& v, AgentId requester) override;
  std::set<AgentId> get_locations(const DataVersion& v) override;
  std::set<AgentId> replicate_to(const DataVersion& v, AgentId target) override;
  std::set<AgentId> drop(const DataVersion& v, AgentId agent) override;
  std::optional<ObjectInfo> stat(const DataVersion& v) override;

  /// Records an object that `holder` already wrote into its own blob peer.
  void adopt(const DataVersion& v, std::uint64_t size_bytes, AgentId holder);
  /// Removes a dead agent from every replica set.
  void purge_agent(AgentId agent);

  std::vector<DataVersion> versions() const;
  /// Transfers between agents performed by get/replicate_to.
  std::uint64_t transfer_count() const { return transfers_; }
  std::uint64_t transferred_bytes() const { return transferred_bytes_; }

 private:
  struct Entry {
    std::mutex io;  // serializes operations on this version
    bool present = false;
    std::uint64_t size = 0;
    std::set<AgentId> replicas;
  };

  std::shared_ptr<Entry> find(const DataVersion& v) const;
  std::shared_ptr<Entry> find_or_create(const DataVersion& v);
  std::shared_ptr<BlobPeer> peer(AgentId a) const;
  /// Reads bytes from the first reachable replica other than `skip`.
  std::pair<std::shared_ptr<const Bytes>, AgentId> read_from_replicas(const DataVersion& v,
                                                                      const std::set<AgentId>& replicas,
                                                                      std::optional<AgentId> skip);

  PeerResolver resolver_;
  mutable std::mutex meta_;  // guards entries_ and each entry's metadata fields
  std::unordered_map<DataVersion, std::shared_ptr<Entry>> entries_;
  std::atomic<std::uint64_t> transfers_{0};
  std::atomic<std::uint64_t> transferred_bytes_{0};
};

/// In-process reference backend: one LocalBlobStore per agent, created on demand.
class InMemoryStore final : public ReplicatedStore {
 public:
  InMemoryStore();

  LocalBlobStore& agent(AgentId id);

 private:
  std::shared_ptr<std::mutex> mu_;
  std::shared_ptr<std::map<AgentId, std::shared_ptr<LocalBlobStore>>> peers_;
  InMemoryStore(std::shared_ptr<std::mutex> mu, std::shared_ptr<std::map<AgentId, std::shared_ptr<LocalBlobStore>>> peers);
};

}  // namespace peerflow
