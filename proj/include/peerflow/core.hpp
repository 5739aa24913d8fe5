#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace peerflow {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class Errc {
  IllegalTransition,
  UnknownApplication,
  UnknownData,
  UnknownTask,
  UnknownAgent,
  UnknownProgram,
  InvalidArgument,
  ApplicationClosed,
  VersionConflict,
  NotFound,
  LastReplica,
  TargetUnreachable,
  RejectedNoCapacity,
  AgentDraining,
  ExecutorError,
  MissingInput,
  MalformedTrace,
  Timeout,
  PortInUse,
  InvalidConfig,
};

std::string_view to_string(Errc code);
std::optional<Errc> parse_errc(std::string_view name);

/// Every runtime failure is reported as an Error carrying a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

/// 128-bit identifier rendered as lowercase 8-4-4-4-12 hex.
struct Uuid {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  static Uuid random();
  /// Deterministic identifier derived from a name (stable across runs).
  static Uuid from_name(std::string_view name);
  static std::optional<Uuid> parse(std::string_view text);

  std::string str() const;
  bool is_nil() const noexcept { return hi == 0 && lo == 0; }

  friend auto operator<=>(const Uuid&, const Uuid&) = default;
};

template <typename Tag>
struct Id {
  Uuid value;

  static Id random() { return Id{Uuid::random()}; }
  static Id from_name(std::string_view name) { return Id{Uuid::from_name(name)}; }
  static Id parse(std::string_view text) {
    auto u = Uuid::parse(text);
    if (!u) throw Error(Errc::InvalidArgument, "malformed identifier '" + std::string(text) + "'");
    return Id{*u};
  }

  std::string str() const { return value.str(); }

  friend auto operator<=>(const Id&, const Id&) = default;
};

struct DataTag {};
struct TaskTag {};
struct AgentTag {};
struct AppTag {};

using DataId = Id<DataTag>;
using TaskId = Id<TaskTag>;
using AgentId = Id<AgentTag>;
using ApplicationId = Id<AppTag>;

/// Immutable version of a datum. Writes produce version+1; version 0 is the
/// explicitly put initial value.
struct DataVersion {
  DataId data;
  std::uint64_t version = 0;

  friend auto operator<=>(const DataVersion&, const DataVersion&) = default;
};

std::string to_string(const DataVersion& v);

// ---------------------------------------------------------------------------
// Task model
// ---------------------------------------------------------------------------

enum class AccessMode { IN, OUT, INOUT };

inline bool reads(AccessMode m) { return m != AccessMode::OUT; }
inline bool writes(AccessMode m) { return m != AccessMode::IN; }

enum class ProcessorKind { CPU, GPU };

std::string_view to_string(AccessMode m);
std::string_view to_string(ProcessorKind k);
AccessMode parse_access_mode(std::string_view s);
ProcessorKind parse_processor_kind(std::string_view s);

struct ResourceConstraints {
  int cores = 1;
  std::int64_t memory_mb = 0;
  std::set<std::string> software_tags;
  ProcessorKind processor_kind = ProcessorKind::CPU;
  int nodes = 1;

  friend bool operator==(const ResourceConstraints&, const ResourceConstraints&) = default;
};

struct BuiltinKind {
  std::string function;
  friend bool operator==(const BuiltinKind&, const BuiltinKind&) = default;
};
struct ShellKind {
  std::string command;
  friend bool operator==(const ShellKind&, const ShellKind&) = default;
};
struct ServiceKind {
  std::string url;
  std::string method = "POST";
  friend bool operator==(const ServiceKind&, const ServiceKind&) = default;
};
struct GangKind {
  std::string function;
  friend bool operator==(const GangKind&, const GangKind&) = default;
};

using TaskKind = std::variant<BuiltinKind, ShellKind, ServiceKind, GangKind>;

std::string_view kind_name(const TaskKind& k);
/// Function name for BUILTIN/GANG, command for SHELL, url for SERVICE.
const std::string& kind_target(const TaskKind& k);

using Scalar = std::variant<std::int64_t, double, std::string>;

struct Param {
  DataId data;
  AccessMode mode = AccessMode::IN;
  friend bool operator==(const Param&, const Param&) = default;
};

struct TaskSpec {
  ApplicationId app;
  TaskKind kind = BuiltinKind{};
  std::vector<Param> params;
  std::vector<Scalar> literals;
  ResourceConstraints constraints;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// Throws InvalidArgument when the spec breaks a structural invariant
/// (duplicate data ids, cores < 1, multi-node non-gang task, ...).
void validate(const TaskSpec& spec);

std::int64_t literal_int(const TaskSpec& spec, std::size_t index, std::int64_t fallback);

// ---------------------------------------------------------------------------
// Task lifecycle
// ---------------------------------------------------------------------------

enum class TaskState { REGISTERED, READY, SCHEDULED, RUNNING, COMPLETED, FAILED, RESUBMITTED, CANCELLED };

enum class LifecycleEvent {
  DepsSatisfied,   // REGISTERED -> READY
  Scheduled,       // READY -> SCHEDULED
  Started,         // SCHEDULED -> RUNNING
  Succeeded,       // RUNNING -> COMPLETED
  Failed,          // RUNNING|SCHEDULED -> FAILED
  Resubmitted,     // FAILED -> RESUBMITTED
  Requeued,        // RESUBMITTED -> READY
  Cancelled,       // any non-terminal -> CANCELLED
};

inline constexpr TaskState kAllTaskStates[] = {
    TaskState::REGISTERED, TaskState::READY,  TaskState::SCHEDULED,   TaskState::RUNNING,
    TaskState::COMPLETED,  TaskState::FAILED, TaskState::RESUBMITTED, TaskState::CANCELLED};

inline constexpr LifecycleEvent kAllLifecycleEvents[] = {
    LifecycleEvent::DepsSatisfied, LifecycleEvent::Scheduled, LifecycleEvent::Started,
    LifecycleEvent::Succeeded,     LifecycleEvent::Failed,    LifecycleEvent::Resubmitted,
    LifecycleEvent::Requeued,      LifecycleEvent::Cancelled};

std::string_view to_string(TaskState s);
std::string_view to_string(LifecycleEvent e);
TaskState parse_task_state(std::string_view s);

/// COMPLETED, FAILED and CANCELLED. A FAILED task that is resubmitted never
/// rests in FAILED, so an observed FAILED is final.
bool is_terminal(TaskState s);

/// Throws Errc::IllegalTransition for undefined (state, event) pairs.
TaskState transition(TaskState state, LifecycleEvent event);

// ---------------------------------------------------------------------------
// Resources and agents
// ---------------------------------------------------------------------------

struct ResourcePool {
  int total_cores = 0;
  std::int64_t total_memory_mb = 0;
  int reserved_cores = 0;
  std::int64_t reserved_memory_mb = 0;

  int free_cores() const noexcept { return total_cores - reserved_cores; }
  std::int64_t free_memory_mb() const noexcept { return total_memory_mb - reserved_memory_mb; }
  bool fits(int cores, std::int64_t memory_mb) const noexcept {
    return free_cores() >= cores && free_memory_mb() >= memory_mb;
  }
  /// Returns false (and leaves the pool untouched) if the request does not fit.
  bool reserve(int cores, std::int64_t memory_mb) noexcept;
  void release(int cores, std::int64_t memory_mb) noexcept;
  bool within_bounds() const noexcept {
    return reserved_cores >= 0 && reserved_cores <= total_cores && reserved_memory_mb >= 0 &&
           reserved_memory_mb <= total_memory_mb;
  }

  friend bool operator==(const ResourcePool&, const ResourcePool&) = default;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  int port = 0;

  static Endpoint parse(std::string_view text);  // "host:port" or "http://host:port"
  std::string str() const { return host + ":" + std::to_string(port); }

  friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

struct AgentDescriptor {
  AgentId agent_id;
  std::string name;
  Endpoint endpoint;
  ResourcePool capacity;
  std::set<std::string> software_tags;
  std::set<ProcessorKind> processor_kinds{ProcessorKind::CPU};
};

}  // namespace peerflow

template <typename Tag>
struct std::hash<peerflow::Id<Tag>> {
  std::size_t operator()(const peerflow::Id<Tag>& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value.hi * 0x9e3779b97f4a7c15ULL ^ id.value.lo);
  }
};

template <>
struct std::hash<peerflow::DataVersion> {
  std::size_t operator()(const peerflow::DataVersion& v) const noexcept {
    return std::hash<peerflow::DataId>{}(v.data) ^ (v.version * 0xff51afd7ed558ccdULL);
  }
};
