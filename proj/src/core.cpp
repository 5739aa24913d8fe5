#include "peerflow/core.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <random>

namespace peerflow {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::UnknownApplication: return "UnknownApplication";
    case Errc::UnknownData: return "UnknownData";
    case Errc::UnknownTask: return "UnknownTask";
    case Errc::UnknownAgent: return "UnknownAgent";
    case Errc::UnknownProgram: return "UnknownProgram";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ApplicationClosed: return "ApplicationClosed";
    case Errc::VersionConflict: return "VersionConflict";
    case Errc::NotFound: return "NotFound";
    case Errc::LastReplica: return "LastReplica";
    case Errc::TargetUnreachable: return "TargetUnreachable";
    case Errc::RejectedNoCapacity: return "RejectedNoCapacity";
    case Errc::AgentDraining: return "AgentDraining";
    case Errc::ExecutorError: return "ExecutorError";
    case Errc::MissingInput: return "MissingInput";
    case Errc::MalformedTrace: return "MalformedTrace";
    case Errc::Timeout: return "Timeout";
    case Errc::PortInUse: return "PortInUse";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

std::optional<Errc> parse_errc(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(Errc::InvalidConfig); ++i) {
    auto code = static_cast<Errc>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

// --- Uuid -------------------------------------------------------------------

Uuid Uuid::random() {
  thread_local std::mt19937_64 rng{[] {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd()};
    return std::mt19937_64(seq);
  }()};
  Uuid u{rng(), rng()};
  if (u.is_nil()) u.lo = 1;
  return u;
}

Uuid Uuid::from_name(std::string_view name) {
  // Two independent FNV-1a streams, finished with a splitmix round.
  auto fnv = [&](std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebULL;
    h ^= h >> 31;
    return h;
  };
  Uuid u{fnv(0xcbf29ce484222325ULL), fnv(0x84222325cbf29ce4ULL)};
  if (u.is_nil()) u.lo = 1;
  return u;
}

std::string Uuid::str() const {
  std::array<char, 37> buf{};
  std::snprintf(buf.data(), buf.size(), "%08x-%04x-%04x-%04x-%012llx",
                static_cast<unsigned>(hi >> 32), static_cast<unsigned>((hi >> 16) & 0xffff),
                static_cast<unsigned>(hi & 0xffff), static_cast<unsigned>(lo >> 48),
                static_cast<unsigned long long>(lo & 0xffffffffffffULL));
  return std::string(buf.data(), 36);
}

std::optional<Uuid> Uuid::parse(std::string_view text) {
  if (text.size() != 36) return std::nullopt;
  std::string hex;
  hex.reserve(32);
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (i == 8 || i == 13 || i == 18 || i == 23) {
      if (c != '-') return std::nullopt;
      continue;
    }
    bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    if (!ok) return std::nullopt;
    hex.push_back(c);
  }
  Uuid u;
  std::from_chars(hex.data(), hex.data() + 16, u.hi, 16);
  std::from_chars(hex.data() + 16, hex.data() + 32, u.lo, 16);
  return u;
}

std::string to_string(const DataVersion& v) { return v.data.str() + "@" + std::to_string(v.version); }

// --- enums --------------------------------------------------------------------

std::string_view to_string(AccessMode m) {
  switch (m) {
    case AccessMode::IN: return "IN";
    case AccessMode::OUT: return "OUT";
    case AccessMode::INOUT: return "INOUT";
  }
  return "?";
}

std::string_view to_string(ProcessorKind k) { return k == ProcessorKind::GPU ? "GPU" : "CPU"; }

AccessMode parse_access_mode(std::string_view s) {
  if (s == "IN") return AccessMode::IN;
  if (s == "OUT") return AccessMode::OUT;
  if (s == "INOUT") return AccessMode::INOUT;
  throw Error(Errc::InvalidArgument, "unknown access mode '" + std::string(s) + "'");
}

ProcessorKind parse_processor_kind(std::string_view s) {
  if (s == "CPU" || s == "cpu") return ProcessorKind::CPU;
  if (s == "GPU" || s == "gpu") return ProcessorKind::GPU;
  throw Error(Errc::InvalidArgument, "unknown processor kind '" + std::string(s) + "'");
}

std::string_view kind_name(const TaskKind& k) {
  static constexpr std::string_view names[] = {"BUILTIN", "SHELL", "SERVICE", "GANG"};
  return names[k.index()];
}

const std::string& kind_target(const TaskKind& k) {
  return std::visit(
      [](const auto& v) -> const std::string& {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ShellKind>) return v.command;
        else if constexpr (std::is_same_v<T, ServiceKind>) return v.url;
        else return v.function;
      },
      k);
}

void validate(const TaskSpec& spec) {
  const auto& c = spec.constraints;
  if (c.cores < 1) throw Error(Errc::InvalidArgument, "constraints.cores must be >= 1");
  if (c.memory_mb < 0) throw Error(Errc::InvalidArgument, "constraints.memory_mb must be >= 0");
  if (c.nodes < 1) throw Error(Errc::InvalidArgument, "constraints.nodes must be >= 1");
  if (c.nodes > 1 && !std::holds_alternative<GangKind>(spec.kind))
    throw Error(Errc::InvalidArgument, "nodes > 1 is only permitted for GANG tasks");
  std::set<DataId> seen;
  for (const auto& p : spec.params) {
    if (!seen.insert(p.data).second)
      throw Error(Errc::InvalidArgument, "data " + p.data.str() + " appears twice in params");
  }
}

std::int64_t literal_int(const TaskSpec& spec, std::size_t index, std::int64_t fallback) {
  if (index >= spec.literals.size()) return fallback;
  const auto& lit = spec.literals[index];
  if (auto* i = std::get_if<std::int64_t>(&lit)) return *i;
  if (auto* d = std::get_if<double>(&lit)) return static_cast<std::int64_t>(*d);
  const auto& s = std::get<std::string>(lit);
  std::int64_t v = fallback;
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

// --- lifecycle ------------------------------------------------------------------

std::string_view to_string(TaskState s) {
  switch (s) {
    case TaskState::REGISTERED: return "REGISTERED";
    case TaskState::READY: return "READY";
    case TaskState::SCHEDULED: return "SCHEDULED";
    case TaskState::RUNNING: return "RUNNING";
    case TaskState::COMPLETED: return "COMPLETED";
    case TaskState::FAILED: return "FAILED";
    case TaskState::RESUBMITTED: return "RESUBMITTED";
    case TaskState::CANCELLED: return "CANCELLED";
  }
  return "?";
}

std::string_view to_string(LifecycleEvent e) {
  switch (e) {
    case LifecycleEvent::DepsSatisfied: return "deps-satisfied";
    case LifecycleEvent::Scheduled: return "scheduled";
    case LifecycleEvent::Started: return "started";
    case LifecycleEvent::Succeeded: return "executor-success";
    case LifecycleEvent::Failed: return "executor-failure";
    case LifecycleEvent::Resubmitted: return "resubmitted";
    case LifecycleEvent::Requeued: return "requeued";
    case LifecycleEvent::Cancelled: return "cancelled";
  }
  return "?";
}

TaskState parse_task_state(std::string_view s) {
  for (auto st : kAllTaskStates)
    if (to_string(st) == s) return st;
  throw Error(Errc::InvalidArgument, "unknown task state '" + std::string(s) + "'");
}

bool is_terminal(TaskState s) {
  return s == TaskState::COMPLETED || s == TaskState::FAILED || s == TaskState::CANCELLED;
}

TaskState transition(TaskState state, LifecycleEvent event) {
  using S = TaskState;
  using E = LifecycleEvent;
  if (event == E::Cancelled && !is_terminal(state)) return S::CANCELLED;
  switch (state) {
    case S::REGISTERED:
      if (event == E::DepsSatisfied) return S::READY;
      break;
    case S::READY:
      if (event == E::Scheduled) return S::SCHEDULED;
      break;
    case S::SCHEDULED:
      if (event == E::Started) return S::RUNNING;
      // dispatch failure before the worker accepted the request
      if (event == E::Failed) return S::FAILED;
      break;
    case S::RUNNING:
      if (event == E::Succeeded) return S::COMPLETED;
      if (event == E::Failed) return S::FAILED;
      break;
    case S::FAILED:
      if (event == E::Resubmitted) return S::RESUBMITTED;
      break;
    case S::RESUBMITTED:
      if (event == E::Requeued) return S::READY;
      break;
    case S::COMPLETED:
    case S::CANCELLED:
      break;
  }
  throw Error(Errc::IllegalTransition,
              std::string(to_string(state)) + " has no '" + std::string(to_string(event)) + "' event");
}

// --- resources -------------------------------------------------------------------

bool ResourcePool::reserve(int cores, std::int64_t memory_mb) noexcept {
  if (cores < 0 || memory_mb < 0 || !fits(cores, memory_mb)) return false;
  reserved_cores += cores;
  reserved_memory_mb += memory_mb;
  return true;
}

void ResourcePool::release(int cores, std::int64_t memory_mb) noexcept {
  reserved_cores = std::max(0, reserved_cores - cores);
  reserved_memory_mb = std::max<std::int64_t>(0, reserved_memory_mb - memory_mb);
}

Endpoint Endpoint::parse(std::string_view text) {
  if (text.starts_with("http://")) text.remove_prefix(7);
  while (!text.empty() && text.back() == '/') text.remove_suffix(1);
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    throw Error(Errc::InvalidArgument, "endpoint must be host:port, got '" + std::string(text) + "'");
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  auto port = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), ep.port);
  if (ec != std::errc{} || ptr != port.data() + port.size() || ep.port <= 0 || ep.port > 65535)
    throw Error(Errc::InvalidArgument, "bad port in endpoint '" + std::string(text) + "'");
  return ep;
}

}  // namespace peerflow
