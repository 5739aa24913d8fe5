#include "peerflow/trace.hpp"

#include <chrono>
#include <iomanip>
#include <istream>
#include <limits>
#include <sstream>

namespace peerflow {

std::int64_t now_us() {
  using namespace std::chrono;
  return duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
}

TraceSink::TraceSink(const std::string& path) {
  if (!path.empty()) {
    file_.open(path, std::ios::out | std::ios::trunc);
    if (!file_) throw Error(Errc::InvalidConfig, "cannot open trace file " + path);
  }
}

void TraceSink::emit(json record) {
  if (!record.contains("ts_us")) record["ts_us"] = now_us();
  std::lock_guard lock(mu_);
  if (file_.is_open()) {
    file_ << record.dump() << '\n';
    file_.flush();
  }
  records_.push_back(std::move(record));
}

std::vector<json> TraceSink::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t TraceSink::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

void TraceSink::clear() {
  std::lock_guard lock(mu_);
  records_.clear();
}

std::vector<json> parse_trace(std::istream& in) {
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::MalformedTrace, "line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string() || !j.contains("ts_us"))
      throw Error(Errc::MalformedTrace, "line " + std::to_string(lineno) + ": record needs 'type' and 'ts_us'");
    out.push_back(std::move(j));
  }
  return out;
}

TraceStats trace_stats(const std::vector<json>& records) {
  TraceStats s;
  std::int64_t first_ready = std::numeric_limits<std::int64_t>::max();
  std::int64_t last_terminal = std::numeric_limits<std::int64_t>::min();
  try {
    for (const auto& r : records) {
      const auto type = r.at("type").get<std::string>();
      const auto ts = r.at("ts_us").get<std::int64_t>();
      if (type == "ready") {
        first_ready = std::min(first_ready, ts);
      } else if (type == "assign") {
        ++s.assignments;
        const auto& names = r.contains("agent_names") ? r["agent_names"] : r.at("agents");
        for (const auto& n : names) ++s.tasks_per_agent[n.get<std::string>()];
        auto in = r.value("input_bytes", std::uint64_t{0});
        auto local = r.value("local_bytes", std::uint64_t{0});
        s.input_bytes += in;
        s.local_bytes += local;
        s.transfer_bytes += in - std::min(in, local);
      } else if (type == "defer") {
        ++s.deferrals;
      } else if (type == "complete") {
        auto state = r.at("state").get<std::string>();
        if (state == "COMPLETED") ++s.completed;
        else if (state == "FAILED") ++s.failed;
        else if (state == "CANCELLED") ++s.cancelled;
        last_terminal = std::max(last_terminal, ts);
      } else if (type == "resubmit") {
        ++s.resubmissions;
      } else if (type == "liveness") {
        ++s.liveness_transitions;
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedTrace, e.what());
  }
  if (s.input_bytes > 0) s.locality_hit_rate = static_cast<double>(s.local_bytes) / static_cast<double>(s.input_bytes);
  else if (s.assignments > 0) s.locality_hit_rate = 1.0;
  if (first_ready != std::numeric_limits<std::int64_t>::max() && last_terminal >= first_ready)
    s.makespan_ms = static_cast<double>(last_terminal - first_ready) / 1000.0;
  return s;
}

TraceStats trace_stats(std::istream& in) { return trace_stats(parse_trace(in)); }

void to_json(json& j, const TraceStats& s) {
  j = json{{"tasks_per_agent", s.tasks_per_agent},
           {"input_bytes", s.input_bytes},
           {"local_bytes", s.local_bytes},
           {"transfer_bytes", s.transfer_bytes},
           {"locality_hit_rate", s.locality_hit_rate},
           {"makespan_ms", s.makespan_ms},
           {"assignments", s.assignments},
           {"deferrals", s.deferrals},
           {"completed", s.completed},
           {"failed", s.failed},
           {"cancelled", s.cancelled},
           {"resubmissions", s.resubmissions},
           {"liveness_transitions", s.liveness_transitions}};
}

std::string render_table(const TraceStats& s) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "agent" << "tasks\n";
  for (const auto& [agent, n] : s.tasks_per_agent) os << std::setw(24) << agent << n << '\n';
  os << '\n';
  os << std::setw(24) << "assignments" << s.assignments << '\n';
  os << std::setw(24) << "completed" << s.completed << '\n';
  os << std::setw(24) << "failed" << s.failed << '\n';
  os << std::setw(24) << "cancelled" << s.cancelled << '\n';
  os << std::setw(24) << "resubmissions" << s.resubmissions << '\n';
  os << std::setw(24) << "input bytes" << s.input_bytes << '\n';
  os << std::setw(24) << "transfer bytes" << s.transfer_bytes << '\n';
  os << std::setw(24) << "locality hit-rate" << std::fixed << std::setprecision(3) << s.locality_hit_rate << '\n';
  os << std::setw(24) << "makespan ms" << std::fixed << std::setprecision(1) << s.makespan_ms << '\n';
  return os.str();
}

}  // namespace peerflow
