#pragma once

// Line-delimited scheduling trace.
//
// Each line is one JSON object with a "type" and a "ts_us" timestamp
// (microseconds since the Unix epoch). Record types and their fields:
//
//   ready     task_id attempt
//   assign    task_id attempt agents[] agent_names[] input_bytes local_bytes policy
//   defer     task_id attempt reason
//   release   task_id attempt agents[]
//   complete  task_id attempt state agent
//   resubmit  task_id attempt reason
//   liveness  agent agent_name from to
//   resources op agent

#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "peerflow/serialize.hpp"

namespace peerflow {

std::int64_t now_us();

class TraceSink {
 public:
  TraceSink() = default;
  /// Appends records to `path` (truncating it first). An empty path keeps records in memory only.
  explicit TraceSink(const std::string& path);

  void emit(json record);

  std::vector<json> records() const;
  std::size_t size() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::ofstream file_;
  std::vector<json> records_;
};

struct TraceStats {
  std::map<std::string, std::size_t> tasks_per_agent;
  std::uint64_t input_bytes = 0;
  std::uint64_t local_bytes = 0;
  std::uint64_t transfer_bytes = 0;
  double locality_hit_rate = 0.0;  // local_bytes / input_bytes; 1.0 if tasks ran but read no bytes
  double makespan_ms = 0.0;        // first ready -> last terminal
  std::size_t assignments = 0;
  std::size_t deferrals = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  std::size_t cancelled = 0;
  std::size_t resubmissions = 0;
  std::size_t liveness_transitions = 0;
};

TraceStats trace_stats(const std::vector<json>& records);
/// Parses line-delimited records; throws Errc::MalformedTrace with the line number.
std::vector<json> parse_trace(std::istream& in);
TraceStats trace_stats(std::istream& in);

void to_json(json& j, const TraceStats& s);
std::string render_table(const TraceStats& s);

}  // namespace peerflow
