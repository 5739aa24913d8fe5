#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "peerflow/codec.hpp"
#include "peerflow/runtime.hpp"

namespace peerflow {

/// What a main program sees: task registration against its application.
class ProgramContext {
 public:
  ProgramContext(Runtime& rt, ApplicationId app, std::vector<Scalar> literals, json hints,
                 const std::atomic<bool>* cancelled = nullptr)
      : rt_(rt), app_(app), literals_(std::move(literals)), hints_(std::move(hints)), cancelled_(cancelled) {}

  ApplicationId app() const { return app_; }
  const std::vector<Scalar>& literals() const { return literals_; }
  const json& hints() const { return hints_; }
  std::int64_t int_arg(std::size_t i, std::int64_t fallback) const;
  std::string string_arg(std::size_t i, const std::string& fallback) const;

  /// Creates a datum with an explicit put. `home` names an agent.
  DataId put(const Value& v, const std::optional<std::string>& home = std::nullopt);
  DataId put_bytes(Bytes b, const std::optional<std::string>& home = std::nullopt);
  TaskId call(const std::string& fn, std::vector<Param> params, std::vector<Scalar> literals = {},
              ResourceConstraints c = {});
  TaskId submit(TaskSpec spec);

  DataVersion latest(DataId d) const;
  ApplicationSummary wait_all();
  Value value_of(DataId d);

  void set_result(std::string r) { result_ = std::move(r); }
  const std::string& result() const { return result_; }

 private:
  Runtime& rt_;
  ApplicationId app_;
  std::vector<Scalar> literals_;
  json hints_;
  const std::atomic<bool>* cancelled_;
  std::string result_;
};

using Program = std::function<void(ProgramContext&)>;

class ProgramRegistry {
 public:
  /// chain N, diamond, wordcount FILE, montecarlo-pi SAMPLES TASKS, gangdemo NODES,
  /// plus the synthetic workloads pipeline N, scatter N, sleep N MS, synthetic N.
  static ProgramRegistry with_demos();

  void add(std::string name, Program p) { programs_[std::move(name)] = std::move(p); }
  bool contains(const std::string& name) const { return programs_.contains(name); }
  const Program& get(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Program> programs_;
};

}  // namespace peerflow
