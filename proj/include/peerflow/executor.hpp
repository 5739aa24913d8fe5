#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "peerflow/codec.hpp"
#include "peerflow/core.hpp"

namespace peerflow {

struct ExecContext {
  TaskId task;
  int gang_rank = 0;
  int gang_size = 1;
  std::filesystem::path scratch;  // SHELL working directory; temp dir when empty
};

/// inputs: payloads of the IN/INOUT params in param order. Must return
/// exactly `outputs` payloads (one per OUT/INOUT param).
using BuiltinFn = std::function<std::vector<Bytes>(const std::vector<Bytes>& inputs, const std::vector<Scalar>& literals,
                                                   std::size_t outputs, const ExecContext& ctx)>;

/// Name -> deterministic function. Every failure surfaces as Errc::ExecutorError.
class ExecutorRegistry {
 public:
  /// Registry preloaded with the bundled functions (add, inc, const, mix, matmul,
  /// sleep_ms, montecarlo_pi, sum, wordcount_map, wordcount_reduce, gang_stub, noop, fail).
  static ExecutorRegistry with_builtins();

  void add(std::string name, BuiltinFn fn);
  bool contains(const std::string& name) const { return fns_.contains(name); }
  std::vector<std::string> names() const;

  std::vector<Bytes> run(const TaskSpec& spec, const std::vector<Bytes>& inputs, std::size_t outputs,
                         const ExecContext& ctx) const;

 private:
  std::map<std::string, BuiltinFn> fns_;
};

/// Output k of the `mix` builtin: FNV-1a 64 over "mix", each input as
/// (u64 LE length, bytes), each literal's rendering, then k as u64 LE.
std::vector<Bytes> mix_outputs(const std::vector<Bytes>& inputs, const std::vector<Scalar>& literals, std::size_t n);

/// Substitutes {in0}, {out0}, {lit0}, ... in a SHELL command template,
/// runs it with /bin/sh and reads each output file back. Inputs are written
/// as raw payload bytes.
std::vector<Bytes> run_shell(const std::string& command, const std::vector<Bytes>& inputs,
                             const std::vector<Scalar>& literals, std::size_t outputs, const ExecContext& ctx);

/// Sends the first input (or nothing) to the URL; the response body becomes output 0.
std::vector<Bytes> run_service(const std::string& url, const std::string& method, const std::vector<Bytes>& inputs,
                               std::size_t outputs);

}  // namespace peerflow
