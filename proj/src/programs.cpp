#include "peerflow/programs.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace peerflow {

std::int64_t ProgramContext::int_arg(std::size_t i, std::int64_t fallback) const {
  if (i >= literals_.size()) return fallback;
  if (auto v = std::get_if<std::int64_t>(&literals_[i])) return *v;
  if (auto d = std::get_if<double>(&literals_[i])) return static_cast<std::int64_t>(*d);
  try {
    return std::stoll(std::get<std::string>(literals_[i]));
  } catch (const std::exception&) {
    throw Error(Errc::InvalidArgument, "argument " + std::to_string(i + 1) + " must be an integer");
  }
}

std::string ProgramContext::string_arg(std::size_t i, const std::string& fallback) const {
  if (i >= literals_.size()) return fallback;
  if (auto s = std::get_if<std::string>(&literals_[i])) return *s;
  return std::visit([](const auto& v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }, literals_[i]);
}

DataId ProgramContext::put(const Value& v, const std::optional<std::string>& home) { return put_bytes(encode(v), home); }

DataId ProgramContext::put_bytes(Bytes b, const std::optional<std::string>& home) {
  std::optional<AgentId> where;
  if (home) {
    for (const auto& [id, e] : rt_.scheduler().view().agents)
      if (e.descriptor.name == *home) where = id;
    if (!where) throw Error(Errc::UnknownAgent, "no agent named '" + *home + "'");
  }
  auto id = DataId::random();
  rt_.put(app_, id, std::move(b), where);
  return id;
}

TaskId ProgramContext::call(const std::string& fn, std::vector<Param> params, std::vector<Scalar> literals,
                            ResourceConstraints c) {
  TaskSpec s;
  s.kind = BuiltinKind{fn};
  s.params = std::move(params);
  s.literals = std::move(literals);
  s.constraints = std::move(c);
  return submit(std::move(s));
}

TaskId ProgramContext::submit(TaskSpec spec) { return rt_.register_task(app_, std::move(spec)); }

DataVersion ProgramContext::latest(DataId d) const {
  auto s = rt_.access_processor().summary(app_);
  return s.last_writer.at(d).version;
}

ApplicationSummary ProgramContext::wait_all() {
  for (;;) {
    try {
      return rt_.wait_all(app_, std::chrono::milliseconds(200));
    } catch (const Error& e) {
      if (e.code() != Errc::Timeout) throw;
      if (cancelled_ && *cancelled_) throw Error(Errc::Timeout, "agent stopping");
    }
  }
}

Value ProgramContext::value_of(DataId d) { return decode(rt_.read(latest(d))); }

const Program& ProgramRegistry::get(const std::string& name) const {
  auto it = programs_.find(name);
  if (it == programs_.end()) throw Error(Errc::UnknownProgram, "no demo named '" + name + "'");
  return it->second;
}

std::vector<std::string> ProgramRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : programs_) out.push_back(n);
  return out;
}

namespace {

std::int64_t hint_int(const ProgramContext& ctx, const char* key, std::int64_t fallback) {
  return ctx.hints().is_object() ? ctx.hints().value(key, fallback) : fallback;
}

std::optional<std::string> hint_str(const ProgramContext& ctx, const char* key) {
  if (!ctx.hints().is_object() || !ctx.hints().contains(key)) return std::nullopt;
  return ctx.hints()[key].get<std::string>();
}

bool finished_ok(const ApplicationSummary& s) {
  return s.count(TaskState::FAILED) == 0 && s.count(TaskState::CANCELLED) == 0;
}

void chain(ProgramContext& ctx) {
  auto n = ctx.int_arg(0, 3);
  if (n < 1) throw Error(Errc::InvalidArgument, "chain needs N >= 1");
  auto delay = hint_int(ctx, "delay_ms", 0);
  auto x = DataId::random();
  ctx.call("const", {{x, AccessMode::OUT}}, {std::int64_t{1}});
  auto fail_at = hint_int(ctx, "fail_at", -1);
  for (std::int64_t i = 1; i < n; ++i) ctx.call(i == fail_at ? "fail" : "inc", {{x, AccessMode::INOUT}}, {delay});
  if (finished_ok(ctx.wait_all())) ctx.set_result(render(ctx.value_of(x)));
}

void diamond(ProgramContext& ctx) {
  auto delay = hint_int(ctx, "delay_ms", 0);
  auto x = DataId::random(), a = DataId::random(), b = DataId::random(), w = DataId::random();
  ctx.call("const", {{x, AccessMode::OUT}}, {std::int64_t{1}});
  ctx.call("inc", {{x, AccessMode::IN}, {a, AccessMode::OUT}}, {delay});
  ctx.call("inc", {{x, AccessMode::IN}, {b, AccessMode::OUT}}, {delay});
  ctx.call("add", {{a, AccessMode::IN}, {b, AccessMode::IN}, {w, AccessMode::OUT}});
  if (finished_ok(ctx.wait_all())) ctx.set_result(render(ctx.value_of(w)));
}

void wordcount(ProgramContext& ctx) {
  auto path = ctx.string_arg(0, "");
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidArgument, "cannot read '" + path + "'");
  auto lines_per_chunk = std::max<std::int64_t>(1, ctx.int_arg(1, 64));
  std::vector<DataId> partials;
  std::string line, chunk;
  std::int64_t count = 0;
  auto flush = [&] {
    if (chunk.empty()) return;
    auto text = ctx.put(Value{chunk});
    auto part = DataId::random();
    ctx.call("wordcount_map", {{text, AccessMode::IN}, {part, AccessMode::OUT}});
    partials.push_back(part);
    chunk.clear();
    count = 0;
  };
  while (std::getline(in, line)) {
    chunk += line + "\n";
    if (++count == lines_per_chunk) flush();
  }
  flush();
  auto total = DataId::random();
  std::vector<Param> params;
  for (auto p : partials) params.push_back({p, AccessMode::IN});
  params.push_back({total, AccessMode::OUT});
  ctx.call("wordcount_reduce", params);
  if (!finished_ok(ctx.wait_all())) return;
  auto counts = std::get<List>(ctx.value_of(total));
  std::vector<std::pair<std::int64_t, std::string>> ranked;
  for (std::size_t i = 0; i + 1 < counts.size(); i += 2)
    ranked.push_back({std::get<std::int64_t>(counts[i + 1]), std::get<std::string>(counts[i])});
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::ostringstream os;
  for (std::size_t i = 0; i < ranked.size() && i < 10; ++i)
    os << (i ? " " : "") << ranked[i].second << ":" << ranked[i].first;
  ctx.set_result(os.str());
}

void montecarlo_pi(ProgramContext& ctx) {
  auto samples = ctx.int_arg(0, 4000000);
  auto tasks = std::max<std::int64_t>(1, ctx.int_arg(1, 32));
  auto seed = ctx.int_arg(2, hint_int(ctx, "seed", 42));
  std::vector<Param> parts;
  for (std::int64_t i = 0; i < tasks; ++i) {
    auto share = samples / tasks + (i < samples % tasks ? 1 : 0);
    auto h = DataId::random();
    // spread the seeds so task streams do not overlap
    ctx.call("montecarlo_pi", {{h, AccessMode::OUT}}, {share, seed * 1000003 + i});
    parts.push_back({h, AccessMode::IN});
  }
  auto total = DataId::random();
  parts.push_back({total, AccessMode::OUT});
  ctx.call("sum", parts);
  if (!finished_ok(ctx.wait_all())) return;
  auto hits = std::get<std::int64_t>(ctx.value_of(total));
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << 4.0 * static_cast<double>(hits) / static_cast<double>(samples);
  ctx.set_result(os.str());
}

void gangdemo(ProgramContext& ctx) {
  auto nodes = std::max<std::int64_t>(1, ctx.int_arg(0, 2));
  auto g = DataId::random();
  TaskSpec s;
  s.kind = GangKind{"gang_stub"};
  s.params = {{g, AccessMode::OUT}};
  s.literals = {hint_int(ctx, "delay_ms", 0)};
  s.constraints.nodes = static_cast<int>(nodes);
  ctx.submit(s);
  ctx.call("inc", {{g, AccessMode::INOUT}});
  if (finished_ok(ctx.wait_all())) ctx.set_result(render(ctx.value_of(g)));
}

// stages read and rewrite one datum that starts on hints.data_home
void pipeline(ProgramContext& ctx) {
  auto n = ctx.int_arg(0, 10);
  auto size = hint_int(ctx, "bytes", 4096);
  auto x = ctx.put(Value{std::string(static_cast<std::size_t>(size), 'p')}, hint_str(ctx, "data_home"));
  for (std::int64_t i = 0; i < n; ++i) ctx.call("mix", {{x, AccessMode::INOUT}});
  if (finished_ok(ctx.wait_all())) ctx.set_result(render(ctx.value_of(x)));
}

// N chunks spread round-robin over hints.data_homes, one reader task per chunk
void scatter(ProgramContext& ctx) {
  auto n = ctx.int_arg(0, 16);
  auto size = hint_int(ctx, "bytes", 65536);
  std::vector<std::string> homes;
  if (ctx.hints().is_object() && ctx.hints().contains("data_homes")) homes = ctx.hints()["data_homes"].get<std::vector<std::string>>();
  std::vector<DataId> outs;
  for (std::int64_t i = 0; i < n; ++i) {
    std::optional<std::string> home;
    if (!homes.empty()) home = homes[static_cast<std::size_t>(i) % homes.size()];
    auto chunk = ctx.put(Value{std::string(static_cast<std::size_t>(size), static_cast<char>('a' + i % 26))}, home);
    auto out = DataId::random();
    ctx.call("mix", {{chunk, AccessMode::IN}, {out, AccessMode::OUT}}, {hint_int(ctx, "delay_ms", 0)});
    outs.push_back(out);
  }
  auto s = ctx.wait_all();
  ctx.set_result(std::to_string(s.count(TaskState::COMPLETED)) + " completed");
}

// N independent tasks sleeping MS each
void sleep_backlog(ProgramContext& ctx) {
  auto n = ctx.int_arg(0, 32);
  auto ms = ctx.int_arg(1, 100);
  for (std::int64_t i = 0; i < n; ++i) ctx.call("sleep_ms", {{DataId::random(), AccessMode::OUT}}, {ms});
  auto s = ctx.wait_all();
  ctx.set_result(std::to_string(s.count(TaskState::COMPLETED)) + " completed");
}

// N "mix" tasks over a random access pattern on up to 50 data items
void synthetic(ProgramContext& ctx) {
  auto n = ctx.int_arg(0, 10000);
  auto items = std::max<std::int64_t>(1, ctx.int_arg(1, 50));
  std::mt19937_64 rng(static_cast<std::uint64_t>(ctx.int_arg(2, hint_int(ctx, "seed", 1))));
  std::vector<DataId> data;
  for (std::int64_t i = 0; i < items; ++i) data.push_back(ctx.put(Value{i}));
  for (std::int64_t t = 0; t < n; ++t) {
    std::vector<Param> params;
    std::set<std::size_t> used;
    auto k = 1 + rng() % 3;
    for (std::size_t j = 0; j < k; ++j) {
      auto d = rng() % data.size();
      if (!used.insert(d).second) continue;
      static constexpr AccessMode modes[] = {AccessMode::IN, AccessMode::OUT, AccessMode::INOUT};
      params.push_back({data[d], modes[rng() % 3]});
    }
    ctx.call("mix", params);
  }
  auto s = ctx.wait_all();
  ctx.set_result(std::to_string(s.count(TaskState::COMPLETED)) + " completed");
}

}  // namespace

ProgramRegistry ProgramRegistry::with_demos() {
  ProgramRegistry r;
  r.add("chain", chain);
  r.add("diamond", diamond);
  r.add("wordcount", wordcount);
  r.add("montecarlo-pi", montecarlo_pi);
  r.add("gangdemo", gangdemo);
  r.add("pipeline", pipeline);
  r.add("scatter", scatter);
  r.add("sleep", sleep_backlog);
  r.add("synthetic", synthetic);
  return r;
}

}  // namespace peerflow
