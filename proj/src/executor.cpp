#include "peerflow/executor.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace peerflow {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error(Errc::ExecutorError, msg); }

double as_number(const Value& v) {
  if (auto i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (auto f = std::get_if<double>(&v)) return *f;
  fail("expected a number");
}

bool is_float(const Value& v) { return std::holds_alternative<double>(v); }

std::vector<Bytes> repeat(const Bytes& b, std::size_t n) { return std::vector<Bytes>(n, b); }

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::int64_t lit_int(const std::vector<Scalar>& lits, std::size_t i, std::int64_t fallback) {
  if (i >= lits.size()) return fallback;
  if (auto v = std::get_if<std::int64_t>(&lits[i])) return *v;
  if (auto d = std::get_if<double>(&lits[i])) return static_cast<std::int64_t>(*d);
  fail("literal " + std::to_string(i) + " must be numeric");
}

std::string scalar_text(const Scalar& s) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::string>) return v;
        else {
          std::ostringstream os;
          os << v;
          return os.str();
        }
      },
      s);
}

// matrices travel as lists: rows, cols, then row-major values
struct Matrix {
  std::int64_t rows = 0, cols = 0;
  std::vector<double> v;
  bool integral = true;
};

Matrix to_matrix(const Bytes& b) {
  auto l = decode_list(b);
  if (l.size() < 2) fail("matrix needs rows and cols");
  Matrix m;
  m.rows = std::get<std::int64_t>(l[0]);
  m.cols = std::get<std::int64_t>(l[1]);
  if (m.rows < 0 || m.cols < 0 || static_cast<std::size_t>(m.rows * m.cols) != l.size() - 2)
    fail("matrix shape does not match its values");
  for (std::size_t i = 2; i < l.size(); ++i) {
    if (std::holds_alternative<double>(l[i])) m.integral = false;
    m.v.push_back(as_number(std::visit([](const auto& x) { return Value{x}; }, l[i])));
  }
  return m;
}

Bytes from_matrix(const Matrix& m) {
  List l{m.rows, m.cols};
  for (double x : m.v) {
    if (m.integral) l.push_back(static_cast<std::int64_t>(x));
    else l.push_back(x);
  }
  return encode(Value{l});
}

std::map<std::string, std::int64_t> counts_of(const Bytes& b) {
  std::map<std::string, std::int64_t> out;
  auto l = decode_list(b);
  if (l.size() % 2) fail("word counts must come in pairs");
  for (std::size_t i = 0; i < l.size(); i += 2) out[std::get<std::string>(l[i])] += std::get<std::int64_t>(l[i + 1]);
  return out;
}

Bytes encode_counts(const std::map<std::string, std::int64_t>& counts) {
  List l;
  for (const auto& [w, c] : counts) {
    l.push_back(w);
    l.push_back(c);
  }
  return encode(Value{l});
}

void maybe_sleep(const std::vector<Scalar>& lits, std::size_t index) {
  auto ms = lit_int(lits, index, 0);
  if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

}  // namespace

std::vector<Bytes> mix_outputs(const std::vector<Bytes>& inputs, const std::vector<Scalar>& literals, std::size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  auto feed = [&](std::uint8_t c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  auto feed_u64 = [&](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) feed(static_cast<std::uint8_t>(x >> (8 * i)));
  };
  for (char c : std::string("mix")) feed(static_cast<std::uint8_t>(c));
  for (const auto& in : inputs) {
    feed_u64(in.size());
    for (auto c : in) feed(c);
  }
  for (const auto& l : literals)
    for (char c : scalar_text(l)) feed(static_cast<std::uint8_t>(c));
  std::vector<Bytes> out;
  for (std::size_t k = 0; k < n; ++k) {
    auto saved = h;
    feed_u64(k);
    out.push_back(encode_int(static_cast<std::int64_t>(h)));
    h = saved;
  }
  return out;
}

ExecutorRegistry ExecutorRegistry::with_builtins() {
  ExecutorRegistry r;
  r.add("noop", [](auto&, auto&, std::size_t n, auto&) { return repeat(encode_int(0), n); });

  r.add("fail", [](auto&, const std::vector<Scalar>& lits, std::size_t, auto&) -> std::vector<Bytes> {
    fail(lits.empty() ? "task requested failure" : scalar_text(lits[0]));
  });

  r.add("const", [](auto&, const std::vector<Scalar>& lits, std::size_t n, auto&) {
    if (lits.empty()) return repeat(encode_int(0), n);
    return repeat(std::visit([](const auto& v) { return encode(Value{v}); }, lits[0]), n);
  });

  // sum of numeric inputs and numeric literals; stays integral unless a float is involved
  r.add("add", [](const std::vector<Bytes>& in, const std::vector<Scalar>& lits, std::size_t n, auto&) {
    std::int64_t isum = 0;
    double fsum = 0;
    bool floating = false;
    auto take = [&](const Value& v) {
      if (is_float(v)) floating = true;
      else isum += std::get<std::int64_t>(v);
      fsum += as_number(v);
    };
    for (const auto& b : in) take(decode(b));
    for (const auto& l : lits)
      if (!std::holds_alternative<std::string>(l)) take(std::visit([](auto x) { return Value{x}; }, l));
    return repeat(floating ? encode_float(fsum) : encode_int(isum), n);
  });

  // x + 1; literal 0 (optional) delays the task by that many milliseconds
  r.add("inc", [](const std::vector<Bytes>& in, const std::vector<Scalar>& lits, std::size_t n, auto&) {
    if (in.empty()) fail("inc needs one input");
    maybe_sleep(lits, 0);
    auto v = decode(in[0]);
    return repeat(is_float(v) ? encode_float(std::get<double>(v) + 1) : encode_int(std::get<std::int64_t>(v) + 1), n);
  });

  r.add("mix", [](const std::vector<Bytes>& in, const std::vector<Scalar>& lits, std::size_t n, auto&) {
    return mix_outputs(in, lits, n);
  });

  r.add("matmul", [](const std::vector<Bytes>& in, auto&, std::size_t n, auto&) {
    if (in.size() != 2) fail("matmul needs two inputs");
    auto a = to_matrix(in[0]), b = to_matrix(in[1]);
    if (a.cols != b.rows) fail("matmul shape mismatch");
    Matrix c{a.rows, b.cols, std::vector<double>(a.rows * b.cols, 0.0), a.integral && b.integral};
    for (std::int64_t i = 0; i < a.rows; ++i)
      for (std::int64_t k = 0; k < a.cols; ++k)
        for (std::int64_t j = 0; j < b.cols; ++j) c.v[i * c.cols + j] += a.v[i * a.cols + k] * b.v[k * b.cols + j];
    return repeat(from_matrix(c), n);
  });

  r.add("sleep_ms", [](auto&, const std::vector<Scalar>& lits, std::size_t n, auto&) {
    maybe_sleep(lits, 0);
    return repeat(encode_int(lit_int(lits, 0, 0)), n);
  });

  // literals: samples, seed -> number of points inside the unit quarter circle
  r.add("montecarlo_pi", [](auto&, const std::vector<Scalar>& lits, std::size_t n, auto&) {
    auto samples = lit_int(lits, 0, 1000);
    std::uint64_t state = static_cast<std::uint64_t>(lit_int(lits, 1, 0));
    std::int64_t hits = 0;
    for (std::int64_t i = 0; i < samples; ++i) {
      double x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
      double y = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
      if (x * x + y * y <= 1.0) ++hits;
    }
    return repeat(encode_int(hits), n);
  });

  r.add("sum", [](const std::vector<Bytes>& in, auto&, std::size_t n, auto&) {
    std::int64_t s = 0;
    for (const auto& b : in) {
      auto v = decode(b);
      if (auto l = std::get_if<List>(&v)) {
        for (const auto& x : *l)
          if (auto i = std::get_if<std::int64_t>(&x)) s += *i;
      } else if (auto i = std::get_if<std::int64_t>(&v)) {
        s += *i;
      }
    }
    return repeat(encode_int(s), n);
  });

  r.add("wordcount_map", [](const std::vector<Bytes>& in, auto&, std::size_t n, auto&) {
    std::map<std::string, std::int64_t> counts;
    for (const auto& b : in) {
      auto v = decode(b);
      std::string text = std::holds_alternative<std::string>(v) ? std::get<std::string>(v) : render(v);
      std::string word;
      for (char c : text + " ") {
        if (std::isalnum(static_cast<unsigned char>(c))) {
          word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!word.empty()) {
          ++counts[word];
          word.clear();
        }
      }
    }
    return repeat(encode_counts(counts), n);
  });

  r.add("wordcount_reduce", [](const std::vector<Bytes>& in, auto&, std::size_t n, auto&) {
    std::map<std::string, std::int64_t> total;
    for (const auto& b : in)
      for (const auto& [w, c] : counts_of(b)) total[w] += c;
    return repeat(encode_counts(total), n);
  });

  // one rank per reserved agent; rank 0 produces the outputs
  r.add("gang_stub", [](const std::vector<Bytes>&, const std::vector<Scalar>& lits, std::size_t n,
                        const ExecContext& ctx) {
    maybe_sleep(lits, 0);
    if (ctx.gang_rank != 0) return std::vector<Bytes>{};
    return repeat(encode_int(ctx.gang_size), n);
  });
  return r;
}

void ExecutorRegistry::add(std::string name, BuiltinFn fn) { fns_[std::move(name)] = std::move(fn); }

std::vector<std::string> ExecutorRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : fns_) out.push_back(n);
  return out;
}

std::vector<Bytes> ExecutorRegistry::run(const TaskSpec& spec, const std::vector<Bytes>& inputs, std::size_t outputs,
                                         const ExecContext& ctx) const {
  std::vector<Bytes> out;
  try {
    if (auto sh = std::get_if<ShellKind>(&spec.kind)) {
      out = run_shell(sh->command, inputs, spec.literals, outputs, ctx);
    } else if (auto svc = std::get_if<ServiceKind>(&spec.kind)) {
      out = run_service(svc->url, svc->method, inputs, outputs);
    } else {
      const auto& name = kind_target(spec.kind);
      auto it = fns_.find(name);
      if (it == fns_.end()) fail("no function '" + name + "' in the executor registry");
      out = it->second(inputs, spec.literals, outputs, ctx);
      if (std::holds_alternative<GangKind>(spec.kind) && ctx.gang_rank != 0) return {};
    }
  } catch (const Error& e) {
    if (e.code() == Errc::ExecutorError) throw;
    fail(e.what());
  } catch (const std::exception& e) {
    fail(e.what());
  }
  if (out.size() != outputs)
    fail("function produced " + std::to_string(out.size()) + " outputs, expected " + std::to_string(outputs));
  return out;
}

std::vector<Bytes> run_shell(const std::string& command, const std::vector<Bytes>& inputs,
                             const std::vector<Scalar>& literals, std::size_t outputs, const ExecContext& ctx) {
  namespace fs = std::filesystem;
  static std::atomic<std::uint64_t> counter{0};
  auto base = ctx.scratch.empty() ? fs::temp_directory_path() : ctx.scratch;
  auto dir = base / ("peerflow-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{dir};

  std::string cmd = command;
  auto substitute = [&](const std::string& key, const std::string& value) {
    for (auto pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size()))
      cmd.replace(pos, key.size(), value);
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto p = dir / ("in" + std::to_string(i));
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(inputs[i].data()),
                                             static_cast<std::streamsize>(inputs[i].size()));
    substitute("{in" + std::to_string(i) + "}", p.string());
  }
  for (std::size_t i = 0; i < outputs; ++i)
    substitute("{out" + std::to_string(i) + "}", (dir / ("out" + std::to_string(i))).string());
  for (std::size_t i = 0; i < literals.size(); ++i) substitute("{lit" + std::to_string(i) + "}", scalar_text(literals[i]));

  auto full = "cd '" + dir.string() + "' && " + cmd;
  int status = std::system(full.c_str());
  if (status == -1) fail("could not start /bin/sh");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    fail("shell command exited with status " + std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));

  std::vector<Bytes> out;
  for (std::size_t i = 0; i < outputs; ++i) {
    std::ifstream f(dir / ("out" + std::to_string(i)), std::ios::binary);
    if (!f) fail("shell command did not write {out" + std::to_string(i) + "}");
    out.emplace_back(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  return out;
}

std::vector<Bytes> run_service(const std::string& url, const std::string& method, const std::vector<Bytes>& inputs,
                               std::size_t outputs) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail("service url must start with http://");
  auto rest = url.substr(scheme_end + 3);
  auto slash = rest.find('/');
  auto hostport = rest.substr(0, slash);
  auto path = slash == std::string::npos ? std::string("/") : rest.substr(slash);
  httplib::Client cli(url.substr(0, scheme_end + 3) + hostport);
  cli.set_connection_timeout(std::chrono::seconds(2));
  cli.set_read_timeout(std::chrono::seconds(30));
  std::string body = inputs.empty() ? std::string{} : std::string(inputs[0].begin(), inputs[0].end());
  httplib::Result res{nullptr, httplib::Error::Unknown};
  if (method == "GET") res = cli.Get(path);
  else if (method == "PUT") res = cli.Put(path, body, "application/octet-stream");
  else if (method == "DELETE") res = cli.Delete(path);
  else res = cli.Post(path, body, "application/octet-stream");
  if (!res) fail("service " + url + " unreachable: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) fail("service " + url + " returned " + std::to_string(res->status));
  Bytes b(res->body.begin(), res->body.end());
  return repeat(b, outputs);
}

}  // namespace peerflow
