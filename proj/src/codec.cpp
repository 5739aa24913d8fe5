#include "peerflow/codec.hpp"

#include <bit>
#include <cstring>
#include <sstream>

namespace peerflow {
namespace {

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_scalar(Bytes& out, const Scalar& s) {
  if (auto* i = std::get_if<std::int64_t>(&s)) {
    out.push_back('i');
    put_u64(out, static_cast<std::uint64_t>(*i));
  } else if (auto* d = std::get_if<double>(&s)) {
    out.push_back('f');
    put_u64(out, std::bit_cast<std::uint64_t>(*d));
  } else {
    const auto& str = std::get<std::string>(s);
    out.push_back('b');
    put_u64(out, str.size());
    out.insert(out.end(), str.begin(), str.end());
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  std::uint8_t tag() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::uint64_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Scalar scalar(std::uint8_t t) {
    switch (t) {
      case 'i': return static_cast<std::int64_t>(u64());
      case 'f': return std::bit_cast<double>(u64());
      case 'b': return str(u64());
      default: throw Error(Errc::InvalidArgument, "bad value tag " + std::to_string(t));
    }
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(Errc::InvalidArgument, "truncated encoded value");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Bytes encode(const Value& v) {
  Bytes out;
  if (auto* list = std::get_if<List>(&v)) {
    out.push_back('l');
    put_u64(out, list->size());
    for (const auto& s : *list) put_scalar(out, s);
    return out;
  }
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (!std::is_same_v<T, List>) put_scalar(out, Scalar{x});
      },
      v);
  return out;
}

Value decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto t = r.tag();
  Value v;
  if (t == 'l') {
    auto n = r.u64();
    List list;
    list.reserve(std::min<std::uint64_t>(n, 1 << 20));
    for (std::uint64_t i = 0; i < n; ++i) list.push_back(r.scalar(r.tag()));
    v = std::move(list);
  } else {
    std::visit([&](auto&& s) { v = std::move(s); }, r.scalar(t));
  }
  if (!r.done()) throw Error(Errc::InvalidArgument, "trailing bytes after encoded value");
  return v;
}

std::int64_t decode_int(std::span<const std::uint8_t> bytes) {
  auto v = decode(bytes);
  if (auto* i = std::get_if<std::int64_t>(&v)) return *i;
  throw Error(Errc::InvalidArgument, "expected an encoded int64");
}

double decode_float(std::span<const std::uint8_t> bytes) {
  auto v = decode(bytes);
  if (auto* d = std::get_if<double>(&v)) return *d;
  if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw Error(Errc::InvalidArgument, "expected an encoded float64");
}

std::string decode_bytes(std::span<const std::uint8_t> bytes) {
  auto v = decode(bytes);
  if (auto* s = std::get_if<std::string>(&v)) return std::move(*s);
  throw Error(Errc::InvalidArgument, "expected an encoded byte string");
}

List decode_list(std::span<const std::uint8_t> bytes) {
  auto v = decode(bytes);
  if (auto* l = std::get_if<List>(&v)) return std::move(*l);
  throw Error(Errc::InvalidArgument, "expected an encoded list");
}

std::string render(const Value& v) {
  std::ostringstream os;
  auto scalar = [&](const Scalar& s) {
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, std::string>) os << '"' << x << '"';
          else os << x;
        },
        s);
  };
  if (auto* l = std::get_if<List>(&v)) {
    os << '[';
    for (std::size_t i = 0; i < l->size(); ++i) {
      if (i) os << ", ";
      scalar((*l)[i]);
    }
    os << ']';
  } else {
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (!std::is_same_v<T, List>) scalar(Scalar{x});
        },
        v);
  }
  return os.str();
}

}  // namespace peerflow
