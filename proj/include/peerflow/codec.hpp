#pragma once

// Language-neutral value encoding shared by builtins, agents and clients.
//
// Every encoded value starts with a one-byte tag; all integers are little endian.
//
//   'i'  int64            8 bytes two's complement
//   'f'  float64          8 bytes IEEE-754 binary64
//   'b'  byte string      u64 length, then the raw bytes
//   'l'  flat list        u64 count, then `count` tagged scalars ('i', 'f' or 'b')

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "peerflow/core.hpp"

namespace peerflow {

using Bytes = std::vector<std::uint8_t>;

using List = std::vector<Scalar>;
using Value = std::variant<std::int64_t, double, std::string, List>;

Bytes encode(const Value& v);
Value decode(std::span<const std::uint8_t> bytes);

inline Bytes encode_int(std::int64_t v) { return encode(Value{v}); }
inline Bytes encode_float(double v) { return encode(Value{v}); }
inline Bytes encode_bytes(std::string v) { return encode(Value{std::move(v)}); }

std::int64_t decode_int(std::span<const std::uint8_t> bytes);
double decode_float(std::span<const std::uint8_t> bytes);
std::string decode_bytes(std::span<const std::uint8_t> bytes);
List decode_list(std::span<const std::uint8_t> bytes);

/// Human-readable rendering used by the CLI and logs.
std::string render(const Value& v);

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_text(std::span<const std::uint8_t> b) { return std::string(b.begin(), b.end()); }

}  // namespace peerflow
