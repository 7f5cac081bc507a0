#pragma once

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a workflow or environment file cannot be parsed. Carries the
/// 1-based position of the offending construct when the parser knows it.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, int line = -1, int column = -1)
      : Error(annotate(msg, line, column)), line_(line), column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  static std::string annotate(const std::string& msg, int line, int column) {
    if (line < 0) return msg;
    return std::to_string(line) + ":" + std::to_string(column) + ": " + msg;
  }
  int line_;
  int column_;
};

/// Scatter-index path, outermost scatter first.
using Tag = std::vector<uint32_t>;

std::string tag_to_string(const Tag& tag);
Tag tag_prefix(const Tag& tag, size_t len);

/// Payload carried by a dataflow token: an inline value, a reference into the
/// data-manager registry, or an index-ordered list of payloads.
struct Payload {
  enum class Kind { value, ref, list };

  Kind kind = Kind::value;
  std::string text;            // value text, or reference id for Kind::ref
  std::vector<Payload> items;  // Kind::list only

  static Payload value(std::string v) {
    Payload p;
    p.kind = Kind::value;
    p.text = std::move(v);
    return p;
  }
  static Payload ref(std::string id) {
    Payload p;
    p.kind = Kind::ref;
    p.text = std::move(id);
    return p;
  }
  static Payload list(std::vector<Payload> items) {
    Payload p;
    p.kind = Kind::list;
    p.items = std::move(items);
    return p;
  }

  bool operator==(const Payload&) const = default;
};

/// 64-bit FNV-1a, used for content digests and stub-task derivations.
inline uint64_t fnv1a64(std::string_view bytes,
                        uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// splitmix64 finalizer. All deterministic stub values derive from this so
/// that any implementation can reproduce them bit-exactly.
inline uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string hex64(uint64_t v);

using WallClock = std::chrono::system_clock;
using WallTime = WallClock::time_point;

/// ISO-8601 UTC with millisecond precision, e.g. 2024-03-01T12:00:00.123Z.
std::string iso8601_utc_ms(WallTime t);

}  // namespace hflow
