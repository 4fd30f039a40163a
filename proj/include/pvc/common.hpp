#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pvc {

using i64 = std::int64_t;
using u64 = std::uint64_t;
using u32 = std::uint32_t;

// Bad argument from a caller (recoverable, caller contract violation).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unrecoverable condition for the current operation (missing file,
// corrupt artifact, unavailable backend).
class FatalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail_arg(const std::string& msg) { throw ArgumentError(msg); }
[[noreturn]] inline void fail(const std::string& msg) { throw FatalError(msg); }

inline void require_arg(bool cond, const std::string& msg) {
  if (!cond) fail_arg(msg);
}
inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace pvc
