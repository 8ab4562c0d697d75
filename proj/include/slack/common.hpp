#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace slack {

// Status codes shared by the C API and the CLI exit codes.
enum class ErrorCode : int {
  kOk = 0,
  kInternal = 1,
  kValidation = 2,
  kDependency = 3,
  kDivergence = 4,
  kBudgetParity = 5,
  kIo = 6,
  kFormat = 7,
  kTruncated = 8,
  kShapeMismatch = 9,
  kDegenerate = 10,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

// 64-bit FNV-1a, used to stamp outputs with a config hash.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace slack
