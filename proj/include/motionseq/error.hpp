#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace motionseq {

// Bad arguments, shape mismatches, inconsistent configuration. CLI exit 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or missing files, corrupt payloads. CLI exit 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (NaN loss, NaN grads). CLI exit 4.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using WarnHandler = void (*)(const std::string&);

inline WarnHandler& warn_handler() {
  static WarnHandler handler = nullptr;
  return handler;
}

// Non-fatal diagnostics (malformed masks, skipped files, edge-hold extensions).
inline void warn(const std::string& msg) {
  if (warn_handler() != nullptr) {
    warn_handler()(msg);
  } else {
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
  }
}

}  // namespace motionseq
