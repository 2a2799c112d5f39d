#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace iscl {

// Error taxonomy shared by all modules. The CLI maps categories to exit
// codes; tests match on category rather than message text.
enum class ErrorCategory {
  Io,
  UnsupportedFormat,
  Argument,
  Shape,
  Dataset,
  DegenerateStats,
  Divergence,
  Evaluation,
  Checkpoint,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

  const char* category_name() const {
    switch (category_) {
      case ErrorCategory::Io: return "io";
      case ErrorCategory::UnsupportedFormat: return "unsupported-format";
      case ErrorCategory::Argument: return "argument";
      case ErrorCategory::Shape: return "shape";
      case ErrorCategory::Dataset: return "dataset";
      case ErrorCategory::DegenerateStats: return "degenerate-statistics";
      case ErrorCategory::Divergence: return "divergence";
      case ErrorCategory::Evaluation: return "evaluation";
      case ErrorCategory::Checkpoint: return "checkpoint";
    }
    return "unknown";
  }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory cat, const std::string& msg) {
  throw Error(cat, msg);
}

inline void require(bool cond, ErrorCategory cat, const std::string& msg) {
  if (!cond) fail(cat, msg);
}

// FNV-1a over raw bytes; used for parameter hashing in tests and for
// deriving named substreams from the run seed.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t hash_combine(uint64_t h, uint64_t v) {
  return fnv1a(&v, sizeof(v), h);
}

inline uint64_t hash_str(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace iscl
