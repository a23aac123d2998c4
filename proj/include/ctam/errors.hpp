#pragma once

#include <stdexcept>
#include <string>

namespace ctam {

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace detail

// Failure categories for persistence and ingestion. Each kind maps to a
// distinct, scriptable failure message in the CLI.
class IoError : public std::runtime_error {
 public:
  enum class Kind {
    open_failed,
    write_failed,
    bad_magic,
    bad_version,
    truncated,
    dim_overflow,
    corrupt,
    bad_header,
    bad_label,
    duplicate_id,
  };

  IoError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline const char* to_string(IoError::Kind kind) {
  switch (kind) {
    case IoError::Kind::open_failed: return "open_failed";
    case IoError::Kind::write_failed: return "write_failed";
    case IoError::Kind::bad_magic: return "bad_magic";
    case IoError::Kind::bad_version: return "bad_version";
    case IoError::Kind::truncated: return "truncated";
    case IoError::Kind::dim_overflow: return "dim_overflow";
    case IoError::Kind::corrupt: return "corrupt";
    case IoError::Kind::bad_header: return "bad_header";
    case IoError::Kind::bad_label: return "bad_label";
    case IoError::Kind::duplicate_id: return "duplicate_id";
  }
  return "unknown";
}

}  // namespace ctam
