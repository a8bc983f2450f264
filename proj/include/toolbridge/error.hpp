#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace toolbridge {

enum class ErrorKind {
  parse,
  duplicate_key,
  empty_corpus,
  unresolved_reference,
  invalid_argument,
  not_found,
  io,
  version_mismatch,
  backend,
  divergence,
  config,
  no_pairs,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::duplicate_key: return "duplicate_key";
    case ErrorKind::empty_corpus: return "empty_corpus";
    case ErrorKind::unresolved_reference: return "unresolved_reference";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::io: return "io";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::backend: return "backend";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::config: return "config";
    case ErrorKind::no_pairs: return "no_pairs";
  }
  return "unknown";
}

/// Every failure raised by the library. `kind()` is stable and machine
/// readable; `what()` carries the human detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Error tied to a line of an input file (1-based).
class LineError : public Error {
 public:
  LineError(ErrorKind kind, std::string path, std::size_t line, const std::string& message)
      : Error(kind, path + ":" + std::to_string(line) + ": " + message),
        path_(std::move(path)),
        line_(line) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string path_;
  std::size_t line_;
};

/// Configuration error pointing at a field path such as `/bm25/k1`.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(ErrorKind::config, field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace toolbridge
