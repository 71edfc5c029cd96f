#pragma once

#include <stdexcept>
#include <string>

namespace bbe {

// Error categories. The CLI maps each category onto a process exit code.
enum class ErrorKind {
  Dimension,
  Config,
  State,
  Label,
  Input,
  Format,
  Parse,
  Ingest,
  SplitViolation,
  Split,
  Metric,
  Report,
  Io,
  Invariant,
  Numerical,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace bbe
