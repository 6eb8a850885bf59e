#pragma once

#include <stdexcept>
#include <string>

namespace sae {

enum class ErrorKind {
  schema,       // missing or malformed columns / files
  validation,   // a record violates a field invariant
  consistency,  // records disagree with each other
  lookup,       // an identifier or key does not resolve
  domain,       // argument outside the mathematical domain
  misuse,       // precondition of an operation not met by the caller
  numerical,    // non-finite result at a valid input
  io,
};

const char* to_string(ErrorKind kind);

// Every error raised by the toolkit carries the module it came from so the
// command line can report provenance.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& message)
      : std::runtime_error(message), kind_(kind), module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

}  // namespace sae
