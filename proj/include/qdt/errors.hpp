#pragma once

#include <stdexcept>
#include <string>

namespace qdt {

// Base class for all library errors so callers can catch one type.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or mismatched file contents (dataset headers, checkpoints,
// env spec files).
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& msg) : Error(msg) {}
};

// Misuse of an object's contract, e.g. stepping a finished episode.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Training blew up: non-finite loss/gradients or loss above the divergence
// threshold. Carries whatever diagnostics the training loop could gather.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

// Filesystem problems distinct from schema problems.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace qdt
