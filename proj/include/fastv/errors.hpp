#pragma once

#include <stdexcept>
#include <string>

namespace fastv {

// Caller broke a documented precondition (shape mismatch, index out of range).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid user-supplied configuration. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. Messages carry a byte offset where one exists.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computed quantity violated an invariant it must hold (e.g. an attention
// row that does not sum to one). Signals a bug upstream.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fastv
