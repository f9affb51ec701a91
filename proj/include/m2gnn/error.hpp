#pragma once

#include <stdexcept>
#include <string>

namespace m2gnn {

// Node/edge types that do not fit the declared schema.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation not allowed in the object's current state (e.g. mutating a frozen graph).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Structurally invalid input (self-loops, out-of-range indices, bad config values).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke a precondition of a numeric routine (shape mismatch, non-scalar loss, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or unreadable files. Message carries file and line when known.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training hit a non-finite loss or gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace m2gnn
