#pragma once

#include <stdexcept>
#include <string>

namespace kgcbm {

// Shape or dimension disagreement between operands, schemes, or files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation produced NaN/Inf, or a gradient was non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an API precondition (index out of range, double backward, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed input file.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kgcbm
