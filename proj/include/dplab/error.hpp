#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dplab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument is outside its documented domain (q > 1, sigma <= 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes disagree. `where` names the layer or operation.
class ShapeError : public Error {
 public:
  ShapeError(std::string where, std::vector<std::size_t> expected,
             std::vector<std::size_t> actual)
      : Error(format(where, expected, actual)),
        where_(std::move(where)),
        expected_(std::move(expected)),
        actual_(std::move(actual)) {}

  const std::string& where() const noexcept { return where_; }
  const std::vector<std::size_t>& expected() const noexcept { return expected_; }
  const std::vector<std::size_t>& actual() const noexcept { return actual_; }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }

 private:
  static std::string format(const std::string& where,
                            const std::vector<std::size_t>& expected,
                            const std::vector<std::size_t>& actual) {
    return "shape mismatch in " + where + ": expected " + shape_string(expected) +
           ", got " + shape_string(actual);
  }

  std::string where_;
  std::vector<std::size_t> expected_;
  std::vector<std::size_t> actual_;
};

/// A privacy contract was violated (unclipped input, wrong gradient scope).
class PrivacyError : public Error {
 public:
  using Error::Error;
};

/// A numerical computation left the representable range.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration (maps to CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dplab
