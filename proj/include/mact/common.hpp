#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace mact {

// Exception taxonomy. The CLI maps these onto its stable exit codes
// (config -> 2, numerical -> 3, io -> 4).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Precondition violation on a numeric domain (e.g. group size < 2).
struct DomainError : ConfigError {
  using ConfigError::ConfigError;
};

struct NumericalError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct OracleError : Error {
  using Error::Error;
};

// Minimal expected<T, E> (gcc 11 has no std::expected). Holds either a
// value or an error, never both.
template <typename T, typename E>
class Expected {
 public:
  Expected(T value) : data_(std::in_place_index<0>, std::move(value)) {}
  Expected(E error) : data_(std::in_place_index<1>, std::move(error)) {}

  bool ok() const { return data_.index() == 0; }
  explicit operator bool() const { return ok(); }

  const T& value() const& { return std::get<0>(data_); }
  T& value() & { return std::get<0>(data_); }
  T&& value() && { return std::get<0>(std::move(data_)); }

  const E& error() const { return std::get<1>(data_); }

 private:
  std::variant<T, E> data_;
};

}  // namespace mact
