#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cali {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value; `key_path` names the offending key when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string key_path = {})
      : Error(key_path.empty() ? what : key_path + ": " + what), key_path_(std::move(key_path)) {}
  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

// Malformed or truncated file. `offset` is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }
  // The message without the offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::uint64_t offset_;
};

// A file or directory could not be opened, created or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// A training loss became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cali
