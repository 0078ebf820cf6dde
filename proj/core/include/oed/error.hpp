#pragma once

#include <stdexcept>
#include <string>

namespace oed {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input does not satisfy a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File-system or codec failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A serialized document violates its schema. `path()` names the offending field.
class SchemaError : public Error {
 public:
  SchemaError(std::string field_path, const std::string& what)
      : Error(field_path + ": " + what), path_(std::move(field_path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace oed
