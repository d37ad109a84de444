#pragma once

#include <stdexcept>
#include <string>

namespace silk {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable, undecodable or malformed input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Binary container errors (checkpoints and descriptor dumps).
enum class FileErrorKind {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kUnknownBackbone,
  kMalformed,
};

class FileError : public Error {
 public:
  FileError(FileErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  FileErrorKind kind() const noexcept { return kind_; }

 private:
  FileErrorKind kind_;
};

// A numerical procedure produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace silk
