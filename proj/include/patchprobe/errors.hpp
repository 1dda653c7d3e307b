#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace patchprobe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or unwritable file.
class IoError : public Error {
 public:
  using Error::Error;
};

// A record breaks the annotation schema; record_id names the offender.
class SchemaError : public Error {
 public:
  SchemaError(std::string record_kind, std::int64_t record_id, const std::string& what)
      : Error(record_kind + " " + std::to_string(record_id) + ": " + what),
        record_kind_(std::move(record_kind)),
        record_id_(record_id) {}
  explicit SchemaError(const std::string& what) : Error(what) {}

  const std::string& record_kind() const { return record_kind_; }
  std::int64_t record_id() const { return record_id_; }

 private:
  std::string record_kind_;
  std::int64_t record_id_ = -1;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class CorruptArchiveError : public Error {
 public:
  using Error::Error;
};

class BackendUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace patchprobe
