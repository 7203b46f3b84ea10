#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cirf {

/// Base of every error raised by the library. `kind()` is a stable short name
/// that the CLI prints and tests match against.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CIRF_DEFINE_ERROR(Name)                                             \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(#Name, what) {}         \
  };

CIRF_DEFINE_ERROR(EmptyGraph)
CIRF_DEFINE_ERROR(EmptyField)
CIRF_DEFINE_ERROR(CacheMiss)
CIRF_DEFINE_ERROR(TimeoutError)
CIRF_DEFINE_ERROR(ProviderError)
CIRF_DEFINE_ERROR(DimensionMismatch)
CIRF_DEFINE_ERROR(PreconditionError)
CIRF_DEFINE_ERROR(ZeroVector)
CIRF_DEFINE_ERROR(EmptyCorpus)
CIRF_DEFINE_ERROR(InvalidK)
CIRF_DEFINE_ERROR(SingleCluster)
CIRF_DEFINE_ERROR(UnassignedPredicate)
CIRF_DEFINE_ERROR(InvalidFilterCount)
CIRF_DEFINE_ERROR(IoError)
CIRF_DEFINE_ERROR(IndexOutOfRange)
CIRF_DEFINE_ERROR(ShapeMismatch)
CIRF_DEFINE_ERROR(InvalidG)
CIRF_DEFINE_ERROR(StaleCache)
CIRF_DEFINE_ERROR(BadHeader)
CIRF_DEFINE_ERROR(LengthMismatch)
CIRF_DEFINE_ERROR(FingerprintMismatch)
CIRF_DEFINE_ERROR(EmptySet)
CIRF_DEFINE_ERROR(ConfigError)

#undef CIRF_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(std::size_t offset, std::vector<std::string> expected,
             const std::string& detail)
      : Error("ParseError", "at byte " + std::to_string(offset) + ": " + detail +
                                expected_suffix(expected)),
        offset_(offset),
        expected_(std::move(expected)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::vector<std::string>& expected() const noexcept { return expected_; }

 private:
  static std::string expected_suffix(const std::vector<std::string>& expected) {
    if (expected.empty()) return {};
    std::string out = " (expected one of:";
    for (const auto& e : expected) out += " " + e;
    return out + ")";
  }

  std::size_t offset_;
  std::vector<std::string> expected_;
};

class HttpError : public Error {
 public:
  HttpError(int status, int attempts, const std::string& detail)
      : Error("HttpError", "status " + std::to_string(status) + " after " +
                               std::to_string(attempts) + " attempt(s): " + detail),
        status_(status),
        attempts_(attempts) {}
  int status() const noexcept { return status_; }
  int attempts() const noexcept { return attempts_; }

 private:
  int status_;
  int attempts_;
};

class SchemaFormatError : public Error {
 public:
  SchemaFormatError(std::string field_path, const std::string& detail)
      : Error("SchemaFormatError", field_path + ": " + detail),
        field_path_(std::move(field_path)) {}
  const std::string& field_path() const noexcept { return field_path_; }

 private:
  std::string field_path_;
};

class BadLabel : public Error {
 public:
  BadLabel(std::size_t row, const std::string& value)
      : Error("BadLabel", "row " + std::to_string(row) + ": '" + value + "'"),
        row_(row),
        value_(value) {}
  std::size_t row() const noexcept { return row_; }
  const std::string& value() const noexcept { return value_; }

 private:
  std::size_t row_;
  std::string value_;
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(std::size_t batch)
      : Error("NonFiniteLoss", "non-finite loss in batch " + std::to_string(batch)),
        batch_(batch) {}
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t batch_;
};

}  // namespace cirf
