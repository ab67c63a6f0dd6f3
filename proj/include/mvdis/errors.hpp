#pragma once

#include <stdexcept>
#include <string>

namespace mvdis {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor-level failures.
class DimensionError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };

// Configuration and data failures.
class ConfigError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class TruncationError : public FormatError { using FormatError::FormatError; };
class IoError : public Error { using Error::Error; };

// Training and orchestration failures.
class NonFiniteLossError : public Error { using Error::Error; };
class ConsistencyError : public Error { using Error::Error; };
class ReportError : public Error { using Error::Error; };

}  // namespace mvdis
