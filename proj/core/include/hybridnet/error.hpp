#pragma once

#include <stdexcept>
#include <string>

namespace hybridnet {

// Exit-code family each error maps to at the command-line surface.
enum class ErrorClass { kUsage = 1, kData = 2, kNumeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorClass::kData, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorClass::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorClass::kData, what) {}
};

class LengthError : public Error {
 public:
  explicit LengthError(const std::string& what) : Error(ErrorClass::kData, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorClass::kNumeric, what) {}
};

class DeterminismError : public Error {
 public:
  explicit DeterminismError(const std::string& what) : Error(ErrorClass::kNumeric, what) {}
};

}  // namespace hybridnet
