#pragma once

#include <stdexcept>
#include <string>

namespace bskim {

// Every failure the library reports derives from Error. The category string
// is stable and is what the CLI prints in its machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};

struct IndexError : Error {
  explicit IndexError(const std::string& w) : Error("index", w) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};

struct DataError : Error {
  explicit DataError(const std::string& w) : Error("data", w) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error("domain", w) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error("parse", w) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format", w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};

struct DivergenceError : Error {
  DivergenceError(const std::string& w, long step) : Error("divergence", w), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace bskim
