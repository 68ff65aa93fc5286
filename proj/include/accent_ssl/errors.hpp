#pragma once

#include <stdexcept>
#include <string>

namespace accent_ssl {

// Every failure the library reports derives from Error so the CLI can map
// categories onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericDomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class MissingArtifactError : public Error {
 public:
  MissingArtifactError(const std::string& artifact)
      : Error("missing artifact: " + artifact), artifact_(artifact) {}
  const std::string& artifact() const noexcept { return artifact_; }

 private:
  std::string artifact_;
};

class InfeasibleAlignmentError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace accent_ssl
