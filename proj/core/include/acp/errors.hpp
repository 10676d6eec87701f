// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace acp {

/// Process exit codes used by the command line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kConfig = 2,
  kFormat = 3,
  kResource = 4,
};

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const noexcept { return ExitCode::kFailure; }
};

/// Invalid configuration or argument value.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

/// Shapes that do not agree.
class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Batch statistics requested over fewer than two rows.
class DegenerateBatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// API misuse, e.g. running backward twice over the same tape.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const noexcept { return offset_; }
  ExitCode exit_code() const noexcept override { return ExitCode::kFormat; }

 private:
  std::uint64_t offset_;
};

/// I/O failure outside of parsing (missing file, unwritable path).
class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kFormat; }
};

/// Estimated memory exceeds the configured budget.
class ResourceError : public Error {
 public:
  ResourceError(const std::string& what, std::uint64_t required_bytes,
                std::uint64_t budget_bytes);
  std::uint64_t required_bytes() const noexcept { return required_; }
  std::uint64_t budget_bytes() const noexcept { return budget_; }
  ExitCode exit_code() const noexcept override { return ExitCode::kResource; }

 private:
  std::uint64_t required_;
  std::uint64_t budget_;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace acp
