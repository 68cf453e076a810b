#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vknow {

// ---------------------------------------------------------------------------
// Errors. Every failure the library reports derives from vknow::Error so
// callers (CLI, HTTP services) can map them to exit codes / status codes.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A line of a line-delimited file could not be decoded.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& reason)
      : Error("line " + std::to_string(line) + ": " + reason), line_(line), reason_(reason) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

/// A domain value broke one of its invariants.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& item_id, const std::string& invariant)
      : Error("item '" + item_id + "': " + invariant), item_id_(item_id), invariant_(invariant) {}
  const std::string& item_id() const noexcept { return item_id_; }
  const std::string& invariant() const noexcept { return invariant_; }

 private:
  std::string item_id_;
  std::string invariant_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::size_t expected, std::size_t actual)
      : Error("dimension mismatch: expected " + std::to_string(expected) + ", got " +
              std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// ISO-8601 UTC with millisecond precision, e.g. 2025-01-02T03:04:05.678Z.
std::string format_timestamp(Timestamp t);
/// Accepts the format produced by format_timestamp, with or without the
/// fractional part. Throws Error on malformed input.
Timestamp parse_timestamp(std::string_view text);

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() const override;
};

/// Always returns the same instant. Used for replayable runs so that
/// provenance timestamps do not break byte-identical outputs.
class FixedClock final : public Clock {
 public:
  explicit FixedClock(Timestamp t = Timestamp{}) : t_(t) {}
  Timestamp now() const override { return t_; }

 private:
  Timestamp t_;
};

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

/// Trim and collapse internal whitespace runs to a single space.
std::string normalize_whitespace(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);

/// Replace every occurrence of `{key}` in `tmpl`.
std::string substitute(std::string tmpl, std::string_view key, std::string_view value);

// ---------------------------------------------------------------------------
// Hashing and files
// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view data);
std::uint64_t fnv1a64(std::string_view data);
std::string base64_encode(std::string_view data);

/// Write-temp-then-rename so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Concurrency
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace vknow
