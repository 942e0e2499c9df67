#pragma once

#include <stdexcept>
#include <string>

namespace twogroups {

// Bad arguments, malformed files, violated preconditions. CLI exit code 1.
class invalid_input : public std::invalid_argument {
public:
  explicit invalid_input(const std::string& what) : std::invalid_argument(what) {}
};

// Not enough units for the requested estimate. CLI exit code 1.
class insufficient_data : public invalid_input {
public:
  explicit insufficient_data(const std::string& what) : invalid_input(what) {}
};

// A density or tail mass vanished numerically at the requested point. CLI exit code 2.
class degenerate_point : public std::runtime_error {
public:
  degenerate_point(const std::string& what, double z) : std::runtime_error(what), z_(z) {}
  double z() const noexcept { return z_; }

private:
  double z_;
};

// Central log-density is not concave; the theoretical null should be used instead. CLI exit code 2.
class empirical_null_failure : public std::runtime_error {
public:
  explicit empirical_null_failure(const std::string& what) : std::runtime_error(what) {}
};

// File parse failure with the 1-based line number. CLI exit code 1.
class parse_error : public invalid_input {
public:
  parse_error(const std::string& what, std::size_t line)
      : invalid_input("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

}  // namespace twogroups
