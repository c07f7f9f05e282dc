#pragma once

#include <stdexcept>
#include <string>

namespace xlgen {

// Exit codes used by the CLI; library code throws, the CLI maps.
enum class ExitCode : int {
  ok = 0,
  config_error = 2,
  data_error = 3,
  divergence = 4,
  contamination = 5,
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : DataError {
  explicit ParseError(const std::string& msg) : DataError(msg) {}
};

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContaminationError : std::runtime_error {
  explicit ContaminationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace xlgen
