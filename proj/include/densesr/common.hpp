#pragma once

#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace densesr {

// Invalid shapes, hyperparameters, or malformed inputs.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Broken runtime contracts: tape reuse, non-finite values, I/O failures.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream oss;
  (oss << ... << args);
  return oss.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail_config(const Args&... args) {
  throw ConfigError(detail::concat(args...));
}

template <typename... Args>
[[noreturn]] void fail_runtime(const Args&... args) {
  throw RuntimeError(detail::concat(args...));
}

// Warning sink, replaceable in tests. Defaults to stderr.
inline std::function<void(const std::string&)>& warn_sink() {
  static std::function<void(const std::string&)> sink =
      [](const std::string& msg) { std::cerr << "[densesr] warning: " << msg << "\n"; };
  return sink;
}

template <typename... Args>
void log_warn(const Args&... args) {
  warn_sink()(detail::concat(args...));
}

}  // namespace densesr
