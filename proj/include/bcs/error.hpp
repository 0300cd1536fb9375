#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bcs {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-readable tag used by the CLI when it emits JSON diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> items)
      : Error("validation", join(items)), items_(std::move(items)) {}

  const std::vector<std::string>& items() const noexcept { return items_; }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) {
      if (!out.empty()) out += "; ";
      out += s;
    }
    return out;
  }

  std::vector<std::string> items_;
};

class EncodingError : public Error {
 public:
  explicit EncodingError(const std::string& what) : Error("encoding", what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, int line = 0)
      : Error("config", line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

class AgentError : public Error {
 public:
  explicit AgentError(const std::string& what) : Error("agent", what) {}
};

class SamplerError : public Error {
 public:
  SamplerError(long iteration, std::string step, const std::string& what)
      : Error("sampler", "iteration " + std::to_string(iteration) + ", step " + step + ": " + what),
        iteration_(iteration),
        step_(std::move(step)) {}

  long iteration() const noexcept { return iteration_; }
  const std::string& step() const noexcept { return step_; }

 private:
  long iteration_;
  std::string step_;
};

}  // namespace bcs
