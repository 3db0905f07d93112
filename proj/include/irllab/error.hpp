#pragma once

#include <stdexcept>
#include <string>

namespace irllab {

// Base of every error raised by the library. `kind()` is a short stable tag
// used by the CLI when reporting failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define IRLLAB_DEFINE_ERROR(Name, tag) \
  class Name : public Error {          \
   public:                             \
    explicit Name(const std::string& what) : Error(tag, what) {} \
  }

IRLLAB_DEFINE_ERROR(ConfigError, "config");
IRLLAB_DEFINE_ERROR(InvalidSequenceError, "invalid-sequence");
IRLLAB_DEFINE_ERROR(EmptyCorpusError, "empty-corpus");
IRLLAB_DEFINE_ERROR(SplitError, "split");
IRLLAB_DEFINE_ERROR(GenerationError, "generation");
IRLLAB_DEFINE_ERROR(FitError, "fit");
IRLLAB_DEFINE_ERROR(ShapeError, "shape");
IRLLAB_DEFINE_ERROR(UndefinedCorrelationError, "undefined-correlation");
IRLLAB_DEFINE_ERROR(FormatError, "format");
IRLLAB_DEFINE_ERROR(MissingStageError, "missing-stage");

#undef IRLLAB_DEFINE_ERROR

// Raised when a training loop produces a non-finite loss. Carries the step
// (PPO) or iteration (Algorithm-1 loop) at which it happened.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, const std::string& what)
      : Error("divergence", "step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace irllab
