#pragma once

#include <stdexcept>
#include <string>

namespace reslt {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class LabelError : public Error {
public:
  using Error::Error;
};

/// Invalid hyperparameter or argument value (beta, alpha, group count, ...).
class ParameterError : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

class CapacityError : public Error {
public:
  using Error::Error;
};

class DeterminismError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// Non-finite training loss. Carries the epoch and step where it appeared.
class DivergedError : public Error {
public:
  DivergedError(std::size_t epoch, std::size_t step)
      : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
              ", step " + std::to_string(step)),
        epoch_(epoch), step_(step) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step() const noexcept { return step_; }

private:
  std::size_t epoch_;
  std::size_t step_;
};

}  // namespace reslt
