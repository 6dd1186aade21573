#pragma once

#include <stdexcept>
#include <string>

namespace modelctl {

// Base for every error raised by the library. Callers that only care about
// "something in the pipeline failed" catch this; the subclasses let tests and
// the CLI tell the failure modes apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class SampleRateMismatch : public Error {
 public:
  using Error::Error;
};

class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

class AudioTooLong : public Error {
 public:
  using Error::Error;
};

class OutOfVocabulary : public Error {
 public:
  using Error::Error;
};

class CorruptFile : public Error {
 public:
  using Error::Error;
};

class FrameCountMismatch : public Error {
 public:
  using Error::Error;
};

class ConstraintViolation : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  ManifestError(const std::string& what, std::size_t line)
      : Error("manifest line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateId : public ManifestError {
 public:
  DuplicateId(const std::string& id, std::size_t line)
      : ManifestError("duplicate id '" + id + "'", line), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class InvalidSplit : public ManifestError {
 public:
  using ManifestError::ManifestError;
};

// Raised by the attack loop when the loss or gradient stops being finite.
class StepFailure : public Error {
 public:
  StepFailure(const std::string& what, long step)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace modelctl
