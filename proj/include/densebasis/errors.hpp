#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace densebasis {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

// NaN or Inf where finite values are required.
class NonFiniteInput : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& what, std::size_t iterations = 0)
      : Error(what), iterations_(iterations) {}
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  std::size_t iterations_;
};

// Spectrum with zero trace (nothing to normalize).
class DegenerateSpectrum : public Error {
 public:
  using Error::Error;
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

// An optimizer step was refused because the gradient was not finite.
class AbortStep : public Error {
 public:
  AbortStep(const std::string& what, long epoch = -1, long batch = -1)
      : Error(what), epoch_(epoch), batch_(batch) {}
  long epoch() const noexcept { return epoch_; }
  long batch() const noexcept { return batch_; }

 private:
  long epoch_;
  long batch_;
};

}  // namespace densebasis
