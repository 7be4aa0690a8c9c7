#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace optocool {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside the domain where a closed form is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Gamma_eff <= 0: the mode is anti-damped and no steady state exists.
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& what, double gamma_eff)
      : Error(what), gamma_eff_(gamma_eff) {}
  double gamma_eff() const { return gamma_eff_; }

 private:
  double gamma_eff_;
};

class UnitMismatchError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  FitError(const std::string& what, std::vector<double> best_params = {})
      : Error(what), best_params_(std::move(best_params)) {}
  const std::vector<double>& best_params() const { return best_params_; }

 private:
  std::vector<double> best_params_;
};

class NoPeakError : public Error {
 public:
  using Error::Error;
};

// Calibration tone missing or too weak to set the scale.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class MissingHeaderError : public IoError {
 public:
  using IoError::IoError;
};

class NonUniformGridError : public IoError {
 public:
  NonUniformGridError(const std::string& what, std::size_t row)
      : IoError(what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class NonFiniteValueError : public IoError {
 public:
  NonFiniteValueError(const std::string& what, std::size_t row)
      : IoError(what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

}  // namespace optocool
