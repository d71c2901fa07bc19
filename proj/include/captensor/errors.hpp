#pragma once

#include <stdexcept>
#include <string>

namespace captensor {

// Base for every library failure. The CLI maps each subclass to its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-range input (bad indices, bad files, invalid configs).
class InputError : public Error {
 public:
  using Error::Error;
};

// A well-formed request that the current state cannot honor,
// e.g. confidence intervals on fine-tuned parameters.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Optimization failures: divergence, separable data, all restarts failed.
class FitError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace captensor
