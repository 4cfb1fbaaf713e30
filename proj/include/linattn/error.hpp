#pragma once

#include <stdexcept>
#include <string>

namespace linattn {

// Base class for all structured errors thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

// Recurrent state left the finite range; message names the timestep.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long timestep)
      : Error(what), timestep(timestep) {}
  long timestep;
};

}  // namespace linattn
