#pragma once

#include <stdexcept>
#include <string>

namespace cqa {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// structio
class MalformedRecord : public Error {
 public:
  explicit MalformedRecord(const std::string& msg) : Error(msg) {}
};
class EmptyStructure : public Error {
 public:
  explicit EmptyStructure(const std::string& msg) : Error(msg) {}
};

// numcore
class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};
class GraphCycle : public Error {
 public:
  explicit GraphCycle(const std::string& msg) : Error(msg) {}
};

// featurize
class SolverFailure : public Error {
 public:
  explicit SolverFailure(const std::string& msg) : Error(msg) {}
};

// dockq
class NumberingMismatch : public Error {
 public:
  explicit NumberingMismatch(const std::string& msg) : Error(msg) {}
};
class DegenerateInterface : public Error {
 public:
  explicit DegenerateInterface(const std::string& msg) : Error(msg) {}
};
class DegenerateGeometry : public Error {
 public:
  explicit DegenerateGeometry(const std::string& msg) : Error(msg) {}
};

// trainer / io
class DataEmpty : public Error {
 public:
  explicit DataEmpty(const std::string& msg) : Error(msg) {}
};
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

}  // namespace cqa
