#pragma once

#include <stdexcept>
#include <string>

namespace spectro {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

/// A patch or scan offset that does not fit inside the image.
class GeometryError : public Error {
public:
  using Error::Error;
};

class IllConditionedDictionary : public Error {
public:
  IllConditionedDictionary(double condition, const std::string& what)
      : Error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

private:
  double condition_;
};

class DegenerateProbe : public Error {
public:
  using Error::Error;
};

/// Invalid measurement values (negative or non-finite counts).
class DataError : public Error {
public:
  using Error::Error;
};

class ParameterError : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  using Error::Error;
};

class UndefinedMetric : public Error {
public:
  using Error::Error;
};

class DivergenceError : public Error {
public:
  DivergenceError(int iteration, const std::string& what)
      : Error(what), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

private:
  int iteration_;
};

} // namespace spectro
