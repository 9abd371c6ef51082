#pragma once

#include <stdexcept>
#include <string>

namespace mdctpf {

// Every failure raised by the library derives from Error. The CLI maps the
// concrete category onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wrong vector/frame/tensor length handed to an operation.
class InputSizeError : public Error {
 public:
  using Error::Error;
};

// A tensor did not have the shape the network chain requires at `layer`.
class ShapeError : public InputSizeError {
 public:
  ShapeError(const std::string& layer, const std::string& what)
      : InputSizeError(layer + ": " + what), layer_(layer) {}
  const std::string& layer() const { return layer_; }

 private:
  std::string layer_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered in a numeric path (e.g. gradients during training).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdctpf
