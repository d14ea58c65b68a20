#pragma once

#include <stdexcept>
#include <string>

namespace tsnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Keypoint set has no visible point to draw.
class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

/// Subject reference geometry cannot anchor a similarity transform.
class NormalizationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A loss term became NaN/Inf. Carries the last checkpoint that is known good.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& what, std::string last_good_checkpoint = {})
      : Error(what), last_good_checkpoint_(std::move(last_good_checkpoint)) {}

  const std::string& last_good_checkpoint() const { return last_good_checkpoint_; }

 private:
  std::string last_good_checkpoint_;
};

}  // namespace tsnet
