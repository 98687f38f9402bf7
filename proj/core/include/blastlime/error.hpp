#pragma once

#include <stdexcept>
#include <string>

namespace blastlime {

// Root of every error thrown by the library. Subclasses map onto the CLI
// exit codes: ShapeError/ConfigError/IoError/FormatError/CheckpointError are
// input problems (exit 2), TrainingError is a numeric failure (exit 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace blastlime
