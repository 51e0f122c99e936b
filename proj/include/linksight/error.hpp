#pragma once

#include <stdexcept>
#include <string>

namespace linksight {

/// Category of a pipeline failure, used by the CLI for exit-code mapping.
enum class ErrorKind {
  parse,       // malformed input text
  parameter,   // argument outside its legal domain
  shape,       // tensor/matrix dimension mismatch
  training,    // optimization failure (divergence, empty data)
  infeasible,  // constraint makes the requested computation impossible
  io           // filesystem and stream failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(ErrorKind::parse, m) {}
};
struct ParameterError : Error {
  explicit ParameterError(const std::string& m) : Error(ErrorKind::parameter, m) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error(ErrorKind::shape, m) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& m) : Error(ErrorKind::training, m) {}
};
struct InfeasibleError : Error {
  explicit InfeasibleError(const std::string& m) : Error(ErrorKind::infeasible, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};

}  // namespace linksight
