#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dnsfp {

/// Base of every error the library raises. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class DuplicateTraceId : public Error {
public:
  explicit DuplicateTraceId(const std::string& id)
      : Error("duplicate trace_id '" + id + "'"), id_(id) {}
  const std::string& trace_id() const noexcept { return id_; }

private:
  std::string id_;
};

// ingest
class UnreadableCapture : public Error { using Error::Error; };
class NoMatchingTraffic : public Error { using Error::Error; };
class MalformedTls : public Error { using Error::Error; };

// features
class ZeroGap : public Error { using Error::Error; };
class EmptySequence : public Error { using Error::Error; };
class EmptyTraining : public Error { using Error::Error; };

// classifiers
class DegenerateTraining : public Error { using Error::Error; };
class VocabularyMismatch : public Error { using Error::Error; };

// eval
class ClassTooSmall : public Error {
public:
  explicit ClassTooSmall(const std::string& label)
      : Error("class '" + label + "' has fewer traces than folds"), label_(label) {}
  const std::string& label() const noexcept { return label_; }

private:
  std::string label_;
};
class NoLabelOverlap : public Error { using Error::Error; };
class InsufficientData : public Error { using Error::Error; };

// padprobe
class NameTooLong : public Error { using Error::Error; };
class UnencodableBlock : public Error { using Error::Error; };
class WireFormatError : public Error { using Error::Error; };

} // namespace dnsfp
