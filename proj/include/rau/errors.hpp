#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rau {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyUtterance : public Error {
 public:
  explicit EmptyUtterance(const std::string& where = "")
      : Error(where.empty() ? "empty utterance" : "empty utterance: " + where) {}
};

class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t line_no, const std::string& why)
      : Error("malformed line " + std::to_string(line_no) + ": " + why), line_no_(line_no) {}
  std::size_t line_no() const { return line_no_; }

 private:
  std::size_t line_no_;
};

class TooLong : public Error {
 public:
  TooLong(std::size_t actual, std::size_t max)
      : Error("sequence too long: " + std::to_string(actual) + " > " + std::to_string(max)),
        actual_(actual),
        max_(max) {}
  std::size_t actual() const { return actual_; }
  std::size_t max() const { return max_; }

 private:
  std::size_t actual_;
  std::size_t max_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexOutOfRange : public Error {
 public:
  using Error::Error;
};

class BackwardWithoutForward : public Error {
 public:
  BackwardWithoutForward() : Error("backward called without a recorded forward pass") {}
};

class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("empty corpus") {}
};

class EmptyDataset : public Error {
 public:
  explicit EmptyDataset(const std::string& which) : Error("empty dataset: " + which) {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable input files, bad checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace rau
