#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace datlas {

// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed binary checkpoint.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Malformed cohort/schema text file. Rows are 1-based and count the header.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t row, std::string column = {})
      : std::runtime_error(compose(what, row, column)), row_(row), column_(std::move(column)) {}
  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  static std::string compose(const std::string& what, std::size_t row, const std::string& column) {
    std::string s = "row " + std::to_string(row);
    if (!column.empty()) s += ", column '" + column + "'";
    return s + ": " + what;
  }
  std::size_t row_;
  std::string column_;
};

// A metric that has no value on the given data (e.g. AUROC with one class).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t iteration)
      : std::runtime_error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

#define DATLAS_REQUIRE(cond, msg)                       \
  do {                                                  \
    if (!(cond)) throw ::datlas::ContractViolation(msg); \
  } while (0)

}  // namespace datlas
