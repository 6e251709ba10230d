#pragma once

#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>

#include "lbavb/dataset.hpp"

namespace lbavb {

class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line) : std::runtime_error(what), line_(line) {}
  // 1-based line of the offending row, 0 when not tied to a row.
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Header must name subject, every trial factor of the schema, response and rt;
// other columns are ignored. Subjects keep first-appearance order.
Dataset read_trials_csv(std::istream& in, std::shared_ptr<const FactorSchema> schema);
Dataset ingest_csv(const std::string& path, std::shared_ptr<const FactorSchema> schema);

void write_trials_csv(std::ostream& out, const Dataset& data);
void write_trials_csv(const std::string& path, const Dataset& data);

// One line per subject with per-cell trial counts.
std::string count_report(const Dataset& data);

}  // namespace lbavb
