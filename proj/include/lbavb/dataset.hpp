#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lbavb/model_spec.hpp"

namespace lbavb {

struct Trial {
  std::uint32_t cell = 0;  // FactorSchema::encode_cell of the trial-factor levels
  std::uint32_t choice = 0;
  double rt = 0.0;
};

struct SubjectData {
  std::string id;
  std::vector<Trial> trials;
};

struct Dataset {
  std::shared_ptr<const FactorSchema> schema;
  std::vector<SubjectData> subjects;

  std::size_t n_trials() const;
  // Trial counts per cell for one subject.
  std::vector<std::size_t> cell_counts(std::size_t subject) const;
  double min_rt(std::size_t subject) const;
};

// Keeps, per subject, the trials whose positions are listed.
Dataset subset(const Dataset& data, const std::vector<std::vector<std::size_t>>& keep);

}  // namespace lbavb
