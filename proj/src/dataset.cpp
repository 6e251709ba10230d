#include "lbavb/dataset.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace lbavb {

std::size_t Dataset::n_trials() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.trials.size();
  return n;
}

std::vector<std::size_t> Dataset::cell_counts(std::size_t subject) const {
  std::vector<std::size_t> counts(schema->n_cells(), 0);
  for (const auto& t : subjects.at(subject).trials) ++counts[t.cell];
  return counts;
}

double Dataset::min_rt(std::size_t subject) const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& t : subjects.at(subject).trials) m = std::min(m, t.rt);
  return m;
}

Dataset subset(const Dataset& data, const std::vector<std::vector<std::size_t>>& keep) {
  if (keep.size() != data.subjects.size()) throw std::invalid_argument("subset: subject count mismatch");
  Dataset out;
  out.schema = data.schema;
  out.subjects.resize(data.subjects.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const auto& src = data.subjects[j];
    out.subjects[j].id = src.id;
    out.subjects[j].trials.reserve(keep[j].size());
    for (std::size_t i : keep[j]) out.subjects[j].trials.push_back(src.trials.at(i));
  }
  return out;
}

}  // namespace lbavb
