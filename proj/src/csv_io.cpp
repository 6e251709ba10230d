#include "lbavb/csv_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>
#include <vector>

namespace lbavb {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int level_index(const std::vector<std::string>& levels, const std::string& x) {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] == x) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

Dataset read_trials_csv(std::istream& in, std::shared_ptr<const FactorSchema> schema) {
  if (!schema) throw std::invalid_argument("read_trials_csv: null schema");
  const FactorSchema& sc = *schema;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError("empty file: missing header", 1);
  ++line_no;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_row(line);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    throw DataError("header lacks column '" + name + "'", 1);
  };
  const int c_subject = column("subject");
  const int c_response = column("response");
  const int c_rt = column("rt");
  std::vector<int> c_factor(sc.n_trial_factors());
  for (std::size_t f = 0; f < sc.n_trial_factors(); ++f) c_factor[f] = column(sc.factors()[f].name);

  Dataset data;
  data.schema = schema;
  std::unordered_map<std::string, std::size_t> subject_index;
  std::vector<int> levels(sc.n_trial_factors());
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto row = split_row(line);
    auto fail = [&](const std::string& msg) {
      return DataError("line " + std::to_string(line_no) + ": " + msg, line_no);
    };
    if (row.size() != header.size())
      throw fail("expected " + std::to_string(header.size()) + " fields, found " +
                 std::to_string(row.size()));
    for (const auto& cell : row) {
      if (cell.empty()) throw fail("missing field");
    }
    for (std::size_t f = 0; f < sc.n_trial_factors(); ++f) {
      const auto& fac = sc.factors()[f];
      levels[f] = level_index(fac.levels, row[c_factor[f]]);
      if (levels[f] < 0) throw fail("unknown level '" + row[c_factor[f]] + "' of factor " + fac.name);
    }
    const int choice = sc.accumulator_index(row[c_response]);
    if (choice < 0) throw fail("unknown response '" + row[c_response] + "'");
    const std::string& rt_text = row[c_rt];
    double rt = 0.0;
    const auto res = std::from_chars(rt_text.data(), rt_text.data() + rt_text.size(), rt);
    if (res.ec != std::errc() || res.ptr != rt_text.data() + rt_text.size())
      throw fail("malformed rt '" + rt_text + "'");
    if (!(rt > 0.0) || !std::isfinite(rt)) throw fail("rt must be positive, got " + rt_text);
    const std::string& sid = row[c_subject];
    auto [it, inserted] = subject_index.emplace(sid, data.subjects.size());
    if (inserted) data.subjects.push_back(SubjectData{sid, {}});
    data.subjects[it->second].trials.push_back(
        Trial{sc.encode_cell(levels), static_cast<std::uint32_t>(choice), rt});
  }
  return data;
}

Dataset ingest_csv(const std::string& path, std::shared_ptr<const FactorSchema> schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path, 0);
  return read_trials_csv(in, std::move(schema));
}

void write_trials_csv(std::ostream& out, const Dataset& data) {
  const FactorSchema& sc = *data.schema;
  out << "subject";
  for (std::size_t f = 0; f < sc.n_trial_factors(); ++f) out << "," << sc.factors()[f].name;
  out << ",response,rt\n";
  out << std::setprecision(17);
  for (const auto& s : data.subjects) {
    for (const auto& t : s.trials) {
      out << s.id;
      const auto lv = sc.decode_cell(t.cell);
      for (std::size_t f = 0; f < lv.size(); ++f) out << "," << sc.factors()[f].levels[lv[f]];
      out << "," << sc.accumulators()[t.choice] << "," << t.rt << "\n";
    }
  }
}

void write_trials_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_trials_csv(out, data);
}

std::string count_report(const Dataset& data) {
  std::ostringstream os;
  for (std::size_t j = 0; j < data.subjects.size(); ++j) {
    os << data.subjects[j].id << ": " << data.subjects[j].trials.size() << " trials [";
    const auto counts = data.cell_counts(j);
    for (std::size_t c = 0; c < counts.size(); ++c) os << (c ? " " : "") << counts[c];
    os << "]\n";
  }
  return os.str();
}

}  // namespace lbavb
