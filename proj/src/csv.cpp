#include "sglab/csv.hpp"

#include <fstream>
#include <sstream>

#include "sglab/config.hpp"
#include "sglab/error.hpp"

namespace sg {

void write_samples_csv(const std::filesystem::path& path, const SampleSet& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "label";
  for (int j = 0; j < samples.dim; ++j) out << ",x" << j;
  out << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Condition& c = samples.conds[i];
    out << (c.is_null() ? std::string("null") : std::to_string(c.label));
    for (double v : samples.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw FormatError("error while writing " + path.string());
}

SampleSet read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) {
    throw FormatError(path.string() + ": expected a header starting with 'label'");
  }
  SampleSet s;
  for (char ch : line) s.dim += ch == ',' ? 1 : 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    if (cell == "null") {
      s.conds.push_back(Condition::null());
    } else {
      try {
        s.conds.push_back(Condition::of(std::stoi(cell)));
      } catch (const std::logic_error&) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad label '" + cell + "'");
      }
    }
    int cols = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        s.values.push_back(parse_double(cell, "value"));
      } catch (const ConfigError&) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad value '" + cell + "'");
      }
      ++cols;
    }
    if (cols != s.dim) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
  }
  return s;
}

SampleSet take_rows(const SampleSet& s, std::size_t n) {
  if (n >= s.size()) return s;
  SampleSet out;
  out.dim = s.dim;
  out.conds.assign(s.conds.begin(), s.conds.begin() + static_cast<std::ptrdiff_t>(n));
  out.values.assign(s.values.begin(), s.values.begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(s.dim)));
  return out;
}

}  // namespace sg
