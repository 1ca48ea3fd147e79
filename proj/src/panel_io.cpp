#include "sptsae/panel_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "csv_util.hpp"
#include "sptsae/errors.hpp"

namespace spt {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

PanelRecords parse_panel_csv(const std::string& text, const std::string& source) {
  PanelRecords out;
  out.source = source;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (width == 0) {
      if (fields.size() < 5 || lower(fields[0]) != "domain" || lower(fields[1]) != "time" || lower(fields[2]) != "y" ||
          lower(fields[3]) != "size")
        throw DataError(fmt::format("{}: line {}: header must be domain,time,y,size,x1,...,xp", source, lineno));
      out.covariate_names.assign(fields.begin() + 4, fields.end());
      width = fields.size();
      continue;
    }
    if (fields.size() != width)
      throw DataError(fmt::format("{}: line {}: expected {} fields, got {}", source, lineno, width, fields.size()));
    PanelRecord rec;
    rec.domain = fields[0];
    rec.time = fields[1];
    rec.line = lineno;
    if (rec.domain.empty() || rec.time.empty())
      throw DataError(fmt::format("{}: line {}: empty domain or time id", source, lineno));
    auto num = [&](const std::string& f, const char* what) {
      auto v = detail::parse_double(f);
      if (!v || !std::isfinite(*v))
        throw DataError(fmt::format("{}: line {}: {} '{}' is not a finite number", source, lineno, what, f));
      return *v;
    };
    rec.y = num(fields[2], "y");
    rec.size = num(fields[3], "size");
    for (std::size_t k = 4; k < fields.size(); ++k) rec.x.push_back(num(fields[k], "covariate"));
    out.rows.push_back(std::move(rec));
  }
  if (width == 0) throw DataError(fmt::format("{}: empty file", source));
  if (out.rows.empty()) throw DataError(fmt::format("{}: no data rows", source));
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("{}: cannot open file", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("{}: cannot open for writing", path));
  out << content;
  if (!out) throw DataError(fmt::format("{}: write failed", path));
}

PanelRecords read_panel_records(const std::string& path) { return parse_panel_csv(read_text_file(path), path); }

namespace {

struct Layout {
  std::vector<std::string> domains;
  std::vector<std::string> times;
  std::map<std::string, int> domain_index;
  std::map<std::string, int> time_index;
};

Layout layout_of(const PanelRecords& records) {
  Layout l;
  for (const auto& r : records.rows) {
    if (l.domain_index.emplace(r.domain, static_cast<int>(l.domains.size())).second) l.domains.push_back(r.domain);
    if (l.time_index.emplace(r.time, static_cast<int>(l.times.size())).second) l.times.push_back(r.time);
  }
  return l;
}

}  // namespace

std::vector<std::string> validate_panel(const PanelRecords& records) {
  std::vector<std::string> out;
  const auto l = layout_of(records);
  std::map<std::pair<int, int>, int> seen;
  for (const auto& r : records.rows) {
    const auto key = std::make_pair(l.domain_index.at(r.domain), l.time_index.at(r.time));
    auto [it, inserted] = seen.emplace(key, r.line);
    if (!inserted)
      out.push_back(fmt::format("{}: line {}: duplicate cell (domain '{}', time '{}'), first seen on line {}",
                                records.source, r.line, r.domain, r.time, it->second));
    if (!(r.y >= 0.0) || r.y != std::floor(r.y))
      out.push_back(fmt::format("{}: line {}: y must be a nonnegative integer", records.source, r.line));
    if (!(r.size >= 1.0) || r.size != std::floor(r.size))
      out.push_back(fmt::format("{}: line {}: size must be an integer >= 1", records.source, r.line));
  }
  for (std::size_t d = 0; d < l.domains.size(); ++d)
    for (std::size_t t = 0; t < l.times.size(); ++t)
      if (!seen.count({static_cast<int>(d), static_cast<int>(t)}))
        out.push_back(fmt::format("{}: missing cell (domain '{}', time '{}'); the panel must be balanced",
                                  records.source, l.domains[d], l.times[t]));
  const int p = static_cast<int>(records.covariate_names.size());
  Eigen::MatrixXd x(records.rows.size(), p);
  for (std::size_t i = 0; i < records.rows.size(); ++i)
    for (int k = 0; k < p; ++k) x(i, k) = records.rows[i].x[k];
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < p)
    out.push_back(fmt::format("{}: design matrix is rank deficient (rank {} < p = {})", records.source, qr.rank(), p));
  return out;
}

PanelData assemble_panel(const PanelRecords& records) {
  auto problems = validate_panel(records);
  if (!problems.empty()) throw DataError(problems.front());
  const auto l = layout_of(records);
  const int D = static_cast<int>(l.domains.size());
  const int T = static_cast<int>(l.times.size());
  const int p = static_cast<int>(records.covariate_names.size());
  Eigen::MatrixXd y(D, T), nu(D, T), x(D * T, p);
  for (const auto& r : records.rows) {
    const int d = l.domain_index.at(r.domain);
    const int t = l.time_index.at(r.time);
    y(d, t) = r.y;
    nu(d, t) = r.size;
    for (int k = 0; k < p; ++k) x(d * T + t, k) = r.x[k];
  }
  PanelData data = PanelData::make(std::move(y), std::move(nu), std::move(x));
  data.domain_labels = l.domains;
  data.time_labels = l.times;
  data.covariate_names = records.covariate_names;
  return data;
}

PanelData read_panel_csv(const std::string& path) { return assemble_panel(read_panel_records(path)); }

std::string panel_csv(const PanelData& data) {
  std::string out = "domain,time,y,size";
  for (const auto& n : data.covariate_names) out += "," + n;
  out += "\n";
  for (int d = 0; d < data.D; ++d) {
    for (int t = 0; t < data.T; ++t) {
      out += fmt::format("{},{},{:.17g},{:.17g}", data.domain_labels[d], data.time_labels[t], data.y(d, t),
                         data.nu(d, t));
      for (int k = 0; k < data.p; ++k) out += fmt::format(",{:.17g}", data.x(data.cell(d, t), k));
      out += "\n";
    }
  }
  return out;
}

}  // namespace spt
