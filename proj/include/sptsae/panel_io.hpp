#pragma once

#include <string>
#include <vector>

#include "sptsae/model.hpp"

namespace spt {

struct PanelRecord {
  std::string domain;
  std::string time;
  double y = 0.0;
  double size = 0.0;
  std::vector<double> x;
  int line = 0;  // 1-based line in the source file
};

struct PanelRecords {
  std::string source;
  std::vector<std::string> covariate_names;
  std::vector<PanelRecord> rows;
};

// Parses `domain,time,y,size,x1,...,xp`. Malformed lines throw DataError
// naming the file and line; semantic checks are left to validate_panel.
PanelRecords parse_panel_csv(const std::string& text, const std::string& source);
PanelRecords read_panel_records(const std::string& path);

// Balance, duplicate cells, count/size validity and design rank. Empty when valid.
std::vector<std::string> validate_panel(const PanelRecords& records);

// Domains and times keep their order of first appearance.
PanelData assemble_panel(const PanelRecords& records);
PanelData read_panel_csv(const std::string& path);

std::string panel_csv(const PanelData& data);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace spt
