#include "bivas/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace bivas::io {

namespace {

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == delimiter && !quoted) {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  for (auto& s : cells) {
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
  }
  return cells;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw Error(ErrorCode::Io, "failed writing '" + path + "'");
}

RawTable parse_table(const std::string& text, char delimiter) {
  RawTable table;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line, delimiter);
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw Error(ErrorCode::Io, "table has no header row");
  return table;
}

RawTable read_table(const std::string& path) {
  const std::string text = read_file(path);
  char delimiter = ',';
  if (ends_with(path, ".tsv") || ends_with(path, ".tab")) {
    delimiter = '\t';
  } else {
    const std::string first = text.substr(0, text.find('\n'));
    if (first.find('\t') != std::string::npos && first.find(',') == std::string::npos) {
      delimiter = '\t';
    }
  }
  return parse_table(text, delimiter);
}

std::vector<std::pair<std::string, std::string>> read_group_map(const std::string& path) {
  const RawTable t = read_table(path);
  std::vector<std::pair<std::string, std::string>> out;
  auto take = [&](const std::vector<std::string>& row, std::size_t line) {
    if (row.size() < 2) {
      throw Error(ErrorCode::DimensionMismatch,
                  "group map line " + std::to_string(line) + " needs two columns");
    }
    out.emplace_back(row[0], row[1]);
  };
  take(t.header, 1);
  for (std::size_t i = 0; i < t.rows.size(); ++i) take(t.rows[i], i + 2);
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

RawTable extract_marked_row(const RawTable& raw, const std::string& marker,
                            std::vector<std::string>* marked) {
  RawTable out;
  out.header = raw.header;
  for (const auto& row : raw.rows) {
    if (!row.empty() && row.front() == marker) {
      if (marked) *marked = row;
    } else {
      out.rows.push_back(row);
    }
  }
  return out;
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace bivas::io
