#pragma once

// Delimited text IO. Numbers are written with 17 significant digits so that
// every double survives a write/read round trip.

#include "bivas/model.hpp"

#include <string>
#include <utility>
#include <vector>

namespace bivas::io {

// Reads a CSV/TSV file with a header row. The delimiter is a tab for .tsv/.tab
// files or when the header has tabs but no commas; a comma otherwise.
RawTable read_table(const std::string& path);
RawTable parse_table(const std::string& text, char delimiter);

// Two-column (predictor, group label) sidecar file; a header row whose first
// cell is not a known predictor is skipped by the caller.
std::vector<std::pair<std::string, std::string>> read_group_map(const std::string& path);

std::string format_double(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Returns the rows of `raw` after removing those whose first cell is `marker`,
// storing the removed row (if any) in `marked`.
RawTable extract_marked_row(const RawTable& raw, const std::string& marker,
                            std::vector<std::string>* marked);

std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace bivas::io
