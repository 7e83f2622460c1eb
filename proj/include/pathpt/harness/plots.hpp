#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pathpt::harness {

// Header-indexed CSV rows; cells kept as text.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;  // throws std::runtime_error
    const std::string& at(std::size_t row, const std::string& name) const { return rows.at(row).at(column(name)); }
};

// Throws std::runtime_error when the file is missing or a row is ragged.
CsvTable read_csv(const std::filesystem::path& path);

struct PlotResult {
    std::vector<std::filesystem::path> files;
    std::vector<std::string> warnings;
};

// SVG box plots of BACC and AUC (one box per method and k, one file per base
// quality) and DICE bar charts, read from summary.csv and runs.csv only.
// Every drawn element carries data-* attributes holding the CSV text it was
// drawn from. A bundle without result rows yields no files and a warning.
// Throws std::runtime_error when either CSV is missing.
PlotResult emit_plots(const std::filesystem::path& bundle);

}  // namespace pathpt::harness
