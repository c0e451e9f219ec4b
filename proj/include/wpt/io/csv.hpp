#pragma once

// Trace/table CSV export and the matching strict parser. Values are written
// with 9 significant digits.

#include <string>
#include <vector>

#include "wpt/circuit/trace.hpp"

namespace wpt::io {

std::string format_value(double v);

/// Header `t_s,<probe>...`, one row per sample.
void write_trace_csv(const std::string& path, const circuit::Trace& trace);
circuit::Trace read_trace_csv(const std::string& path);

/// Generic numeric table with a header row.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

void write_table_csv(const std::string& path, const Table& table);
Table read_table_csv(const std::string& path);

}  // namespace wpt::io
