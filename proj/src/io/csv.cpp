#include "wpt/io/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "wpt/errors.hpp"

namespace wpt::io {

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& path, std::size_t lineno) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad numeric field '" + s + "'");
    }
}

}  // namespace

void write_trace_csv(const std::string& path, const circuit::Trace& trace) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open " + path + " for writing");
    f << "t_s";
    for (const auto& n : trace.names) f << ',' << n;
    f << '\n';
    for (std::size_t i = 0; i < trace.size(); ++i) {
        f << format_value(trace.t[i]);
        for (const auto& c : trace.cols) f << ',' << format_value(c[i]);
        f << '\n';
    }
    if (!f) throw Error("failed writing " + path);
}

circuit::Trace read_trace_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path + ": empty file");
    auto header = split_line(line);
    if (header.empty() || header[0] != "t_s")
        throw ParseError(path + ":1: expected header starting with t_s");
    circuit::Trace trace;
    trace.names.assign(header.begin() + 1, header.end());
    trace.cols.resize(trace.names.size());
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (fields.size() != header.size())
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        trace.t.push_back(parse_double(fields[0], path, lineno));
        for (std::size_t c = 0; c < trace.cols.size(); ++c)
            trace.cols[c].push_back(parse_double(fields[c + 1], path, lineno));
    }
    if (trace.t.size() >= 2) trace.sample_dt = trace.t[1] - trace.t[0];
    return trace;
}

void write_table_csv(const std::string& path, const Table& table) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < table.header.size(); ++i)
        f << (i ? "," : "") << table.header[i];
    f << '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size())
            throw DimensionMismatch("table row width does not match header");
        for (std::size_t i = 0; i < row.size(); ++i)
            f << (i ? "," : "") << format_value(row[i]);
        f << '\n';
    }
    if (!f) throw Error("failed writing " + path);
}

Table read_table_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path + ": empty file");
    Table table;
    table.header = split_line(line);
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (fields.size() != table.header.size())
            throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row");
        std::vector<double> row;
        row.reserve(fields.size());
        for (const auto& s : fields) row.push_back(parse_double(s, path, lineno));
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace wpt::io
