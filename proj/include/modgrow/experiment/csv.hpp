#pragma once

// Comma-separated tables with a '#'-prefixed metadata preamble:
//
//   # modgrow format_version=1
//   # kind=trace
//   # config.optimizer.lr=1
//   epoch,n_solved,...
//   0,1,...
//
// Cells never contain commas or newlines. Numbers are written in the shortest
// form that reads back to the same double, so read + write is byte-identical.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace modgrow {

inline constexpr int csv_format_version = 1;

class csv_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest round-trip representation; "nan", "inf" and "-inf" for non-finite values.
inline std::string format_number(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_number(const std::string& s)
{
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw csv_error("not a number: '" + s + "'");
    }
    return v;
}

struct Table {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void set_meta(const std::string& key, const std::string& value) { meta.emplace_back(key, value); }

    const std::string* find_meta(const std::string& key) const
    {
        for (const auto& [k, v] : meta) {
            if (k == key) return &v;
        }
        return nullptr;
    }

    std::size_t column(const std::string& name) const
    {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (columns[i] == name) return i;
        }
        throw csv_error("no column '" + name + "'");
    }

    /// Appends a row; every cell is checked for separators.
    void add_row(std::vector<std::string> row)
    {
        if (row.size() != columns.size()) {
            throw csv_error("row has " + std::to_string(row.size()) + " cells, expected " +
                            std::to_string(columns.size()));
        }
        for (const auto& cell : row) {
            if (cell.find_first_of(",\n\r") != std::string::npos) {
                throw csv_error("cell contains a separator: '" + cell + "'");
            }
        }
        rows.push_back(std::move(row));
    }

    double number(std::size_t row, const std::string& name) const { return parse_number(rows.at(row).at(column(name))); }
};

inline std::string to_csv_string(const Table& t)
{
    std::ostringstream out;
    out << "# modgrow format_version=" << csv_format_version << "\n";
    for (const auto& [k, v] : t.meta) {
        out << "# " << k << "=" << v << "\n";
    }
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            out << (i ? "," : "") << cells[i];
        }
        out << "\n";
    };
    line(t.columns);
    for (const auto& r : t.rows) {
        line(r);
    }
    return out.str();
}

inline Table parse_csv(const std::string& text)
{
    Table t;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "# modgrow format_version=" + std::to_string(csv_format_version)) {
        throw csv_error("missing or unsupported format_version header");
    }
    bool have_header = false;
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = s.find(',', start);
            cells.push_back(s.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return cells;
    };
    while (std::getline(in, line)) {
        if (!have_header && line.rfind("# ", 0) == 0) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw csv_error("malformed metadata line: " + line);
            }
            t.meta.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
        } else if (!have_header) {
            t.columns = split(line);
            have_header = true;
        } else {
            auto cells = split(line);
            if (cells.size() != t.columns.size()) {
                throw csv_error("row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(cells.size()) +
                                " cells, expected " + std::to_string(t.columns.size()));
            }
            t.rows.push_back(std::move(cells));
        }
    }
    if (!have_header) {
        throw csv_error("missing column header");
    }
    return t;
}

inline void write_csv(const std::filesystem::path& path, const Table& t)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw csv_error("cannot write " + path.string());
    }
    out << to_csv_string(t);
    if (!out) {
        throw csv_error("write failed: " + path.string());
    }
}

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw csv_error("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Table read_csv(const std::filesystem::path& path)
{
    try {
        return parse_csv(read_text(path));
    } catch (const csv_error& e) {
        throw csv_error(path.string() + ": " + e.what());
    }
}

}  // namespace modgrow
