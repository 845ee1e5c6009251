#pragma once

// Minimal comma-separated reader/writer for the tool's own file formats
// (no quoting; decimal point; first line is a header).

#include <charconv>
#include <cmath>
#include <initializer_list>
#include <istream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "ipcal/error.hpp"

namespace ipcal {

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    }
    return out;
}

/// Line-oriented reader that reports errors as "<source>:<line>: message".
class CsvReader {
public:
    CsvReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {
        if (std::getline(in_, header_line_)) {
            ++line_no_;
            if (header_line_.size() >= 3 && header_line_.compare(0, 3, "\xEF\xBB\xBF") == 0) {
                header_line_.erase(0, 3);
            }
            for (auto f : split_csv_line(header_line_)) header_.emplace_back(f);
        }
    }

    bool empty_file() const noexcept { return header_.empty(); }
    const std::vector<std::string>& header() const noexcept { return header_; }
    std::size_t line() const noexcept { return line_no_; }

    void expect_header(std::initializer_list<std::string_view> names) {
        std::vector<std::string> want(names.begin(), names.end());
        if (header_ != want) {
            std::string joined;
            for (const auto& n : want) joined += (joined.empty() ? "" : ",") + n;
            fail_at(1, "expected header '" + joined + "'");
        }
    }

    /// Next non-blank data row; fields view into an internal buffer that is
    /// valid until the following call.
    bool next(std::vector<std::string_view>& fields) {
        while (std::getline(in_, current_)) {
            ++line_no_;
            if (current_.find_first_not_of(" \t\r") == std::string::npos) continue;
            fields = split_csv_line(current_);
            return true;
        }
        return false;
    }

    double number(std::string_view field) const {
        if (field == "nan" || field == "NaN") return std::nan("");
        if (field == "inf") return INFINITY;
        if (field == "-inf") return -INFINITY;
        double v = 0.0;
        const char* first = field.data();
        const char* last = field.data() + field.size();
        if (!field.empty() && *first == '+') ++first;
        const auto res = std::from_chars(first, last, v);
        if (field.empty() || res.ec != std::errc{} || res.ptr != last) {
            fail("not a number: '" + std::string(field) + "'");
        }
        return v;
    }

    [[noreturn]] void fail(const std::string& msg) const { fail_at(line_no_, msg); }

private:
    [[noreturn]] void fail_at(std::size_t line, const std::string& msg) const {
        throw ValidationError(source_ + ":" + std::to_string(line) + ": " + msg);
    }

    std::istream& in_;
    std::string source_;
    std::string header_line_;
    std::string current_;
    std::vector<std::string> header_;
    std::size_t line_no_ = 0;
};

} // namespace ipcal
