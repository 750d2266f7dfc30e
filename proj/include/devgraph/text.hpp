#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace devgraph::text {

/// Shortest decimal rendering that parses back to the identical double.
std::string format_double(double value);

/// Parses a full token as a double; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view token);
std::optional<long long> parse_int(std::string_view token);

/// Splits on ASCII whitespace, dropping empty tokens.
std::vector<std::string_view> split_ws(std::string_view line);

std::string_view trim(std::string_view s);

/// Line cursor over a text buffer that tracks 1-based line numbers and
/// skips blank lines and '#' comments.
class LineReader {
public:
    explicit LineReader(std::string_view text) : text_(text) {}

    /// Next non-blank, non-comment line (trimmed); nullopt at end of input.
    std::optional<std::string_view> next();
    std::size_t line_number() const noexcept { return line_; }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

} // namespace devgraph::text
