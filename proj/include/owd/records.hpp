#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "owd/geometry.hpp"

namespace owd {

/// Error raised by the text record reader; the message names file, line and field.
class RecordError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One line of the structured text format: space-separated `key:value` fields,
/// serialized with keys in lexicographic order. Values escape space, tab,
/// newline and '%' as %XX. Lines starting with '#' and blank lines are skipped.
class Record {
public:
    Record() = default;
    explicit Record(std::string kind) { set("kind", std::move(kind)); }

    std::string kind() const { return has("kind") ? text("kind") : std::string(); }
    bool has(std::string_view key) const { return fields_.find(std::string(key)) != fields_.end(); }

    Record& set(std::string_view key, std::string value);
    Record& set(std::string_view key, double value);
    Record& set(std::string_view key, long long value);
    Record& set(std::string_view key, int value) { return set(key, static_cast<long long>(value)); }
    Record& set(std::string_view key, std::size_t value) { return set(key, static_cast<long long>(value)); }
    Record& set(std::string_view key, std::span<const double> values);
    Record& set(std::string_view key, const Vec3& v);

    const std::string& text(std::string_view key) const;
    double number(std::string_view key) const;
    long long integer(std::string_view key) const;
    std::vector<double> numbers(std::string_view key) const;
    Vec3 vec3(std::string_view key) const;

    const std::map<std::string, std::string, std::less<>>& fields() const { return fields_; }

    /// Context used in error messages, e.g. "scene.manifest:3".
    std::string origin;

    friend bool operator==(const Record& a, const Record& b) { return a.fields_ == b.fields_; }

private:
    [[noreturn]] void fail(std::string_view key, std::string_view what) const;

    std::map<std::string, std::string, std::less<>> fields_;
};

/// Shortest decimal form that reads back to the same double.
std::string format_number(double value);

std::string format_record(const Record& record);
Record parse_record(std::string_view line, const std::string& origin = {});

std::vector<Record> parse_records(std::string_view text, const std::string& origin = {});
std::string format_records(std::span<const Record> records);

std::vector<Record> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, std::span<const Record> records);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

} // namespace owd
