#include "owd/records.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace owd {

namespace {

bool valid_key(std::string_view key)
{
    if (key.empty())
        return false;
    for (char c : key)
        if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'))
            return false;
    return true;
}

std::string escape(std::string_view s)
{
    static constexpr char hex[] = "0123456789ABCDEF";
    std::string out;
    for (char c : s) {
        if (c == ' ' || c == '%' || c == '\n' || c == '\t' || c == '\r') {
            const auto u = static_cast<unsigned char>(c);
            out += '%';
            out += hex[u >> 4];
            out += hex[u & 0xF];
        } else {
            out += c;
        }
    }
    return out;
}

int hex_value(char c)
{
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    return -1;
}

std::string unescape(std::string_view s, const std::string& origin)
{
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '%') {
            out += s[i];
            continue;
        }
        if (i + 2 >= s.size())
            throw RecordError(origin + ": truncated escape sequence");
        const int hi = hex_value(s[i + 1]);
        const int lo = hex_value(s[i + 2]);
        if (hi < 0 || lo < 0)
            throw RecordError(origin + ": bad escape sequence");
        out += static_cast<char>(hi * 16 + lo);
        i += 2;
    }
    return out;
}

bool parse_double(std::string_view s, double& out)
{
    const char* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, out);
    return res.ec == std::errc() && res.ptr == end;
}

} // namespace

Record& Record::set(std::string_view key, std::string value)
{
    if (!valid_key(key))
        throw RecordError("invalid record key '" + std::string(key) + "'");
    fields_[std::string(key)] = std::move(value);
    return *this;
}

Record& Record::set(std::string_view key, double value)
{
    return set(key, format_number(value));
}

Record& Record::set(std::string_view key, long long value)
{
    return set(key, std::to_string(value));
}

Record& Record::set(std::string_view key, std::span<const double> values)
{
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i)
            s += ',';
        s += format_number(values[i]);
    }
    return set(key, std::move(s));
}

Record& Record::set(std::string_view key, const Vec3& v)
{
    const double xs[3] = {v.x(), v.y(), v.z()};
    return set(key, std::span<const double>(xs));
}

void Record::fail(std::string_view key, std::string_view what) const
{
    std::string where = origin.empty() ? std::string("record") : origin;
    throw RecordError(where + ": field '" + std::string(key) + "' " + std::string(what));
}

const std::string& Record::text(std::string_view key) const
{
    const auto it = fields_.find(key);
    if (it == fields_.end())
        fail(key, "is missing");
    return it->second;
}

double Record::number(std::string_view key) const
{
    double v = 0.0;
    if (!parse_double(text(key), v) || !std::isfinite(v))
        fail(key, "is not a finite number");
    return v;
}

long long Record::integer(std::string_view key) const
{
    const std::string& s = text(key);
    long long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(key, "is not an integer");
    return v;
}

std::vector<double> Record::numbers(std::string_view key) const
{
    const std::string& s = text(key);
    std::vector<double> out;
    if (s.empty())
        return out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = s.find(',', start);
        const std::string_view item(s.data() + start, (comma == std::string::npos ? s.size() : comma) - start);
        double v = 0.0;
        if (!parse_double(item, v) || !std::isfinite(v))
            fail(key, "has a non-numeric list element");
        out.push_back(v);
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return out;
}

Vec3 Record::vec3(std::string_view key) const
{
    const auto v = numbers(key);
    if (v.size() != 3)
        fail(key, "must hold exactly 3 numbers");
    return {v[0], v[1], v[2]};
}

std::string format_number(double value)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

std::string format_record(const Record& record)
{
    std::string line;
    for (const auto& [key, value] : record.fields()) {
        if (!line.empty())
            line += ' ';
        line += key;
        line += ':';
        line += escape(value);
    }
    return line;
}

Record parse_record(std::string_view line, const std::string& origin)
{
    Record rec;
    rec.origin = origin;
    std::size_t pos = 0;
    while (pos < line.size()) {
        while (pos < line.size() && line[pos] == ' ')
            ++pos;
        if (pos >= line.size())
            break;
        std::size_t end = line.find(' ', pos);
        if (end == std::string_view::npos)
            end = line.size();
        const std::string_view token = line.substr(pos, end - pos);
        const std::size_t colon = token.find(':');
        if (colon == std::string_view::npos)
            throw RecordError(origin + ": token '" + std::string(token) + "' lacks ':'");
        const std::string_view key = token.substr(0, colon);
        if (!valid_key(key))
            throw RecordError(origin + ": invalid key '" + std::string(key) + "'");
        if (rec.has(key))
            throw RecordError(origin + ": duplicate key '" + std::string(key) + "'");
        rec.set(key, unescape(token.substr(colon + 1), origin));
        pos = end;
    }
    return rec;
}

std::vector<Record> parse_records(std::string_view text, const std::string& origin)
{
    std::vector<Record> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos)
            end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        const auto first = line.find_first_not_of(' ');
        if (first != std::string_view::npos && line[first] != '#')
            out.push_back(parse_record(line, origin + ":" + std::to_string(line_no)));
        if (end == text.size())
            break;
        pos = end + 1;
    }
    return out;
}

std::string format_records(std::span<const Record> records)
{
    std::string out;
    for (const Record& r : records) {
        out += format_record(r);
        out += '\n';
    }
    return out;
}

std::vector<Record> read_records(const std::filesystem::path& path)
{
    return parse_records(read_file(path), path.filename().string());
}

void write_records(const std::filesystem::path& path, std::span<const Record> records)
{
    write_file(path, format_records(records));
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw RecordError("missing file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw RecordError("cannot write file: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw RecordError("write failed: " + path.string());
}

} // namespace owd
