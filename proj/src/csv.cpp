#include "sae/csv.hpp"

#include <cmath>
#include <limits>
#include <charconv>
#include <fstream>
#include <sstream>

#include "sae/error.hpp"

namespace sae {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::schema: return "schema error";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::consistency: return "consistency error";
    case ErrorKind::lookup: return "lookup error";
    case ErrorKind::domain: return "domain error";
    case ErrorKind::misuse: return "misuse error";
    case ErrorKind::numerical: return "numerical error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

}  // namespace sae

namespace sae::csv {

namespace {

Error schema_error(const std::string& message) {
  return Error(ErrorKind::schema, "csv", message);
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r'))
    --e;
  return std::string(s.substr(b, e - b));
}

// Splits one logical record starting at pos; handles quoted fields with
// embedded delimiters, doubled quotes and newlines.
std::vector<std::string> next_record(std::string_view text, std::size_t& pos,
                                     char delim) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  bool was_quoted = false;
  while (pos < text.size()) {
    char c = text[pos++];
    if (quoted) {
      if (c == '"') {
        if (pos < text.size() && text[pos] == '"') {
          current.push_back('"');
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == delim) {
      fields.push_back(was_quoted ? current : trim(current));
      current.clear();
      was_quoted = false;
    } else if (c == '\n') {
      break;
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(was_quoted ? current : trim(current));
  return fields;
}

bool blank(const std::vector<std::string>& fields) {
  for (const auto& f : fields)
    if (!f.empty()) return false;
  return true;
}

}  // namespace

Table::Table(std::string source, std::vector<std::string> header,
             std::vector<std::vector<std::string>> rows)
    : source_(std::move(source)),
      header_(std::move(header)),
      rows_(std::move(rows)) {}

std::optional<std::size_t> Table::find_column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (header_[i] == name) return i;
  return std::nullopt;
}

std::size_t Table::column(std::string_view name) const {
  auto idx = find_column(name);
  if (!idx)
    throw schema_error(source_ + ": missing column '" + std::string(name) +
                       "'");
  return *idx;
}

const std::string& Table::cell(std::size_t row, std::size_t col) const {
  return rows_.at(row).at(col);
}

double Table::number(std::size_t row, std::size_t col) const {
  auto v = optional_number(row, col);
  if (!v)
    throw schema_error(source_ + ": row " + std::to_string(row + 2) +
                       ", column '" + header_[col] + "' is empty");
  return *v;
}

std::optional<double> Table::optional_number(std::size_t row,
                                             std::size_t col) const {
  const std::string& s = cell(row, col);
  if (s.empty() || s == "NA") return std::nullopt;
  if (s == "inf" || s == "Inf") return std::numeric_limits<double>::infinity();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw schema_error(source_ + ": row " + std::to_string(row + 2) +
                       ", column '" + header_[col] + "': '" + s +
                       "' is not a number");
  return value;
}

long long Table::integer(std::size_t row, std::size_t col) const {
  const std::string& s = cell(row, col);
  long long value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw schema_error(source_ + ": row " + std::to_string(row + 2) +
                       ", column '" + header_[col] + "': '" + s +
                       "' is not an integer");
  return value;
}

Table parse(std::string_view text, std::string source, char delimiter) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF")
    text.remove_prefix(3);
  std::size_t pos = 0;
  std::vector<std::string> header;
  while (pos < text.size() && header.empty()) {
    auto rec = next_record(text, pos, delimiter);
    if (!blank(rec)) header = std::move(rec);
  }
  if (header.empty()) throw schema_error(source + ": no header row");
  std::vector<std::vector<std::string>> rows;
  while (pos < text.size()) {
    auto rec = next_record(text, pos, delimiter);
    if (blank(rec)) continue;
    if (rec.size() != header.size())
      throw schema_error(source + ": row " + std::to_string(rows.size() + 2) +
                         " has " + std::to_string(rec.size()) +
                         " fields, header has " +
                         std::to_string(header.size()));
    rows.push_back(std::move(rec));
  }
  return Table(std::move(source), std::move(header), std::move(rows));
}

Table read(const std::filesystem::path& path, char delimiter) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorKind::io, "csv", "cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string(), delimiter);
}

std::string format_number(double value) {
  if (std::isnan(value)) return "NA";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

Writer& Writer::field(std::string_view text) {
  if (!first_) out_ << delimiter_;
  first_ = false;
  bool needs_quotes = text.find_first_of("\"\n") != std::string_view::npos ||
                      text.find(delimiter_) != std::string_view::npos;
  if (!needs_quotes) {
    out_ << text;
    return *this;
  }
  out_ << '"';
  for (char c : text) {
    if (c == '"') out_ << '"';
    out_ << c;
  }
  out_ << '"';
  return *this;
}

Writer& Writer::field(double value) { return field(format_number(value)); }

Writer& Writer::field(long long value) {
  return field(std::string_view(std::to_string(value)));
}

Writer& Writer::empty() { return field(std::string_view()); }

void Writer::end_row() {
  out_ << '\n';
  first_ = true;
}

void Writer::row(const std::vector<std::string>& fields) {
  for (const auto& f : fields) field(std::string_view(f));
  end_row();
}

}  // namespace sae::csv
