#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sae::csv {

// A delimited text table with a header row. Fields are kept as strings;
// typed access goes through the helpers below so that every parse failure
// names the file, row and column.
class Table {
 public:
  Table() = default;
  Table(std::string source, std::vector<std::string> header,
        std::vector<std::vector<std::string>> rows);

  const std::string& source() const { return source_; }
  const std::vector<std::string>& header() const { return header_; }
  std::size_t row_count() const { return rows_.size(); }
  const std::vector<std::string>& row(std::size_t i) const { return rows_[i]; }

  std::optional<std::size_t> find_column(std::string_view name) const;
  // Throws a schema error naming the column when absent.
  std::size_t column(std::string_view name) const;

  const std::string& cell(std::size_t row, std::size_t col) const;
  double number(std::size_t row, std::size_t col) const;
  std::optional<double> optional_number(std::size_t row, std::size_t col) const;
  long long integer(std::size_t row, std::size_t col) const;

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

Table read(const std::filesystem::path& path, char delimiter = ',');
Table parse(std::string_view text, std::string source = "<memory>",
            char delimiter = ',');

// Shortest representation that parses back to the same double.
std::string format_number(double value);

class Writer {
 public:
  explicit Writer(std::ostream& out, char delimiter = ',')
      : out_(out), delimiter_(delimiter) {}

  Writer& field(std::string_view text);
  Writer& field(double value);
  Writer& field(long long value);
  Writer& field(int value) { return field(static_cast<long long>(value)); }
  Writer& field(std::size_t value) {
    return field(static_cast<long long>(value));
  }
  Writer& empty();
  void end_row();
  void row(const std::vector<std::string>& fields);

 private:
  std::ostream& out_;
  char delimiter_;
  bool first_ = true;
};

}  // namespace sae::csv
