#include "cocoa/data/feature_csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cocoa/data/dataset_io.hpp"
#include "cocoa/errors.hpp"

namespace cocoa::data {
namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double(std::string_view cell, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
    throw ParseError("feature csv line " + std::to_string(line) + ": non-numeric cell '" + std::string(cell) + "'");
  }
  return v;
}

int parse_int(std::string_view cell, std::size_t line) {
  int v = 0;
  auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
    throw ParseError("feature csv line " + std::to_string(line) + ": non-integer cell '" + std::string(cell) + "'");
  }
  return v;
}

}  // namespace

std::string format_feature_records(std::span<const FeatureRecord> records, FeatureColumns columns) {
  const std::size_t h = records.empty() ? 0 : records.front().feature.size();
  std::string out;
  for (std::size_t k = 0; k < h; ++k) out += "feature_" + std::to_string(k) + ",";
  out += columns == FeatureColumns::domain ? "class_id,domain_id\n" : "class_id,parent_i,parent_j,lambda\n";
  for (const auto& r : records) {
    if (r.feature.size() != h) throw DimensionError("feature csv: ragged feature lengths");
    for (double v : r.feature) {
      out += format_double(v);
      out += ',';
    }
    out += std::to_string(r.class_id);
    if (columns == FeatureColumns::domain) {
      out += "," + std::to_string(r.domain_id) + "\n";
    } else {
      const Provenance p = r.provenance.value_or(Provenance{r.domain_id, r.domain_id, 1.0});
      out += "," + std::to_string(p.parent_i) + "," + std::to_string(p.parent_j) + "," + format_double(p.lambda) + "\n";
    }
  }
  return out;
}

void write_feature_records(const std::filesystem::path& path, std::span<const FeatureRecord> records,
                           FeatureColumns columns) {
  const std::string text = format_feature_records(records, columns);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<FeatureRecord> parse_feature_records(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw ParseError("feature csv line 1: missing header");
  const auto header = split_commas(line);
  std::size_t h = 0;
  while (h < header.size() && header[h] == "feature_" + std::to_string(h)) ++h;
  const std::vector<std::string_view> tail(header.begin() + static_cast<std::ptrdiff_t>(h), header.end());
  using V = std::vector<std::string_view>;
  const bool with_domain = tail == V{"class_id", "domain_id"} ||
                           tail == V{"class_id", "domain_id", "parent_i", "parent_j", "lambda"};
  const bool with_provenance = tail == V{"class_id", "parent_i", "parent_j", "lambda"} ||
                               tail == V{"class_id", "domain_id", "parent_i", "parent_j", "lambda"};
  if (!with_domain && !with_provenance) {
    throw ParseError("feature csv line 1: unrecognized header columns after feature_" + std::to_string(h));
  }

  std::vector<FeatureRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw ParseError("feature csv line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                       " columns, got " + std::to_string(cells.size()));
    }
    FeatureRecord r;
    r.feature.reserve(h);
    for (std::size_t k = 0; k < h; ++k) r.feature.push_back(parse_double(cells[k], lineno));
    std::size_t c = h;
    r.class_id = parse_int(cells[c++], lineno);
    if (with_domain) r.domain_id = parse_int(cells[c++], lineno);
    if (with_provenance) {
      Provenance p;
      p.parent_i = parse_int(cells[c++], lineno);
      p.parent_j = parse_int(cells[c++], lineno);
      p.lambda = parse_double(cells[c++], lineno);
      r.provenance = p;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<FeatureRecord> load_feature_records(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_feature_records(std::string(bytes.begin(), bytes.end()));
}

void attach_attributes(std::span<FeatureRecord> records, const AttributeMatrix& attributes) {
  for (auto& r : records) {
    auto a = attributes.row(r.class_id);
    r.attributes.assign(a.begin(), a.end());
  }
}

}  // namespace cocoa::data
