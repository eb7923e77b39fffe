#include "cocoa/train/metrics.hpp"

#include <charconv>

#include "cocoa/data/dataset_io.hpp"
#include "cocoa/errors.hpp"

namespace cocoa::train {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void Metrics::add(int epoch, std::string name, double value) { rows_.push_back({epoch, std::move(name), value}); }

double Metrics::last(const std::string& name) const {
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it) {
    if (it->name == name) return it->value;
  }
  throw ValidationError("no metric named '" + name + "'");
}

std::vector<double> Metrics::series(const std::string& name) const {
  std::vector<double> out;
  for (const auto& r : rows_) {
    if (r.name == name) out.push_back(r.value);
  }
  return out;
}

std::string Metrics::to_csv() const {
  std::string out = "epoch,loss_name,value\n";
  for (const auto& r : rows_) out += std::to_string(r.epoch) + "," + r.name + "," + format_double(r.value) + "\n";
  return out;
}

void Metrics::write_csv(const std::filesystem::path& path) const {
  const std::string text = to_csv();
  data::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rows_) rows.push_back({r.epoch, r.name, r.value});
  return rows;
}

Metrics Metrics::from_json(const nlohmann::json& j) {
  Metrics m;
  for (const auto& r : j) m.add(r.at(0).get<int>(), r.at(1).get<std::string>(), r.at(2).get<double>());
  return m;
}

}  // namespace cocoa::train
