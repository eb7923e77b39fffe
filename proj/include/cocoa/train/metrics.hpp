#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace cocoa::train {

struct MetricRow {
  int epoch = 0;
  std::string name;
  double value = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

// Per-epoch loss curves, written as `epoch,loss_name,value`.
class Metrics {
 public:
  void add(int epoch, std::string name, double value);
  const std::vector<MetricRow>& rows() const { return rows_; }
  // Most recent value logged under name; throws ValidationError if absent.
  double last(const std::string& name) const;
  std::vector<double> series(const std::string& name) const;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

  nlohmann::json to_json() const;
  static Metrics from_json(const nlohmann::json& j);

  friend bool operator==(const Metrics&, const Metrics&) = default;

 private:
  std::vector<MetricRow> rows_;
};

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace cocoa::train
