#include "cocoa/data/dataset_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cocoa/errors.hpp"
#include "json.hpp"

namespace cocoa::data {
namespace {

using nlohmann::json;

class ByteWriter {
 public:
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::size_t offset() const { return pos_; }
  std::uint16_t u16() { return static_cast<std::uint16_t>(take(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  double f64() { return std::bit_cast<double>(take(8)); }

 private:
  std::uint64_t take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw FormatError("dataset truncated at offset " + std::to_string(bytes_.size()) + " (needed " +
                        std::to_string(pos_ + n) + " bytes)");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

json split_to_json(const SplitSpec& s) {
  return {{"seen_classes", s.seen_classes},
          {"unseen_classes", s.unseen_classes},
          {"source_domains", s.source_domains},
          {"target_domain", s.target_domain}};
}

SplitSpec split_from_json(const json& j) {
  SplitSpec s;
  s.seen_classes = j.at("seen_classes").get<std::vector<int>>();
  s.unseen_classes = j.at("unseen_classes").get<std::vector<int>>();
  s.source_domains = j.at("source_domains").get<std::vector<int>>();
  s.target_domain = j.at("target_domain").get<int>();
  return s;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("write to '" + path.string() + "' failed");
}

std::vector<std::uint8_t> encode_dataset(std::span<const DatasetExample> examples) {
  const std::size_t side = examples.empty() ? kImageSide : examples.front().image.side();
  const std::size_t dim = examples.empty() ? kAttributeDim : examples.front().attributes.size();
  ByteWriter w;
  w.raw(kDatasetMagic, 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(examples.size()));
  w.u16(static_cast<std::uint16_t>(side));
  w.u16(static_cast<std::uint16_t>(dim));
  for (const auto& ex : examples) {
    if (ex.image.side() != side) throw DimensionError("dataset: mixed image sizes");
    for (double v : ex.image.pixels()) w.f64(v);
    w.u16(static_cast<std::uint16_t>(ex.class_id));
    w.u16(static_cast<std::uint16_t>(ex.domain_id));
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc =
      crc32_of(std::span<const std::uint8_t>(bytes).subspan(kDatasetHeaderBytes, bytes.size() - kDatasetHeaderBytes));
  w.u32(crc);
  return std::move(w.bytes());
}

std::vector<DatasetExample> decode_dataset(std::span<const std::uint8_t> bytes, const AttributeMatrix& attributes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0) {
    throw FormatError("dataset: bad magic bytes at offset 0");
  }
  ByteReader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version) + " at offset 4");
  }
  const std::uint32_t count = r.u32();
  const std::size_t side = r.u16();
  const std::size_t dim = r.u16();
  if (dim != attributes.dim()) {
    throw FormatError("dataset: attribute dim " + std::to_string(dim) + " at offset 14 does not match matrix (" +
                      std::to_string(attributes.dim()) + ")");
  }
  const std::size_t record = side * side * 8 + 4;
  const std::size_t expected = kDatasetHeaderBytes + static_cast<std::size_t>(count) * record + 4;
  if (bytes.size() < expected) {
    throw FormatError("dataset truncated at offset " + std::to_string(bytes.size()) + " (expected " +
                      std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) {
    throw FormatError("dataset has trailing bytes after offset " + std::to_string(expected));
  }
  const auto payload = bytes.subspan(kDatasetHeaderBytes, expected - kDatasetHeaderBytes - 4);
  ByteReader tail(bytes.subspan(expected - 4));
  const std::uint32_t stored = tail.u32();
  if (crc32_of(payload) != stored) {
    throw FormatError("dataset checksum mismatch for payload at offset " + std::to_string(kDatasetHeaderBytes) +
                      " (crc stored at offset " + std::to_string(expected - 4) + ")");
  }

  ByteReader p(payload);
  std::vector<DatasetExample> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::vector<double> px(side * side);
    for (auto& v : px) v = p.f64();
    DatasetExample ex;
    ex.image = Image(side, std::move(px));
    ex.class_id = p.u16();
    ex.domain_id = p.u16();
    if (static_cast<std::size_t>(ex.class_id) >= attributes.num_classes()) {
      throw FormatError("dataset: class id " + std::to_string(ex.class_id) + " at offset " +
                        std::to_string(kDatasetHeaderBytes + p.offset() - 4) + " has no attribute row");
    }
    auto a = attributes.row(ex.class_id);
    ex.attributes.assign(a.begin(), a.end());
    out.push_back(std::move(ex));
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, std::span<const DatasetExample> examples) {
  write_file(path, encode_dataset(examples));
}

std::vector<DatasetExample> load_dataset(const std::filesystem::path& path, const AttributeMatrix& attributes) {
  const auto bytes = read_file(path);
  try {
    return decode_dataset(bytes, attributes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_benchmark(const std::filesystem::path& dir, const Benchmark& b, const BenchmarkConfig& config,
                    std::uint64_t master_seed) {
  std::filesystem::create_directories(dir);
  save_dataset(dir / "train.czbd", b.train);
  save_dataset(dir / "val.czbd", b.val);
  save_dataset(dir / "test.czbd", b.test);
  json attrs = json::array();
  for (std::size_t i = 0; i < b.attributes.num_classes(); ++i) {
    auto r = b.attributes.row(static_cast<int>(i));
    attrs.push_back(std::vector<double>(r.begin(), r.end()));
  }
  json m = {{"format", "cocoa-benchmark"},
            {"version", 1},
            {"master_seed", master_seed},
            {"config",
             {{"train_per_cell", config.train_per_cell},
              {"val_per_cell", config.val_per_cell},
              {"test_per_cell", config.test_per_cell},
              {"target_domain", config.target_domain}}},
            {"split", split_to_json(b.split)},
            {"attributes", attrs},
            {"files", {{"train", "train.czbd"}, {"val", "val.czbd"}, {"test", "test.czbd"}}},
            {"sizes", {{"train", b.train.size()}, {"val", b.val.size()}, {"test", b.test.size()}}}};
  const std::string text = m.dump(2) + "\n";
  write_file(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

BenchmarkManifest load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw DependencyError("missing dataset manifest '" + path.string() + "'");
  const auto bytes = read_file(path);
  try {
    const json m = json::parse(bytes.begin(), bytes.end());
    BenchmarkManifest out;
    const auto& c = m.at("config");
    out.config.train_per_cell = c.at("train_per_cell").get<int>();
    out.config.val_per_cell = c.at("val_per_cell").get<int>();
    out.config.test_per_cell = c.at("test_per_cell").get<int>();
    out.config.target_domain = c.at("target_domain").get<int>();
    out.master_seed = m.at("master_seed").get<std::uint64_t>();
    out.split = split_from_json(m.at("split"));
    const auto rows = m.at("attributes").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw FormatError("manifest: empty attribute matrix");
    ad::Tensor t({rows.size(), rows.front().size()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != t.cols()) throw FormatError("manifest: ragged attribute matrix");
      std::copy(rows[i].begin(), rows[i].end(), t.row(i).begin());
    }
    out.attributes = AttributeMatrix(std::move(t));
    out.split.validate(out.attributes.num_classes());
    return out;
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
}

Benchmark load_benchmark(const std::filesystem::path& dir) {
  BenchmarkManifest m = load_manifest(dir);
  Benchmark b;
  b.attributes = m.attributes;
  b.split = m.split;
  for (const char* name : {"train.czbd", "val.czbd", "test.czbd"}) {
    if (!std::filesystem::exists(dir / name)) throw DependencyError("missing dataset file '" + (dir / name).string() + "'");
  }
  b.train = load_dataset(dir / "train.czbd", b.attributes);
  b.val = load_dataset(dir / "val.czbd", b.attributes);
  b.test = load_dataset(dir / "test.czbd", b.attributes);
  check_training_hygiene(b.train, b.split);
  check_training_hygiene(b.val, b.split);
  for (const auto& ex : b.test) {
    if (!b.split.is_unseen(ex.class_id) || ex.domain_id != b.split.target_domain) {
      throw LeakageError("test file contains an example outside unseen classes x target domain");
    }
  }
  return b;
}

}  // namespace cocoa::data
