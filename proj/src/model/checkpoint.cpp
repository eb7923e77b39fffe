#include "cocoa/model/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "cocoa/data/dataset_io.hpp"
#include "cocoa/errors.hpp"

namespace cocoa::model {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr char kMagic[4] = {'C', 'Z', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 16;

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
  return v;
}

json read_manifest(const fs::path& stem) {
  const fs::path path = with_ext(stem, ".json");
  if (!fs::exists(path)) throw DependencyError("missing checkpoint '" + path.string() + "'");
  const auto bytes = data::read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest '" + path.string() + "': " + e.what());
  }
}

}  // namespace

bool checkpoint_exists(const fs::path& stem) {
  return fs::exists(with_ext(stem, ".json")) && fs::exists(with_ext(stem, ".bin"));
}

void save_checkpoint(const fs::path& stem, const std::string& stage, const json& meta,
                     std::span<const ad::ParameterSet* const> sets) {
  json entries = json::array();
  std::vector<double> values;
  std::size_t trainable = 0;
  for (const auto* set : sets) {
    for (const auto* p : set->all()) {
      entries.push_back({{"name", p->name},
                         {"shape", p->value.shape()},
                         {"trainable", p->trainable},
                         {"offset", values.size()}});
      values.insert(values.end(), p->value.storage().begin(), p->value.storage().end());
      if (p->trainable) trainable += p->value.numel();
    }
  }
  std::vector<std::uint8_t> blob(kMagic, kMagic + 4);
  put(blob, kVersion, 4);
  put(blob, values.size(), 8);
  for (double v : values) put(blob, std::bit_cast<std::uint64_t>(v), 8);
  const std::uint32_t crc = data::crc32_of(std::span<const std::uint8_t>(blob).subspan(kHeaderBytes));
  put(blob, crc, 4);

  const json manifest = {{"format", "cocoa-checkpoint"},
                         {"version", kVersion},
                         {"stage", stage},
                         {"meta", meta},
                         {"tensors", entries},
                         {"trainable_scalars", trainable},
                         {"values", values.size()},
                         {"crc32", crc}};
  const std::string text = manifest.dump(2) + "\n";
  data::write_file(with_ext(stem, ".bin"), blob);
  data::write_file(with_ext(stem, ".json"),
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

CheckpointInfo read_checkpoint_info(const fs::path& stem) {
  const json m = read_manifest(stem);
  try {
    CheckpointInfo info;
    info.stage = m.at("stage").get<std::string>();
    info.meta = m.value("meta", json::object());
    info.tensors = m.at("tensors").size();
    info.trainable_scalars = m.at("trainable_scalars").get<std::size_t>();
    return info;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest '" + with_ext(stem, ".json").string() + "': " + e.what());
  }
}

CheckpointInfo load_checkpoint(const fs::path& stem, const std::string& expected_stage,
                               std::span<ad::ParameterSet* const> sets) {
  const json m = read_manifest(stem);
  const fs::path bin_path = with_ext(stem, ".bin");
  if (!fs::exists(bin_path)) throw DependencyError("missing checkpoint '" + bin_path.string() + "'");
  const CheckpointInfo info = read_checkpoint_info(stem);
  if (info.stage != expected_stage) {
    throw DependencyError("checkpoint '" + stem.string() + "' holds stage '" + info.stage + "', expected '" +
                          expected_stage + "'");
  }

  const auto blob = data::read_file(bin_path);
  const auto fail = [&](const std::string& what) { return FormatError("checkpoint '" + bin_path.string() + "': " + what); };
  if (blob.size() < kHeaderBytes + 4 || std::memcmp(blob.data(), kMagic, 4) != 0) throw fail("bad magic bytes at offset 0");
  if (get(blob, 4, 4) != kVersion) throw fail("unsupported version at offset 4");
  const std::uint64_t count = get(blob, 8, 8);
  const std::size_t expected = kHeaderBytes + count * 8 + 4;
  if (blob.size() != expected) {
    throw fail("size " + std::to_string(blob.size()) + " does not match header (expected " +
               std::to_string(expected) + " bytes)");
  }
  const auto payload = std::span<const std::uint8_t>(blob).subspan(kHeaderBytes, count * 8);
  const auto stored = static_cast<std::uint32_t>(get(blob, expected - 4, 4));
  if (data::crc32_of(payload) != stored) throw fail("checksum mismatch for payload at offset 16");
  if (m.value("crc32", std::uint64_t{0}) != stored) throw fail("checksum does not match its manifest");

  std::vector<ad::Parameter*> targets;
  for (auto* set : sets)
    for (auto* p : set->all()) targets.push_back(p);
  const json& entries = m.at("tensors");
  if (entries.size() != targets.size()) {
    throw FormatError("checkpoint census mismatch: file has " + std::to_string(entries.size()) +
                      " tensors, model expects " + std::to_string(targets.size()));
  }
  std::size_t trainable = 0;
  std::vector<std::size_t> offsets;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const ad::Parameter& p = *targets[i];
    const json& e = entries[i];
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<ad::Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    if (name != p.name || shape != p.value.shape() || e.at("trainable").get<bool>() != p.trainable) {
      throw FormatError("checkpoint census mismatch at tensor " + std::to_string(i) + ": file has '" + name + "' " +
                        ad::shape_string(shape) + ", model expects '" + p.name + "' " +
                        ad::shape_string(p.value.shape()));
    }
    if (offset + p.value.numel() > count) throw fail("tensor '" + name + "' runs past the end of the payload");
    offsets.push_back(offset);
    if (p.trainable) trainable += p.value.numel();
  }
  if (trainable != info.trainable_scalars) {
    throw FormatError("checkpoint census mismatch: " + std::to_string(info.trainable_scalars) +
                      " trainable scalars recorded, model has " + std::to_string(trainable));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto& value = targets[i]->value;
    for (std::size_t k = 0; k < value.numel(); ++k) {
      value[k] = std::bit_cast<double>(get(payload, (offsets[i] + k) * 8, 8));
    }
  }
  return info;
}

}  // namespace cocoa::model
