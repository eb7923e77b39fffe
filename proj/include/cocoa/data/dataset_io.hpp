#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cocoa/data/benchmark.hpp"

namespace cocoa::data {

// Binary dataset file:
//   "CZBD" | u32 version (1) | u32 count | u16 side | u16 attribute dim
//   count x ( side*side f64 pixels | u16 class | u16 domain )
//   u32 CRC-32 of the record payload
// All integers and doubles little-endian.
inline constexpr char kDatasetMagic[4] = {'C', 'Z', 'B', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 16;

std::vector<std::uint8_t> encode_dataset(std::span<const DatasetExample> examples);
// Attributes are restored from the matrix, which must match the header's dim.
std::vector<DatasetExample> decode_dataset(std::span<const std::uint8_t> bytes, const AttributeMatrix& attributes);

void save_dataset(const std::filesystem::path& path, std::span<const DatasetExample> examples);
std::vector<DatasetExample> load_dataset(const std::filesystem::path& path, const AttributeMatrix& attributes);

// A dataset directory holds train/val/test files plus manifest.json with the
// split, the attribute matrix, the generating config and the master seed.
struct BenchmarkManifest {
  BenchmarkConfig config;
  std::uint64_t master_seed = 0;
  SplitSpec split;
  AttributeMatrix attributes;
};

void save_benchmark(const std::filesystem::path& dir, const Benchmark& benchmark, const BenchmarkConfig& config,
                    std::uint64_t master_seed);
BenchmarkManifest load_manifest(const std::filesystem::path& dir);
Benchmark load_benchmark(const std::filesystem::path& dir);

// Shared byte helpers for the binary formats.
std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cocoa::data
