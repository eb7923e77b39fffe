#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cocoa/eval/ablation.hpp"
#include "json.hpp"

namespace cocoa::cli {

// Everything a subcommand needs besides its artifacts. train.seed is the
// master seed: dataset seed for gen-data and ablate, training seed otherwise.
struct RunConfig {
  eval::PipelineConfig pipeline;
  int seeds = 5;                 // ablate: seeds seed, seed+1, ...
  std::string variant = "full";  // GAN context: full | attribute-only

  std::uint64_t seed() const { return pipeline.train.seed; }
  int target_domain() const { return pipeline.benchmark.target_domain; }
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Unknown top-level keys are rejected.
void from_json(const nlohmann::json& j, RunConfig& c);

// Artifact names inside a run directory.
std::filesystem::path data_dir(const std::filesystem::path& out);
std::filesystem::path stage1_stem(const std::filesystem::path& out);
std::filesystem::path gan_stem(const std::filesystem::path& out, const RunConfig& c);
std::filesystem::path synthetic_csv(const std::filesystem::path& out, const RunConfig& c);
std::filesystem::path classifier_stem(const std::filesystem::path& out, const RunConfig& c);

// min(hardware threads, COCOA_THREADS if set).
int worker_count();

// Parses argv, runs one subcommand and maps errors to exit codes:
// 0 ok, 1 usage / validation / format / dependency, 2 numeric or training failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace cocoa::cli
