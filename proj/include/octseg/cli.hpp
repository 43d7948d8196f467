#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "octseg/data.hpp"
#include "octseg/model.hpp"
#include "octseg/preprocess.hpp"
#include "octseg/train.hpp"

namespace octseg::cli {

/// Fully resolved training run: defaults, then the config file, then flags.
struct RunConfig {
  std::filesystem::path data_root;
  std::optional<std::filesystem::path> split_file;
  std::optional<SplitCounts> split_counts;
  std::uint64_t split_seed = 0;
  TransformSpec transform;
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path out_dir;
  BitDepth bit_depth = BitDepth::k8;
  std::optional<std::filesystem::path> weights;
};

nlohmann::json to_json(const RunConfig& config);
/// Overlays the keys present in `j` onto `config`.
void merge_json(const nlohmann::json& j, RunConfig& config);

/// Default volume counts: 21/6/3 for 30 volumes, otherwise roughly 70/20/10
/// with at least one volume per part.
SplitCounts default_split_counts(std::size_t n_volumes);

/// Runs one command line (without the program name). Returns the process
/// exit code; messages go to `out` and `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace octseg::cli
