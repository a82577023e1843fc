#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cali/models/models.hpp"
#include "cali/navsim/navsim.hpp"
#include "cali/planner/planner.hpp"
#include "cali/synthdata/synthdata.hpp"
#include "cali/trainer/trainer.hpp"
#include "json.hpp"

namespace cali::cli {

struct DataConfig {
  synthdata::DomainSpec spec = synthdata::default_spec();
  std::size_t n_source = 200;
  std::size_t n_target = 200;
  std::size_t n_eval = 64;  // held-out labelled target images
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

// The whole experiment description. `train.seed` and `sim.seed` are not part
// of the document; they come from the command-line seed.
struct RunConfig {
  DataConfig data;
  models::ArchitectureConfig arch;
  trainer::TrainConfig train;
  planner::PlannerConfig planner;
  navsim::SimConfig sim;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Missing keys keep their defaults; unknown keys and bad values throw
// ConfigError naming the key path (e.g. "train.lr_da").
RunConfig parse_run_config(const nlohmann::json& j);
// Throws IoError when the file cannot be read and ConfigError when it is not JSON.
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& config);

// Every key of the document with its default value, flattened to dotted paths.
std::vector<std::pair<std::string, std::string>> documented_keys();

// Sub-seeds expanded from the single command-line seed with derive_seed
// (splitmix64 of seed + stream * golden-ratio increment).
struct SeedPlan {
  std::uint64_t data = 0;   // stream 1: training source/target pair
  std::uint64_t eval = 0;   // stream 2: held-out target images
  std::uint64_t train = 0;  // stream 3: network init and batch order
  std::uint64_t sim = 0;    // stream 4: navigation worlds and texture noise
};
SeedPlan expand_seed(std::uint64_t seed);

struct ExperimentData {
  synthdata::Dataset source;
  synthdata::Dataset target;
  synthdata::Dataset eval;
};
ExperimentData make_experiment_data(const DataConfig& data, std::uint64_t seed);

// Runs the command line. Exit codes: 0 ok, 1 other failure, 2 configuration
// or usage error, 3 numeric abort, 4 I/O or format error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cali::cli
