#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "metafl/bounds.hpp"
#include "metafl/simulator.hpp"

namespace metafl {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kCifarRootEnv = "METAFL_CIFAR_ROOT";

struct DatasetSection {
  std::string kind = "synthetic";  // synthetic | cifar10 | cifar100
  std::string path;                // cifar directory; env var fills when empty
  int features = 16;
  int classes = 10;
  double cluster_spread = 0.25;
  int samples = 20000;
  std::uint64_t seed = 1;
  PartitionConfig partition;
};

struct ModelSection {
  std::string kind = "mlp";  // mlp | quadratic
  std::vector<int> hidden = {32};
  int quad_dim = 8;  // quadratic model: random SPD spectrum in [eig_min, eig_max]
  double eig_min = 0.25;
  double eig_max = 1.0;
  std::uint64_t quad_seed = 7;
};

struct FederationSection {
  int rounds = 10;
  double participation = 1.0;
  int tau = 1;
  double alpha = 0.01;
  double beta = 0.001;
  int batch_size = 40;
  int hess_batch_size = 0;  // 0 -> batch_size
  int eval_nu = 0;
  int eval_every = 1;
  bool eval_stochastic = false;
  int eval_batch = 0;  // 0 -> batch_size
};

struct EngineScenario {
  std::string label;
  Engine mode = Engine::kExact;
  int nu = 1;
  double delta = 1e-3;
  int eval_nu = -1;  // -1 -> federation.eval_nu
};

struct TheorySection {
  bool enabled = false;
  int probes = 4;
  std::vector<int> nu_sweep = {1, 2, 3, 4};
  bool similarity_fallback = false;
  double big_o_constant = 1.0;
  std::uint64_t seed = 99;
};

struct OutputSection {
  std::string dir = "out";
  bool timing = true;  // false writes wall_ms as 0 for byte-reproducible files
};

struct ExperimentConfig {
  DatasetSection dataset;
  ModelSection model;
  FederationSection federation;
  std::vector<EngineScenario> engines;
  TheorySection theory;
  OutputSection output;
  std::vector<std::uint64_t> seeds = {1};
  int workers = 1;
};

// Strict parse: wrong types, out-of-range values and unknown keys all throw
// with the offending field path. Accepts either a bare config or a manifest
// produced by a previous run (the config is then taken from its "config" key).
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
std::string resolved_config_json(const ExperimentConfig& cfg);

std::shared_ptr<const MasterDataset> build_master(const DatasetSection& d);
ModelSpec build_model(const ModelSection& m, const MasterDataset& master);

struct CliOptions {
  std::string out_override;
  int workers = 0;  // 0 -> config value
  bool force = false;
  std::optional<double> target;  // compare threshold; default derived
};

// Exit codes: 0 success, 1 error, 2 refused to overwrite existing outputs.
int cmd_run(const std::string& config_path, const CliOptions& opt,
            std::ostream& out, std::ostream& err);
int cmd_compare(const std::vector<std::string>& metrics_files,
                const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_bounds(const std::string& config_path, const CliOptions& opt,
               std::ostream& out, std::ostream& err);

}  // namespace metafl
