#pragma once

#include <cstdint>
#include <vector>

#include "metafl/data.hpp"
#include "metafl/local_update.hpp"
#include "metafl/model.hpp"

namespace metafl {

struct FedConfig {
  int n_clients = 0;          // N; must match the client list
  double participation = 1.0;  // r; floor(r N) clients per round
  int rounds = 0;              // K
  Engine engine = Engine::kExact;
  HessianApply hessian_apply = HessianApply::kAuto;
  HyperParams hp;

  int eval_nu = 0;             // fine-tuning steps applied before scoring
  bool eval_stochastic = false;  // full-batch fine-tuning unless set
  int eval_batch = 0;            // batch size when eval_stochastic
  int eval_every = 1;            // evaluate rounds k with k % eval_every == 0

  int workers = 1;
  std::uint64_t seed = 0;
};

struct RoundRecord {
  int round = 0;
  std::vector<int> participants;     // ascending; empty for the round-0 snapshot
  double mean_eval_accuracy = -1.0;  // -1 when evaluation was skipped
  std::uint64_t model_hash = 0;
  double wall_ms = 0.0;
};

struct SimState {
  ModelParams model;
  int round = 0;  // rounds completed
};

// Per-client accuracy after eval_nu fine-tuning steps on that client's train
// split, scored on its test split. Pure: repeated calls with equal inputs
// return equal results and no training stream advances.
std::vector<double> evaluate(const ModelSpec& spec, const ModelParams& model,
                             const std::vector<ClientDataset>& clients,
                             const FedConfig& cfg, int round);

// One server round: sample floor(r N) clients without replacement, run tau
// local updates on each from the current model, average the results exactly,
// evaluate. Advances state.round.
RoundRecord run_round(const ModelSpec& spec, SimState& state,
                      const std::vector<ClientDataset>& clients,
                      const FedConfig& cfg);

// Full run: record 0 is the evaluation of the freshly initialized model,
// records 1..K are training rounds.
std::vector<RoundRecord> run_experiment(const ModelSpec& spec,
                                        const std::vector<ClientDataset>& clients,
                                        const FedConfig& cfg);

std::uint64_t hash_params(const ModelParams& p);

}  // namespace metafl
