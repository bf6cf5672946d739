#include "metafl/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <stdexcept>
#include <thread>

namespace metafl {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_cfg(const FedConfig& cfg, std::size_t client_count) {
  require(cfg.n_clients >= 1, "n_clients must be >= 1");
  require(static_cast<std::size_t>(cfg.n_clients) == client_count,
          "n_clients " + std::to_string(cfg.n_clients) + " does not match " +
              std::to_string(client_count) + " client datasets");
  require(cfg.participation > 0.0 && cfg.participation <= 1.0,
          "participation must be in (0, 1]");
  const int m = static_cast<int>(std::floor(cfg.participation * cfg.n_clients));
  require(m >= 1, "participation * n_clients selects no client");
  require(cfg.hp.tau >= 1, "tau must be >= 1");
  require(cfg.eval_nu >= 0, "eval_nu must be >= 0");
  require(cfg.eval_every >= 1, "eval_every must be >= 1");
  require(cfg.workers >= 1, "workers must be >= 1");
  if (cfg.eval_stochastic)
    require(cfg.eval_batch >= 1, "eval_batch must be >= 1 when stochastic");
  if (cfg.engine != Engine::kFirstOrder)
    require(cfg.hp.nu >= 1,
            "nu = 0 runs through the curvature-free engine only");
}

// Static index striding keeps the work partition (and the result order)
// independent of timing; each job writes its own slot.
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  const int w = std::min(workers, n);
  if (w <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (int t = 0; t < w; ++t) {
    threads.emplace_back([&, t]() {
      try {
        for (int i = t; i < n; i += w) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

ModelParams client_contribution(const ModelSpec& spec, const ModelParams& start,
                                const ClientDataset& client,
                                const FedConfig& cfg, int round, int client_id) {
  ModelParams w = start;
  for (int t = 0; t < cfg.hp.tau; ++t) {
    StochasticBatchSource source(
        client, cfg.hp.plan,
        RngStream::derive(cfg.seed,
                          {static_cast<std::uint64_t>(round),
                           static_cast<std::uint64_t>(client_id),
                           static_cast<std::uint64_t>(t),
                           tag(StreamPurpose::kGradBatch)}),
        RngStream::derive(cfg.seed,
                          {static_cast<std::uint64_t>(round),
                           static_cast<std::uint64_t>(client_id),
                           static_cast<std::uint64_t>(t),
                           tag(StreamPurpose::kHessBatch)}));
    LocalUpdateTrace trace;
    switch (cfg.engine) {
      case Engine::kExact:
        trace = exact_local_update(spec, w, source, cfg.hp, cfg.hessian_apply);
        break;
      case Engine::kFirstOrder:
        trace = fo_local_update(spec, w, source, cfg.hp);
        break;
      case Engine::kHessianFree:
        trace = hf_local_update(spec, w, source, cfg.hp);
        break;
    }
    w = std::move(trace.updated);
  }
  return w;
}

}  // namespace

std::vector<double> evaluate(const ModelSpec& spec, const ModelParams& model,
                             const std::vector<ClientDataset>& clients,
                             const FedConfig& cfg, int round) {
  std::vector<double> acc(clients.size(), 0.0);
  parallel_for(static_cast<int>(clients.size()), cfg.workers, [&](int i) {
    const ClientDataset& client = clients[i];
    ModelParams w = model;
    // Streams are derived fresh per call, so evaluation is repeatable and
    // never advances training state.
    RngStream eval_stream = RngStream::derive(
        cfg.seed, {static_cast<std::uint64_t>(round),
                   static_cast<std::uint64_t>(i), tag(StreamPurpose::kEvalBatch)});
    for (int s = 0; s < cfg.eval_nu; ++s) {
      const Batch b = cfg.eval_stochastic
                          ? sample_batch(client, cfg.eval_batch, eval_stream)
                          : full_train_batch(client);
      const Vector g = grad(spec, w, b);
      for (std::size_t k = 0; k < w.values.size(); ++k)
        w.values[k] -= cfg.hp.alpha * g[k];
      check_finite(w.values, "evaluation fine-tuning step " + std::to_string(s + 1));
    }
    acc[i] = accuracy(spec, w, full_test_batch(client));
  });
  return acc;
}

RoundRecord run_round(const ModelSpec& spec, SimState& state,
                      const std::vector<ClientDataset>& clients,
                      const FedConfig& cfg) {
  check_cfg(cfg, clients.size());
  const auto t0 = std::chrono::steady_clock::now();
  const int round = state.round + 1;
  const int m = static_cast<int>(std::floor(cfg.participation * cfg.n_clients));

  RngStream pick = RngStream::derive(
      cfg.seed, {static_cast<std::uint64_t>(round), tag(StreamPurpose::kParticipation)});
  std::vector<int> participants = pick.sample_without_replacement(cfg.n_clients, m);
  std::sort(participants.begin(), participants.end());

  std::vector<ModelParams> results(m);
  parallel_for(m, cfg.workers, [&](int j) {
    const int id = participants[j];
    try {
      results[j] =
          client_contribution(spec, state.model, clients[id], cfg, round, id);
    } catch (const std::exception& e) {
      throw std::runtime_error("client " + std::to_string(id) + ", round " +
                               std::to_string(round) + ": " + e.what());
    }
  });

  // exact mean in fixed participant order, compensated to keep the result
  // independent of how the additions would otherwise associate
  ModelParams next = state.model;
  const std::size_t dim = next.values.size();
  for (std::size_t k = 0; k < dim; ++k) {
    double sum = 0.0, comp = 0.0;
    for (int j = 0; j < m; ++j) {
      const double y = results[j].values[k] - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    next.values[k] = sum / m;
  }
  check_finite(next.values, "aggregated model, round " + std::to_string(round));

  state.model = std::move(next);
  state.round = round;

  RoundRecord rec;
  rec.round = round;
  rec.participants = std::move(participants);
  rec.model_hash = hash_params(state.model);
  if (round % cfg.eval_every == 0 || round == cfg.rounds) {
    const std::vector<double> acc = evaluate(spec, state.model, clients, cfg, round);
    double s = 0.0;
    for (double a : acc) s += a;
    rec.mean_eval_accuracy = s / static_cast<double>(acc.size());
  }
  rec.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  return rec;
}

std::vector<RoundRecord> run_experiment(const ModelSpec& spec,
                                        const std::vector<ClientDataset>& clients,
                                        const FedConfig& cfg) {
  check_cfg(cfg, clients.size());
  require(cfg.rounds >= 0, "rounds must be >= 0");
  SimState state;
  state.model = init_params(spec, cfg.seed);
  state.round = 0;

  std::vector<RoundRecord> records;
  records.reserve(cfg.rounds + 1);

  const auto t0 = std::chrono::steady_clock::now();
  RoundRecord first;
  first.round = 0;
  first.model_hash = hash_params(state.model);
  const std::vector<double> acc = evaluate(spec, state.model, clients, cfg, 0);
  double s = 0.0;
  for (double a : acc) s += a;
  first.mean_eval_accuracy = s / static_cast<double>(acc.size());
  first.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
  records.push_back(std::move(first));

  for (int k = 0; k < cfg.rounds; ++k)
    records.push_back(run_round(spec, state, clients, cfg));
  return records;
}

std::uint64_t hash_params(const ModelParams& p) {
  // FNV-1a over the raw double bytes
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : p.values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace metafl
