#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace metafl {

// Deterministic pseudo-random stream. Independent units of work (client,
// round, local step, purpose) each get their own stream derived by hashing
// the identifiers into a single 64-bit seed, so any unit can be recomputed
// in isolation and results do not depend on scheduling or worker count.
//
// Distribution transforms are implemented here rather than taken from
// <random>: the std:: distributions are implementation-defined, and the
// gamma sampler must work in log space for Dirichlet concentrations down
// to ~1e-3 without underflow.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  // Hash-combines root and the path components into a fresh stream.
  static RngStream derive(std::uint64_t root,
                          std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64();

  double uniform();      // [0, 1)
  double uniform_pos();  // (0, 1), safe under log()

  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  double normal();  // standard normal, Box-Muller with cached spare

  // log of a Gamma(shape, 1) draw; finite for any shape > 0.
  double log_gamma(double shape);

  // Dirichlet(alpha) sampled in log space: tiny concentrations give
  // near-one-hot vectors instead of 0/0.
  std::vector<double> dirichlet(const std::vector<double>& alpha);

  // k distinct values from {0, ..., n-1} via partial Fisher-Yates.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// splitmix64 finalizer; the building block for stream derivation.
std::uint64_t mix64(std::uint64_t x);

// Purpose tags keep derived streams for different uses disjoint even when
// the other path components coincide.
enum class StreamPurpose : std::uint64_t {
  kInit = 1,
  kParticipation = 2,
  kGradBatch = 3,
  kHessBatch = 4,
  kEvalBatch = 5,
  kClientPmf = 6,
  kClientDraw = 7,
  kConstantProbe = 8,
};

inline std::uint64_t tag(StreamPurpose p) { return static_cast<std::uint64_t>(p); }

}  // namespace metafl
