#include "metafl/rng.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace metafl {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) : engine_(mix64(seed)) {}

RngStream RngStream::derive(std::uint64_t root,
                            std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(root);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p));
  return RngStream(h);
}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_pos() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::below: n must be > 0");
  std::uint64_t x, r;
  do {
    x = next_u64();
    r = x % n;
  } while (x - r > std::numeric_limits<std::uint64_t>::max() - (n - 1));
  return r;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = uniform_pos();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * 3.14159265358979323846 * u2;
  spare_normal_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

// Marsaglia-Tsang for shape >= 1; for shape < 1 the boost
// log G_a = log G_{a+1} + log(U)/a keeps everything finite in log space.
double RngStream::log_gamma(double shape) {
  if (!(shape > 0.0))
    throw std::invalid_argument("RngStream::log_gamma: shape must be > 0");
  double boost = 0.0;
  if (shape < 1.0) {
    boost = std::log(uniform_pos()) / shape;
    shape += 1.0;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_pos();
    if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v) + boost;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return std::log(d * v) + boost;
  }
}

std::vector<double> RngStream::dirichlet(const std::vector<double>& alpha) {
  if (alpha.empty())
    throw std::invalid_argument("RngStream::dirichlet: empty concentration");
  std::vector<double> lg(alpha.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    lg[i] = log_gamma(alpha[i]);
    mx = std::max(mx, lg[i]);
  }
  double sum = 0.0;
  for (double& v : lg) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : lg) v /= sum;
  return lg;
}

std::vector<int> RngStream::sample_without_replacement(int n, int k) {
  if (k < 0 || k > n)
    throw std::invalid_argument(
        "RngStream::sample_without_replacement: need 0 <= k <= n");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace metafl
