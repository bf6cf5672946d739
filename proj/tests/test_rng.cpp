#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "metafl/rng.hpp"

using namespace metafl;

TEST_CASE("same seed gives the same sequence") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  RngStream a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
  CHECK(same == 0);
}

TEST_CASE("derive is a pure function of root and path") {
  RngStream a = RngStream::derive(7, {1, 2, 3});
  RngStream b = RngStream::derive(7, {1, 2, 3});
  CHECK(a.next_u64() == b.next_u64());
  RngStream c = RngStream::derive(7, {1, 2, 4});
  RngStream d = RngStream::derive(8, {1, 2, 3});
  const std::uint64_t va = RngStream::derive(7, {1, 2, 3}).next_u64();
  CHECK(va != c.next_u64());
  CHECK(va != d.next_u64());
}

TEST_CASE("purpose tags separate otherwise identical paths") {
  RngStream a = RngStream::derive(5, {tag(StreamPurpose::kGradBatch), 1});
  RngStream b = RngStream::derive(5, {tag(StreamPurpose::kHessBatch), 1});
  CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("mix64 has no trivial fixed points in small inputs") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const std::uint64_t m = mix64(i);
    CHECK(m != i);
    seen.insert(m);
  }
  CHECK(seen.size() == 1000);
}

TEST_CASE("uniform stays in [0,1) and uniform_pos in (0,1)") {
  RngStream s(9);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = s.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
  for (int i = 0; i < 10000; ++i) {
    const double u = s.uniform_pos();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    CHECK(std::isfinite(std::log(u)));
  }
}

TEST_CASE("below covers the range roughly uniformly") {
  RngStream s(11);
  const std::uint64_t n = 7;
  std::vector<int> counts(n, 0);
  const int draws = 70000;
  for (int i = 0; i < draws; ++i) {
    const std::uint64_t v = s.below(n);
    REQUIRE(v < n);
    ++counts[v];
  }
  const double expect = draws / static_cast<double>(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    CHECK(counts[k] > 0.9 * expect);
    CHECK(counts[k] < 1.1 * expect);
  }
}

TEST_CASE("normal has the right first two moments") {
  RngStream s(13);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = s.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("log_gamma matches the gamma mean at moderate shape") {
  RngStream s(17);
  const int n = 200000;
  const double shape = 3.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(s.log_gamma(shape));
  CHECK(std::abs(sum / n - shape) < 0.05);
}

TEST_CASE("log_gamma is finite down to tiny shapes") {
  RngStream s(19);
  double sum = 0.0;
  for (int i = 0; i < 50000; ++i) {
    const double lg = s.log_gamma(0.001);
    REQUIRE(!std::isnan(lg));
    REQUIRE(lg < 1e300);
    sum += std::exp(lg);  // may underflow to 0, must not be nan
  }
  CHECK(std::isfinite(sum));
  CHECK(std::abs(sum / 50000 - 0.001) < 0.005);
}

TEST_CASE("dirichlet draws are simplex points") {
  RngStream s(23);
  for (int rep = 0; rep < 200; ++rep) {
    const auto p = s.dirichlet({0.5, 1.5, 2.0, 0.7});
    REQUIRE(p.size() == 4);
    double total = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("tiny concentration gives near one-hot mixtures") {
  RngStream s(29);
  const std::vector<double> alpha(10, 0.001);
  double mean_max = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto p = s.dirichlet(alpha);
    mean_max += *std::max_element(p.begin(), p.end());
  }
  CHECK(mean_max / 200 > 0.95);
}

TEST_CASE("large concentration gives near uniform mixtures") {
  RngStream s(31);
  const std::vector<double> alpha(5, 200.0);
  for (int rep = 0; rep < 50; ++rep) {
    const auto p = s.dirichlet(alpha);
    for (double v : p) CHECK(v == doctest::Approx(0.2).epsilon(0.5));
  }
}

TEST_CASE("sample_without_replacement yields distinct in-range values") {
  RngStream s(37);
  for (int rep = 0; rep < 100; ++rep) {
    const auto picks = s.sample_without_replacement(20, 7);
    REQUIRE(picks.size() == 7);
    std::set<int> uniq(picks.begin(), picks.end());
    CHECK(uniq.size() == 7);
    for (int v : picks) {
      CHECK(v >= 0);
      CHECK(v < 20);
    }
  }
  const auto all = s.sample_without_replacement(6, 6);
  std::set<int> uniq(all.begin(), all.end());
  CHECK(uniq.size() == 6);
}

TEST_CASE("every index is reachable by the sampler") {
  RngStream s(41);
  std::vector<int> hits(10, 0);
  for (int rep = 0; rep < 2000; ++rep)
    for (int v : s.sample_without_replacement(10, 3)) ++hits[v];
  for (int k = 0; k < 10; ++k) {
    CHECK(hits[k] > 400);
    CHECK(hits[k] < 800);
  }
}
