#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "metafl/bounds.hpp"
#include "metafl/data.hpp"
#include "metafl/model.hpp"
#include "metafl/rng.hpp"

using namespace metafl;

namespace {

// Two fixed constant sets; every pinned number below was produced by an
// independent implementation of the same formulas.
TheoryConstants set_a() {
  TheoryConstants c;
  c.L = 2.0;
  c.B = 3.0;
  c.rho = 0.5;
  c.sigma_G = 1.5;
  c.kappa_G = 20.0;
  c.sigma_H = 2.5;
  c.kappa_H = 60.0;
  c.gamma_G = 1.5;
  c.gamma_H = 2.5;
  return c;
}

TheoryConstants set_b() {
  TheoryConstants c;
  c.L = 1.2;
  c.B = 2.0;
  c.rho = 0.8;
  c.sigma_G = 0.9;
  c.kappa_G = 6.0;
  c.sigma_H = 1.1;
  c.kappa_H = 9.0;
  c.gamma_G = 0.6;
  c.gamma_H = 0.4;
  return c;
}

BatchPlan plan_a() {
  BatchPlan p;
  p.grad_sizes = {10, 10, 10};
  p.hess_sizes = {10, 10};
  return p;
}

BatchPlan plan_b() {
  BatchPlan p;
  p.grad_sizes = {8, 12, 20, 16};
  p.hess_sizes = {6, 10, 14};
  return p;
}

void check_vec(const std::vector<double>& got, const std::vector<double>& want,
               double eps = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(eps));
}

}  // namespace

TEST_CASE("pinned smoothness constants") {
  CHECK(smoothness_LF(1, 1, 1, 0.1, 2) ==
        doctest::Approx(1.6951000000000005).epsilon(1e-14));
  CHECK(smoothness_LF(2, 3, 0.5, 0.05, 3) ==
        doctest::Approx(3.8435045000000017).epsilon(1e-14));
  CHECK_THROWS_AS(smoothness_LF(1, 1, 1, 0.1, 0), std::invalid_argument);
}

TEST_CASE("closed-form smoothness at one step") {
  // L (1+aL)^2 + B a rho, spelled out
  const double L = 1.7, B = 2.3, rho = 0.9, a = 0.04;
  const double want = L * (1 + a * L) * (1 + a * L) + B * a * rho;
  CHECK(smoothness_LF(L, B, rho, a, 1) == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("pinned path error bounds, set A") {
  const auto me = model_error_bounds(set_a(), 0.1, 2, plan_a().grad_sizes);
  check_vec(me.h, {0.0, 0.0474341649025257, 0.10435516278555654});
  check_vec(me.h_prime, {0.0, 0.0022500000000000007, 0.009180000000000004});
  check_vec(me.h_second, {0.0, 1.566875e-05, 0.0011297544800000004});
}

TEST_CASE("pinned path error bounds, set B") {
  const auto me = model_error_bounds(set_b(), 0.05, 3, plan_b().grad_sizes);
  check_vec(me.h, {0.0, 0.01590990257669732, 0.029854877788065743,
                   0.041708476354098745});
  check_vec(me.h_prime, {0.0, 0.00025312500000000004, 0.0008455725000000001,
                         0.0018997331220000004});
  check_vec(me.h_second, {0.0, 2.4143188476562505e-07, 8.33241922027639e-06,
                          6.883615000400919e-05});
}

TEST_CASE("first path error step is alpha sigma_G / sqrt(D)") {
  const auto c = set_a();
  const auto me = model_error_bounds(c, 0.1, 1, {25, 7});
  CHECK(me.h[1] == doctest::Approx(0.1 * c.sigma_G / 5.0).epsilon(1e-15));
}

TEST_CASE("pinned direction error recursions") {
  const auto da = direction_error_bounds(set_a(), 0.1, 2, plan_a());
  check_vec(da.d, {0.0, 0.006250000000000001, 0.03846603324512629});
  check_vec(da.d_prime, {0.0, 0.00011146875000000002, 0.029586933014350503});

  const auto db = direction_error_bounds(set_b(), 0.05, 3, plan_b());
  check_vec(db.d, {0.0, 0.0005041666666666669, 0.001851135895663544,
                   0.004825031631067496});
  check_vec(db.d_prime, {0.0, 8.958767361111114e-07, 9.68931428246478e-05,
                         0.007844183784080869});
}

TEST_CASE("first direction error step is (alpha sigma_H)^2 / D'") {
  const auto c = set_b();
  BatchPlan p;
  p.grad_sizes = {4, 4};
  p.hess_sizes = {9};
  const auto de = direction_error_bounds(c, 0.05, 1, p);
  CHECK(de.d[1] ==
        doctest::Approx(0.05 * 0.05 * c.sigma_H * c.sigma_H / 9.0).epsilon(1e-15));
}

TEST_CASE("pinned exact moments") {
  const auto ma = meta_grad_moments_exact(set_a(), 0.1, 2, plan_a());
  CHECK(ma.mu == doctest::Approx(1.0924690794356784).epsilon(1e-13));
  CHECK(ma.sigma_sq == doctest::Approx(3.2768477864856007).epsilon(1e-13));

  const auto mb = meta_grad_moments_exact(set_b(), 0.05, 3, plan_b());
  CHECK(mb.mu == doctest::Approx(0.3477486274076284).epsilon(1e-13));
  CHECK(mb.sigma_sq == doctest::Approx(0.3555412061410242).epsilon(1e-13));
}

TEST_CASE("pinned first-order moments") {
  const auto ma = meta_grad_moments_fo(set_a(), 0.1, 2, plan_a());
  CHECK(ma.mu == doctest::Approx(8.00305197459637).epsilon(1e-13));
  CHECK(ma.sigma_sq == doctest::Approx(107.68824).epsilon(1e-13));

  BatchPlan p0;
  p0.grad_sizes = {8};
  const auto mb = meta_grad_moments_fo(set_b(), 0.05, 0, p0);
  CHECK(mb.mu == doctest::Approx(4.318198051533947).epsilon(1e-13));
  CHECK(mb.sigma_sq == doctest::Approx(32.2025).epsilon(1e-13));
}

TEST_CASE("pinned hessian-free moments") {
  const auto ma = meta_grad_moments_hf(set_a(), 0.1, 1e-3, 2, plan_a());
  CHECK(ma.mu == doctest::Approx(116.72414520558145).epsilon(1e-13));
  CHECK(ma.sigma_sq == doctest::Approx(29499.8953771587).epsilon(1e-13));
  CHECK(hf_probe_bias_q(set_a(), 0.1, 1e-3, 2) ==
        doctest::Approx(0.001188).epsilon(1e-13));

  const auto mb = meta_grad_moments_hf(set_b(), 0.05, 0.01, 3, plan_b());
  CHECK(mb.mu == doctest::Approx(5.332619170773143).epsilon(1e-13));
  CHECK(mb.sigma_sq == doctest::Approx(72.48390915806722).epsilon(1e-13));
  CHECK(hf_probe_bias_q(set_b(), 0.05, 0.01, 3) ==
        doctest::Approx(0.005723348736000002).epsilon(1e-13));
}

TEST_CASE("probe bias is linear in the width") {
  const auto c = set_a();
  const double q1 = hf_probe_bias_q(c, 0.1, 1e-4, 3);
  const double q2 = hf_probe_bias_q(c, 0.1, 2e-4, 3);
  const double q3 = hf_probe_bias_q(c, 0.1, 7e-4, 3);
  CHECK(q2 == doctest::Approx(2.0 * q1).epsilon(1e-14));
  CHECK(q3 == doctest::Approx(7.0 * q1).epsilon(1e-14));
}

TEST_CASE("pinned similarity bound") {
  TheoryConstants c;
  c.L = 2.0;
  c.B = 3.0;
  c.gamma_G = 1.5;
  c.gamma_H = 2.5;
  CHECK(similarity_gamma_F_sq(c, 0.1, 1) ==
        doctest::Approx(28.655099999999997).epsilon(1e-13));
  CHECK(similarity_gamma_F_sq(c, 0.1, 3) ==
        doctest::Approx(216.88321536000004).epsilon(1e-13));
}

TEST_CASE("similarity fallback dominates the dispersions") {
  TheoryConstants c = set_a();
  c.gamma_G = 0.01;
  c.gamma_H = 0.02;
  const TheoryConstants f = c.with_similarity_fallback();
  CHECK(f.gamma_G == doctest::Approx(2.0 * c.B));
  CHECK(f.gamma_H == doctest::Approx(2.0 * c.L));
  CHECK(similarity_gamma_F_sq(f, 0.1, 2) > similarity_gamma_F_sq(c, 0.1, 2));
}

TEST_CASE("pinned fourth moment values") {
  CHECK(fourth_moment_bound(0, 1, 4) == doctest::Approx(0.140625).epsilon(1e-15));
  CHECK(fourth_moment_bound(5, 0, 1) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK_THROWS_AS(fourth_moment_bound(1, 1, 0), std::invalid_argument);
}

TEST_CASE("pinned stationarity guarantee") {
  const RhsTerms t = theorem_rhs(2.0, 0.01, 4, 100, 0.2, 50, 3.0, 5.0, 7.0, 0.2);
  CHECK(t.init == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(t.variance == doctest::Approx(0.204).epsilon(1e-14));
  CHECK(t.similarity == doctest::Approx(0.09274285714285713).epsilon(1e-14));
  CHECK(t.bias == doctest::Approx(0.04000000000000001).epsilon(1e-14));
  CHECK(t.total == doctest::Approx(2.3367428571428572).epsilon(1e-14));
  CHECK_FALSE(t.stepsize_hypothesis_ok);  // 0.01 > 1/(10*4*3)

  const RhsTerms ok = theorem_rhs(2.0, 0.008, 4, 100, 0.2, 50, 3.0, 5.0, 7.0, 0.2);
  CHECK(ok.stepsize_hypothesis_ok);
}

TEST_CASE("client sampling term vanishes at full participation") {
  const RhsTerms full = theorem_rhs(1.0, 0.001, 2, 10, 1.0, 20, 2.0, 1.0, 9.0, 0.0);
  const RhsTerms part = theorem_rhs(1.0, 0.001, 2, 10, 0.5, 20, 2.0, 1.0, 9.0, 0.0);
  CHECK(part.similarity > full.similarity);
  const RhsTerms single = theorem_rhs(1.0, 0.001, 2, 10, 0.5, 1, 2.0, 1.0, 9.0, 0.0);
  CHECK(std::isfinite(single.similarity));
  CHECK(std::isfinite(single.total));
}

TEST_CASE("the big-o constant scales everything except the init term") {
  const RhsTerms c1 = theorem_rhs(2.0, 0.01, 4, 100, 0.2, 50, 3.0, 5.0, 7.0, 0.2, 1.0);
  const RhsTerms c3 = theorem_rhs(2.0, 0.01, 4, 100, 0.2, 50, 3.0, 5.0, 7.0, 0.2, 3.0);
  CHECK(c3.init == doctest::Approx(c1.init));
  CHECK(c3.variance == doctest::Approx(3.0 * c1.variance));
  CHECK(c3.similarity == doctest::Approx(3.0 * c1.similarity));
  CHECK(c3.bias == doctest::Approx(3.0 * c1.bias));
}

TEST_CASE("every bound grows with the anticipated steps") {
  const TheoryConstants c = set_a();
  const double alpha = 0.1;
  double prev_lf = 0.0, prev_mu = 0.0, prev_var = 0.0, prev_gam = 0.0;
  double prev_fo_mu = 0.0, prev_hf_mu = 0.0;
  for (int nu = 1; nu <= 5; ++nu) {
    const BatchPlan plan = BatchPlan::uniform(nu, 10);
    const double lf = smoothness_LF(c.L, c.B, c.rho, alpha, nu);
    const auto ex = meta_grad_moments_exact(c, alpha, nu, plan);
    const auto fo = meta_grad_moments_fo(c, alpha, nu, plan);
    const auto hf = meta_grad_moments_hf(c, alpha, 1e-3, nu, plan);
    const double gam = similarity_gamma_F_sq(c, alpha, nu);
    CHECK(lf > prev_lf);
    CHECK(ex.mu > prev_mu);
    CHECK(ex.sigma_sq > prev_var);
    CHECK(fo.mu > prev_fo_mu);
    CHECK(hf.mu > prev_hf_mu);
    CHECK(gam > prev_gam);
    prev_lf = lf;
    prev_mu = ex.mu;
    prev_var = ex.sigma_sq;
    prev_fo_mu = fo.mu;
    prev_hf_mu = hf.mu;
    prev_gam = gam;
  }
}

TEST_CASE("estimated constants recover a quadratic's known geometry") {
  // On a data-independent quadratic the per-sample noise and the
  // cross-client dispersion must vanish, and L must find lambda_max.
  const int d = 6;
  RngStream s(300);
  Matrix a(d, d);
  for (int i = 0; i < d; ++i) a.at(i, i) = 0.3 + 0.7 * s.uniform();
  for (int r = 0; r < 20; ++r) {
    const int i = static_cast<int>(s.below(d));
    const int j = static_cast<int>(s.below(d));
    if (i == j) continue;
    const double th = 6.283185307179586 * s.uniform();
    const double co = std::cos(th), si = std::sin(th);
    for (int k = 0; k < d; ++k) {
      const double ai = a.at(i, k), aj = a.at(j, k);
      a.at(i, k) = co * ai - si * aj;
      a.at(j, k) = si * ai + co * aj;
    }
    for (int k = 0; k < d; ++k) {
      const double ai = a.at(k, i), aj = a.at(k, j);
      a.at(k, i) = co * ai - si * aj;
      a.at(k, j) = si * ai + co * aj;
    }
  }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double m = 0.5 * (a.at(i, j) + a.at(j, i));
      a.at(i, j) = m;
      a.at(j, i) = m;
    }

  // reference spectral norm by power iteration on the known matrix
  Vector v(d, 1.0);
  double lam = 0.0;
  for (int it = 0; it < 200; ++it) {
    v = mat_vec(a, v);
    lam = 0.0;
    for (double x : v) lam = std::max(lam, std::abs(x));
    for (double& x : v) x /= lam;
  }

  const ModelSpec spec = ModelSpec::quadratic(a, Vector(d, 0.0));
  auto master =
      std::make_shared<MasterDataset>(make_synthetic(3, 2, 0.3, 200, 301));
  PartitionConfig pc;
  pc.clients = 3;
  pc.samples_per_client = 30;
  pc.seed = 302;
  const auto clients = partition_dirichlet(master, pc);

  const ModelParams anchor = init_params(spec, 303);
  const TheoryConstants c = estimate_constants(spec, clients, anchor, 4, 304);
  CHECK(c.L == doctest::Approx(lam).epsilon(0.05));
  CHECK(c.rho <= 1e-6);
  CHECK(c.sigma_G <= 1e-10);
  CHECK(c.sigma_H <= 1e-10);
  CHECK(c.gamma_G <= 1e-10);
  CHECK(c.gamma_H <= 1e-10);
  CHECK(c.B > 0.0);
}

TEST_CASE("estimated constants are positive on a real classifier") {
  const ModelSpec spec = ModelSpec::mlp(4, {5}, 3);
  auto master =
      std::make_shared<MasterDataset>(make_synthetic(4, 3, 0.3, 900, 310));
  PartitionConfig pc;
  pc.clients = 3;
  pc.samples_per_client = 40;
  pc.dirichlet_alpha = 0.3;  // heterogeneous mixtures => real dispersion
  pc.seed = 311;
  const auto clients = partition_dirichlet(master, pc);
  const TheoryConstants c =
      estimate_constants(spec, clients, init_params(spec, 312), 3, 313);
  CHECK(c.L > 0.0);
  CHECK(c.B > 0.0);
  CHECK(c.rho > 0.0);
  CHECK(c.sigma_G > 0.0);
  CHECK(c.kappa_G > 0.0);
  CHECK(c.sigma_H > 0.0);
  CHECK(c.gamma_G > 0.0);
}

TEST_CASE("bound report covers the sweep and serializes") {
  const BoundReport r = make_bound_report(set_a(), 0.1, 0.001, 1e-3, 2, 50, 0.5,
                                          10, 20, 20, 1.5, {1, 2, 3});
  REQUIRE(r.sweep.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.sweep[i].nu == static_cast<int>(i) + 1);
    CHECK(r.sweep[i].rhs.total > 0.0);
    CHECK(r.sweep[i].f0_minus_fstar == doctest::Approx(1.5));
  }
  CHECK(r.sweep[2].L_F > r.sweep[0].L_F);

  const auto j = nlohmann::json::parse(bound_report_json(r));
  REQUIRE(j.contains("constants"));
  REQUIRE(j.contains("sweep"));
  REQUIRE(j["sweep"].size() == 3);
  CHECK(j["sweep"][0]["smoothness"]["L_F"].get<double>() ==
        doctest::Approx(r.sweep[0].L_F));
  CHECK(j["sweep"][1]["stationarity"]["total"].get<double>() ==
        doctest::Approx(r.sweep[1].rhs.total));
  CHECK(j["constants"]["L"].get<double>() == doctest::Approx(2.0));
}

TEST_CASE("formula arguments are validated") {
  CHECK_THROWS_AS(meta_grad_moments_exact(set_a(), 0.1, 0, plan_a()),
                  std::invalid_argument);
  CHECK_THROWS_AS(meta_grad_moments_hf(set_a(), 0.1, 0.0, 2, plan_a()),
                  std::invalid_argument);
  CHECK_THROWS_AS(theorem_rhs(-1.0, 0.01, 1, 1, 0.5, 2, 1, 1, 1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(theorem_rhs(1.0, 0.01, 1, 0, 0.5, 2, 1, 1, 1, 1),
                  std::invalid_argument);
  TheoryConstants neg = set_a();
  neg.sigma_G = -1.0;
  CHECK_THROWS_AS(model_error_bounds(neg, 0.1, 2, {4, 4, 4}),
                  std::invalid_argument);
}
