#include "metafl/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace metafl {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_constants(const TheoryConstants& c) {
  require(c.L >= 0 && c.B >= 0 && c.rho >= 0, "constants must be >= 0");
  require(c.sigma_G >= 0 && c.kappa_G >= 0 && c.sigma_H >= 0 && c.kappa_H >= 0,
          "noise constants must be >= 0");
  require(c.gamma_G >= 0 && c.gamma_H >= 0, "dispersion constants must be >= 0");
}

double ipow(double base, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

}  // namespace

double smoothness_LF(double L, double B, double rho, double alpha, int nu) {
  require(L >= 0 && B >= 0 && rho >= 0 && alpha >= 0, "constants must be >= 0");
  require(nu >= 1, "nu must be >= 1");
  const double op = 1.0 + alpha * L;
  double geo = 0.0;
  for (int l = 0; l < nu; ++l) geo += ipow(op, l);
  return L * ipow(op, 2 * nu) + B * alpha * rho * ipow(op, nu - 1) * geo;
}

ModelErrorBounds model_error_bounds(const TheoryConstants& c, double alpha,
                                    int nu, const std::vector<int>& grad_batches) {
  check_constants(c);
  require(alpha >= 0, "alpha must be >= 0");
  require(nu >= 0, "nu must be >= 0");
  require(static_cast<int>(grad_batches.size()) >= nu,
          "need a batch size for each of the " + std::to_string(nu) +
              " fine-tuning steps");
  for (int i = 0; i < nu; ++i)
    require(grad_batches[i] >= 1, "batch sizes must be >= 1");

  ModelErrorBounds out;
  out.h.assign(nu + 1, 0.0);
  out.h_prime.assign(nu + 1, 0.0);
  out.h_second.assign(nu + 1, 0.0);
  const double op = 1.0 + alpha * c.L;
  const double base1 = 2.0 + 2.0 * alpha * alpha * c.L * c.L;
  const double base2 = 8.0 + 64.0 * ipow(alpha, 4) * ipow(c.L, 4);

  for (int l = 1; l <= nu; ++l) {
    // h_l = a sG sum_{j=0}^{l-1} (1+aL)^j / sqrt(D_{l-1-j})
    double s = 0.0;
    for (int j = 0; j < l; ++j)
      s += ipow(op, j) / std::sqrt(static_cast<double>(grad_batches[l - 1 - j]));
    out.h[l] = alpha * c.sigma_G * s;

    // h'_l = a^2 sG^2 (2+2a^2L^2)^{l-1} / D_0
    //      + 2 a^2 sG^2 sum_{j=1}^{l-1} (2+2a^2L^2)^{l-j-1} / D_j
    double hp = alpha * alpha * c.sigma_G * c.sigma_G * ipow(base1, l - 1) /
                grad_batches[0];
    for (int j = 1; j < l; ++j)
      hp += 2.0 * alpha * alpha * c.sigma_G * c.sigma_G * ipow(base1, l - j - 1) /
            grad_batches[j];
    out.h_prime[l] = hp;

    // h''_l = a^4 (kG+3(D_0-1)sG^4)(8+64a^4L^4)^{l-1} / D_0^3
    //       + 64 a^4 sum_{j=1}^{l-1} (kG+3(D_j-1)sG^4)(8+64a^4L^4)^{l-j-1} / D_j^3
    const double s4 = ipow(c.sigma_G, 4);
    double hs = ipow(alpha, 4) * (c.kappa_G + 3.0 * (grad_batches[0] - 1) * s4) *
                ipow(base2, l - 1) / ipow(grad_batches[0], 3);
    for (int j = 1; j < l; ++j)
      hs += 64.0 * ipow(alpha, 4) *
            (c.kappa_G + 3.0 * (grad_batches[j] - 1) * s4) *
            ipow(base2, l - j - 1) / ipow(grad_batches[j], 3);
    out.h_second[l] = hs;
  }
  return out;
}

DirectionErrorBounds direction_error_bounds(const TheoryConstants& c,
                                            double alpha, int nu,
                                            const BatchPlan& plan) {
  check_constants(c);
  require(alpha >= 0, "alpha must be >= 0");
  require(nu >= 1, "nu must be >= 1");
  plan.validate(nu, /*needs_hessian=*/true);
  const ModelErrorBounds me =
      model_error_bounds(c, alpha, nu, plan.grad_sizes);
  const double op = 1.0 + alpha * c.L;
  const auto& Dp = plan.hess_sizes;

  // d_1 = a^2 sH^2 / D'_0; for l >= 2 the recursion is applied as stated
  // with leading index l:
  // d_l = 2 d_{l-1} (1 + aL + a sH / sqrt(D'_{l-1}))^2
  //     + 2 a^2 (1+aL)^{2l-2} (sH^2 / D'_{l-1} + rho^2 h'_{l-1})
  DirectionErrorBounds out;
  out.d.assign(nu + 1, 0.0);
  out.d[1] = alpha * alpha * c.sigma_H * c.sigma_H / Dp[0];
  for (int l = 2; l <= nu; ++l) {
    const double border =
        1.0 + alpha * c.L + alpha * c.sigma_H / std::sqrt(static_cast<double>(Dp[l - 1]));
    out.d[l] = 2.0 * out.d[l - 1] * border * border +
               2.0 * alpha * alpha * ipow(op, 2 * l - 2) *
                   (c.sigma_H * c.sigma_H / Dp[l - 1] +
                    c.rho * c.rho * me.h_prime[l - 1]);
  }

  // d'_1 = a^4 (kH + 3 (D'_0 - 1) sH^4) / D'_0^3; for l >= 2:
  // d'_l = 64 d'_{l-1} ((1+aL)^4 + a^4 m_{l-1})
  //      + 64 a^4 (1+aL)^{4l-4} (rho^4 h''_{l-1} + m_{l-1}),
  // with m_j = (kH + 3 (D'_j - 1) sH^4) / D'_j^3.
  const double sH4 = ipow(c.sigma_H, 4);
  out.d_prime.assign(nu + 1, 0.0);
  out.d_prime[1] =
      ipow(alpha, 4) * (c.kappa_H + 3.0 * (Dp[0] - 1) * sH4) / ipow(Dp[0], 3);
  for (int l = 2; l <= nu; ++l) {
    const double m =
        (c.kappa_H + 3.0 * (Dp[l - 1] - 1) * sH4) / ipow(Dp[l - 1], 3);
    out.d_prime[l] = 64.0 * out.d_prime[l - 1] * (ipow(op, 4) + ipow(alpha, 4) * m) +
                     64.0 * ipow(alpha, 4) * ipow(op, 4 * l - 4) *
                         (ipow(c.rho, 4) * me.h_second[l - 1] + m);
  }
  return out;
}

MomentBound meta_grad_moments_exact(const TheoryConstants& c, double alpha,
                                    int nu, const BatchPlan& plan) {
  check_constants(c);
  require(nu >= 1, "nu must be >= 1");
  plan.validate(nu, /*needs_hessian=*/true);
  const ModelErrorBounds me =
      model_error_bounds(c, alpha, nu, plan.grad_sizes);
  const double op = 1.0 + alpha * c.L;
  const auto& D = plan.grad_sizes;
  const DirectionErrorBounds de = direction_error_bounds(c, alpha, nu, plan);
  const std::vector<double>& d = de.d;
  const std::vector<double>& dp = de.d_prime;

  MomentBound out;
  double mid = 0.0;
  for (int j = 1; j < nu; ++j) mid += me.h[j];
  out.mu = ipow(op, nu) * (c.sigma_G / std::sqrt(static_cast<double>(D[nu])) +
                           c.L * me.h[nu]) +
           c.B * alpha * c.rho * ipow(op, nu - 1) * mid +
           std::sqrt(d[nu] * (c.sigma_G * c.sigma_G / D[nu] +
                              c.L * c.L * me.h_prime[nu]));
  out.sigma_sq =
      3.0 * ipow(op, 2 * nu) *
          (c.sigma_G * c.sigma_G / D[nu] + c.L * c.L * me.h_prime[nu]) +
      3.0 * c.B * c.B * d[nu] +
      6.0 * std::sqrt(2.0 * dp[nu] *
                      (fourth_moment_bound(c.kappa_G, c.sigma_G, D[nu]) +
                       ipow(c.L, 4) * me.h_second[nu]));
  return out;
}

MomentBound meta_grad_moments_fo(const TheoryConstants& c, double alpha,
                                 int nu, const BatchPlan& plan) {
  check_constants(c);
  require(nu >= 0, "nu must be >= 0");
  plan.validate(nu, /*needs_hessian=*/false);
  const ModelErrorBounds me =
      model_error_bounds(c, alpha, nu, plan.grad_sizes);
  const double op = ipow(1.0 + alpha * c.L, nu) + 1.0;
  const int Dn = plan.grad_sizes[nu];
  MomentBound out;
  out.mu = c.sigma_G / std::sqrt(static_cast<double>(Dn)) + c.L * me.h[nu] +
           c.B * op;
  out.sigma_sq = 2.0 * c.sigma_G * c.sigma_G / Dn +
                 2.0 * c.L * c.L * me.h_prime[nu] + 2.0 * c.B * c.B * op * op;
  return out;
}

double hf_probe_bias_q(const TheoryConstants& c, double alpha, double delta,
                       int nu) {
  require(nu >= 1, "nu must be >= 1");
  require(delta > 0, "delta must be > 0");
  double s = 0.0;
  for (int i = 0; i < nu; ++i) s += ipow(1.0 + alpha * c.L, nu + i - 1);
  return alpha * c.rho * delta * c.B * c.B * s;
}

MomentBound meta_grad_moments_hf(const TheoryConstants& c, double alpha,
                                 double delta, int nu, const BatchPlan& plan) {
  check_constants(c);
  require(nu >= 1, "nu must be >= 1");
  require(delta > 0, "delta must be > 0");
  plan.validate(nu, /*needs_hessian=*/true);
  const ModelErrorBounds me =
      model_error_bounds(c, alpha, nu, plan.grad_sizes);
  const auto& D = plan.grad_sizes;
  const auto& Dp = plan.hess_sizes;
  const double op = 1.0 + alpha * c.L;

  // p_0 and p'_0 carry the outer-gradient noise; each pullback step mixes in
  // the probe-pair noise at the anchor batch:
  // p_l  = (1+aL) p_{l-1} + (a/delta)(sG / sqrt(D'_{nu-l}) + L h_{nu-l})
  // p'_l = 3 p'_{l-1} (1 + a^2 L^2) + (3a^2 / 2 delta^2)(sG^2/D'_{nu-l} + 2 L^2 h'_{nu-l})
  double p = c.sigma_G / std::sqrt(static_cast<double>(D[nu])) + c.L * me.h[nu];
  double pp = c.sigma_G * c.sigma_G / D[nu] + c.L * c.L * me.h_prime[nu];
  for (int l = 1; l <= nu; ++l) {
    const int a = nu - l;
    const double pn =
        op * p + (alpha / delta) *
                     (c.sigma_G / std::sqrt(static_cast<double>(Dp[a])) +
                      c.L * me.h[a]);
    const double ppn = 3.0 * pp * (1.0 + alpha * alpha * c.L * c.L) +
                       (3.0 * alpha * alpha / (2.0 * delta * delta)) *
                           (c.sigma_G * c.sigma_G / Dp[a] +
                            2.0 * c.L * c.L * me.h_prime[a]);
    p = pn;
    pp = ppn;
  }
  const double q = hf_probe_bias_q(c, alpha, delta, nu);
  MomentBound out;
  out.mu = p + q;
  out.sigma_sq = 2.0 * pp + 2.0 * q * q;
  return out;
}

double similarity_gamma_F_sq(const TheoryConstants& c, double alpha, int nu) {
  check_constants(c);
  require(nu >= 1, "nu must be >= 1");
  const double op = 1.0 + alpha * c.L;
  double twos = 0.0;
  for (int l = 1; l < nu; ++l) twos += ipow(2.0, l);
  const double g = alpha * alpha * c.gamma_H * c.gamma_H * ipow(op, 2 * nu - 2) *
                   (ipow(2.0, nu - 1) + twos);
  return 15.0 * c.B * c.B * g +
         6.0 * c.gamma_G * c.gamma_G * ipow(op, 2 * nu) *
             (1.0 + alpha * alpha * c.L * c.L);
}

double fourth_moment_bound(double kappa, double sigma, int batch) {
  require(kappa >= 0 && sigma >= 0, "moments must be >= 0");
  require(batch >= 1, "batch must be >= 1");
  return (kappa + 3.0 * (batch - 1) * ipow(sigma, 4)) /
         ipow(static_cast<double>(batch), 3);
}

RhsTerms theorem_rhs(double f0_minus_fstar, double beta, int tau, int rounds,
                     double participation, int n_clients, double L_F,
                     double sigma_F_sq, double gamma_F_sq, double mu_F,
                     double big_o_constant) {
  require(f0_minus_fstar >= 0, "objective gap must be >= 0");
  require(beta > 0, "beta must be > 0");
  require(tau >= 1, "tau must be >= 1");
  require(rounds >= 1, "rounds must be >= 1");
  require(participation > 0 && participation <= 1.0,
          "participation must be in (0, 1]");
  require(n_clients >= 1, "n_clients must be >= 1");

  RhsTerms t;
  t.stepsize_hypothesis_ok = beta <= 1.0 / (10.0 * tau * L_F);
  t.init = 4.0 * f0_minus_fstar / (beta * tau * rounds);
  const double blf = beta * L_F;
  t.variance = big_o_constant * blf * (1.0 + blf * tau * (tau - 1)) * sigma_F_sq;
  const double sampling =
      (n_clients > 1 && participation < 1.0)
          ? (1.0 - participation) / (participation * (n_clients - 1))
          : 0.0;
  t.similarity =
      big_o_constant * blf * gamma_F_sq * (sampling + blf * tau * (tau - 1));
  t.bias = big_o_constant * mu_F * mu_F;
  t.total = t.init + t.variance + t.similarity + t.bias;
  return t;
}

BoundReport make_bound_report(const TheoryConstants& c, double alpha,
                              double beta, double delta, int tau, int rounds,
                              double participation, int n_clients,
                              int grad_batch, int hess_batch,
                              double f0_minus_fstar,
                              const std::vector<int>& nu_sweep,
                              double big_o_constant) {
  BoundReport r;
  r.constants = c;
  r.alpha = alpha;
  r.beta = beta;
  r.delta = delta;
  r.tau = tau;
  r.n_clients = n_clients;
  r.participation = participation;
  r.f0_minus_fstar = f0_minus_fstar;
  r.big_o_constant = big_o_constant;
  for (int nu : nu_sweep) {
    require(nu >= 1, "bound sweep requires nu >= 1");
    BoundReport::Row row;
    row.nu = nu;
    const BatchPlan plan = [&] {
      BatchPlan p;
      p.grad_sizes.assign(nu + 1, grad_batch);
      p.hess_sizes.assign(nu, hess_batch);
      return p;
    }();
    row.L_F = smoothness_LF(c.L, c.B, c.rho, alpha, nu);
    row.exact = meta_grad_moments_exact(c, alpha, nu, plan);
    row.fo = meta_grad_moments_fo(c, alpha, nu, plan);
    row.hf = meta_grad_moments_hf(c, alpha, delta, nu, plan);
    row.gamma_F_sq = similarity_gamma_F_sq(c, alpha, nu);
    row.f0_minus_fstar = f0_minus_fstar;
    row.rhs = theorem_rhs(f0_minus_fstar, beta, tau, rounds, participation,
                          n_clients, row.L_F, row.exact.sigma_sq,
                          row.gamma_F_sq, row.exact.mu, big_o_constant);
    r.sweep.push_back(row);
  }
  return r;
}

std::string bound_report_json(const BoundReport& r) {
  nlohmann::json j;
  j["constants"] = {
      {"L", r.constants.L},          {"B", r.constants.B},
      {"rho", r.constants.rho},      {"sigma_G", r.constants.sigma_G},
      {"kappa_G", r.constants.kappa_G}, {"sigma_H", r.constants.sigma_H},
      {"kappa_H", r.constants.kappa_H}, {"gamma_G", r.constants.gamma_G},
      {"gamma_H", r.constants.gamma_H},
      {"note", "empirical lower estimates from finitely many probes"}};
  j["hyperparams"] = {{"alpha", r.alpha},
                      {"beta", r.beta},
                      {"delta", r.delta},
                      {"tau", r.tau},
                      {"n_clients", r.n_clients},
                      {"participation", r.participation},
                      {"big_o_constant", r.big_o_constant}};
  j["sweep"] = nlohmann::json::array();
  for (const auto& row : r.sweep) {
    nlohmann::json e;
    e["nu"] = row.nu;
    e["smoothness"] = {{"L_F", row.L_F}};
    e["meta_gradient_moments"] = {
        {"exact", {{"mu_F", row.exact.mu}, {"sigma_F_sq", row.exact.sigma_sq}}},
        {"first_order", {{"mu_F", row.fo.mu}, {"sigma_F_sq", row.fo.sigma_sq}}},
        {"hessian_free", {{"mu_F", row.hf.mu}, {"sigma_F_sq", row.hf.sigma_sq}}}};
    e["similarity"] = {{"gamma_F_sq", row.gamma_F_sq}};
    e["objective_gap"] = row.f0_minus_fstar;
    e["stationarity"] = {{"init", row.rhs.init},
                         {"variance", row.rhs.variance},
                         {"similarity", row.rhs.similarity},
                         {"bias", row.rhs.bias},
                         {"total", row.rhs.total},
                         {"stepsize_hypothesis_ok", row.rhs.stepsize_hypothesis_ok}};
    j["sweep"].push_back(e);
  }
  return j.dump(2);
}

TheoryConstants estimate_constants(const ModelSpec& spec,
                                   const std::vector<ClientDataset>& clients,
                                   const ModelParams& anchor, int probes,
                                   std::uint64_t seed) {
  require(!clients.empty(), "estimate_constants: no clients");
  require(probes >= 2, "estimate_constants: need at least 2 probes");
  const int d = spec.param_dim();
  const int n = static_cast<int>(clients.size());

  RngStream stream = RngStream::derive(seed, {tag(StreamPurpose::kConstantProbe)});
  double norm_anchor = 0.0;
  for (double v : anchor.values) norm_anchor += v * v;
  const double radius = std::max(0.25, 0.25 * std::sqrt(norm_anchor));

  std::vector<ModelParams> points(probes, anchor);
  for (int p = 1; p < probes; ++p)
    for (double& v : points[p].values)
      v += radius * stream.normal() / std::sqrt(static_cast<double>(d));

  std::vector<Batch> train(n);
  for (int i = 0; i < n; ++i) train[i] = full_train_batch(clients[i]);

  TheoryConstants c;
  std::vector<Vector> probe_dirs(3, Vector(d));
  for (auto& dir : probe_dirs) {
    double nn = 0.0;
    for (double& v : dir) {
      v = stream.normal();
      nn += v * v;
    }
    nn = std::sqrt(nn);
    for (double& v : dir) v /= nn;
  }

  std::vector<std::vector<Vector>> grads(probes, std::vector<Vector>(n));
  for (int p = 0; p < probes; ++p) {
    Vector mean(d, 0.0);
    for (int i = 0; i < n; ++i) {
      grads[p][i] = grad(spec, points[p], train[i]);
      double nn = 0.0;
      for (int k = 0; k < d; ++k) {
        mean[k] += grads[p][i][k];
        nn += grads[p][i][k] * grads[p][i][k];
      }
      c.B = std::max(c.B, std::sqrt(nn));
    }
    for (double& v : mean) v /= n;
    double disp = 0.0;
    for (int i = 0; i < n; ++i) {
      double nn = 0.0;
      for (int k = 0; k < d; ++k) {
        const double dv = grads[p][i][k] - mean[k];
        nn += dv * dv;
      }
      disp += nn;
    }
    c.gamma_G = std::max(c.gamma_G, std::sqrt(disp / n));
  }

  // L from secant ratios between probe pairs plus power iteration on the
  // Hessian at each probe (exact spectral norm for the quadratic model)
  for (int p = 0; p < probes; ++p) {
    for (int q = p + 1; q < probes; ++q) {
      double dist = 0.0;
      for (int k = 0; k < d; ++k) {
        const double dv = points[p].values[k] - points[q].values[k];
        dist += dv * dv;
      }
      dist = std::sqrt(dist);
      if (dist <= 0.0) continue;
      for (int i = 0; i < n; ++i) {
        double diff = 0.0;
        for (int k = 0; k < d; ++k) {
          const double dv = grads[p][i][k] - grads[q][i][k];
          diff += dv * dv;
        }
        c.L = std::max(c.L, std::sqrt(diff) / dist);
      }
    }
    for (int i = 0; i < n; ++i) {
      Vector v = probe_dirs[0];
      double lam = 0.0;
      for (int it = 0; it < 60; ++it) {
        Vector hv = hvp(spec, points[p], v, train[i]);
        double nn = 0.0;
        for (double x : hv) nn += x * x;
        nn = std::sqrt(nn);
        if (nn <= 1e-300) break;
        lam = nn;
        for (int k = 0; k < d; ++k) v[k] = hv[k] / nn;
      }
      c.L = std::max(c.L, lam);
    }
  }

  // rho and gamma_H from Hessian-vector products along fixed directions
  for (const Vector& dir : probe_dirs) {
    for (int p = 0; p < probes; ++p) {
      Vector mean_hv(d, 0.0);
      std::vector<Vector> hvs(n);
      for (int i = 0; i < n; ++i) {
        hvs[i] = hvp(spec, points[p], dir, train[i]);
        for (int k = 0; k < d; ++k) mean_hv[k] += hvs[i][k];
      }
      for (double& v : mean_hv) v /= n;
      double disp = 0.0;
      for (int i = 0; i < n; ++i) {
        double nn = 0.0;
        for (int k = 0; k < d; ++k) {
          const double dv = hvs[i][k] - mean_hv[k];
          nn += dv * dv;
        }
        disp += nn;
      }
      c.gamma_H = std::max(c.gamma_H, std::sqrt(disp / n));
      for (int q = p + 1; q < probes; ++q) {
        double dist = 0.0;
        for (int k = 0; k < d; ++k) {
          const double dv = points[p].values[k] - points[q].values[k];
          dist += dv * dv;
        }
        dist = std::sqrt(dist);
        if (dist <= 0.0) continue;
        for (int i = 0; i < n; ++i) {
          const Vector hq = hvp(spec, points[q], dir, train[i]);
          double diff = 0.0;
          for (int k = 0; k < d; ++k) {
            const double dv = hvs[i][k] - hq[k];
            diff += dv * dv;
          }
          c.rho = std::max(c.rho, std::sqrt(diff) / dist);
        }
      }
    }
  }

  // per-sample gradient noise moments on each client's train split
  for (int p = 0; p < probes; ++p) {
    for (int i = 0; i < n; ++i) {
      const Batch& full = train[i];
      const Vector& mean_g = grads[p][i];
      double m2 = 0.0, m4 = 0.0;
      for (int s = 0; s < full.size(); ++s) {
        Batch one;
        one.inputs = Matrix(1, full.inputs.cols);
        for (int k = 0; k < full.inputs.cols; ++k)
          one.inputs.at(0, k) = full.inputs.at(s, k);
        one.labels = {full.labels[s]};
        const Vector gs = grad(spec, points[p], one);
        double nn = 0.0;
        for (int k = 0; k < d; ++k) {
          const double dv = gs[k] - mean_g[k];
          nn += dv * dv;
        }
        m2 += nn;
        m4 += nn * nn;
      }
      m2 /= full.size();
      m4 /= full.size();
      c.sigma_G = std::max(c.sigma_G, std::sqrt(m2));
      c.kappa_G = std::max(c.kappa_G, m4);
    }
  }

  // per-sample Hessian noise via Frobenius norms (dominates the operator
  // norm); dense per-sample Hessians, so desk-scale dimensions only
  if (d <= kDenseHessianCap) {
    for (int p = 0; p < std::min(probes, 2); ++p) {
      for (int i = 0; i < n; ++i) {
        const Batch& full = train[i];
        const Matrix mean_h = dense_hessian(spec, points[p], full);
        double m2 = 0.0, m4 = 0.0;
        for (int s = 0; s < full.size(); ++s) {
          Batch one;
          one.inputs = Matrix(1, full.inputs.cols);
          for (int k = 0; k < full.inputs.cols; ++k)
            one.inputs.at(0, k) = full.inputs.at(s, k);
          one.labels = {full.labels[s]};
          const Matrix hs = dense_hessian(spec, points[p], one);
          double fro = 0.0;
          for (std::size_t k = 0; k < hs.data.size(); ++k) {
            const double dv = hs.data[k] - mean_h.data[k];
            fro += dv * dv;
          }
          m2 += fro;
          m4 += fro * fro;
        }
        m2 /= full.size();
        m4 /= full.size();
        c.sigma_H = std::max(c.sigma_H, std::sqrt(m2));
        c.kappa_H = std::max(c.kappa_H, m4);
      }
    }
  } else {
    // directional fallback: E ||(H_s - H) v||^2 along unit probes
    for (const Vector& dir : probe_dirs) {
      for (int i = 0; i < n; ++i) {
        const Batch& full = train[i];
        const Vector mean_hv = hvp(spec, points[0], dir, full);
        double m2 = 0.0, m4 = 0.0;
        for (int s = 0; s < full.size(); ++s) {
          Batch one;
          one.inputs = Matrix(1, full.inputs.cols);
          for (int k = 0; k < full.inputs.cols; ++k)
            one.inputs.at(0, k) = full.inputs.at(s, k);
          one.labels = {full.labels[s]};
          const Vector hs = hvp(spec, points[0], dir, one);
          double nn = 0.0;
          for (int k = 0; k < d; ++k) {
            const double dv = hs[k] - mean_hv[k];
            nn += dv * dv;
          }
          m2 += nn;
          m4 += nn * nn;
        }
        m2 /= full.size();
        m4 /= full.size();
        c.sigma_H = std::max(c.sigma_H, std::sqrt(m2));
        c.kappa_H = std::max(c.kappa_H, m4);
      }
    }
  }
  return c;
}

}  // namespace metafl
