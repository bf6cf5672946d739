#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metafl/data.hpp"
#include "metafl/local_update.hpp"
#include "metafl/model.hpp"

namespace metafl {

// Problem constants the guarantees are stated in. sigma/kappa are the
// second and fourth central moments of per-sample gradient and Hessian
// noise; gamma measures cross-client dispersion. Empirical estimates of
// these are lower estimates (maxima over finitely many probes).
struct TheoryConstants {
  double L = 0.0;        // gradient Lipschitz constant
  double B = 0.0;        // gradient norm bound
  double rho = 0.0;      // Hessian Lipschitz constant
  double sigma_G = 0.0;  // per-sample gradient noise, sqrt of 2nd moment
  double kappa_G = 0.0;  // per-sample gradient noise, 4th moment
  double sigma_H = 0.0;
  double kappa_H = 0.0;
  double gamma_G = 0.0;  // cross-client gradient dispersion
  double gamma_H = 0.0;  // cross-client Hessian dispersion

  // Coarse substitutes that always dominate the dispersions.
  TheoryConstants with_similarity_fallback() const {
    TheoryConstants c = *this;
    c.gamma_G = 2.0 * c.B;
    c.gamma_H = 2.0 * c.L;
    return c;
  }
};

// Smoothness constant of the post-fine-tuning objective:
// L (1+aL)^{2 nu} + B a rho (1+aL)^{nu-1} sum_{l=0}^{nu-1} (1+aL)^l.
double smoothness_LF(double L, double B, double rho, double alpha, int nu);

// Accumulated fine-tuning path error. Entry l covers the model after l
// steps; entry 0 is exactly zero. h bounds the first moment, h_prime the
// second, h_second the fourth. grad_batches holds the per-step batch sizes
// D_0..D_{nu-1} (the outer-gradient size is not used here).
struct ModelErrorBounds {
  std::vector<double> h;
  std::vector<double> h_prime;
  std::vector<double> h_second;
};
ModelErrorBounds model_error_bounds(const TheoryConstants& c, double alpha,
                                    int nu, const std::vector<int>& grad_batches);

struct MomentBound {
  double mu = 0.0;        // bias bound
  double sigma_sq = 0.0;  // variance bound
};

// Error accumulated by the stochastic curvature factors of the exact rule.
// Entry l covers the direction after pulling back through l factors: d bounds
// the second moment, d_prime the fourth. Entry 0 is exactly zero and
// d[1] = alpha^2 sigma_H^2 / D'_0.
struct DirectionErrorBounds {
  std::vector<double> d;
  std::vector<double> d_prime;
};
DirectionErrorBounds direction_error_bounds(const TheoryConstants& c,
                                            double alpha, int nu,
                                            const BatchPlan& plan);

// Bias/variance of the exact stochastic rule. The d/d' recursions are
// evaluated stepwise exactly as stated, no algebraic re-closing.
MomentBound meta_grad_moments_exact(const TheoryConstants& c, double alpha,
                                    int nu, const BatchPlan& plan);

// Curvature-free rule; valid for nu >= 0.
MomentBound meta_grad_moments_fo(const TheoryConstants& c, double alpha,
                                 int nu, const BatchPlan& plan);

// Symmetric-difference rule. The probe-width term q is linear in delta.
MomentBound meta_grad_moments_hf(const TheoryConstants& c, double alpha,
                                 double delta, int nu, const BatchPlan& plan);
double hf_probe_bias_q(const TheoryConstants& c, double alpha, double delta,
                       int nu);

// Cross-client dispersion of the post-fine-tuning objective.
double similarity_gamma_F_sq(const TheoryConstants& c, double alpha, int nu);

// (kappa + 3 (D-1) sigma^4) / D^3: the mini-batch fourth central moment.
double fourth_moment_bound(double kappa, double sigma, int batch);

struct RhsTerms {
  double init = 0.0;        // 4 (F(w0) - F*) / (beta tau K)
  double variance = 0.0;    // c beta L_F (1 + beta L_F tau (tau-1)) sigma_F^2
  double similarity = 0.0;  // c beta L_F gamma_F^2 ((1-r)/(r(n-1)) + beta L_F tau (tau-1))
  double bias = 0.0;        // c mu_F^2
  double total = 0.0;
  bool stepsize_hypothesis_ok = true;  // beta <= 1/(10 tau L_F)
};

// Stationarity guarantee for the averaged iterates. Violating the stepsize
// hypothesis flags the result rather than refusing it.
RhsTerms theorem_rhs(double f0_minus_fstar, double beta, int tau, int rounds,
                     double participation, int n_clients, double L_F,
                     double sigma_F_sq, double gamma_F_sq, double mu_F,
                     double big_o_constant = 1.0);

// Empirical constant estimation: maxima over probe models around the anchor
// (gradients, Hessian products, per-sample moments on each client's train
// split). Lower estimates by construction; per-sample Hessian moments use
// the Frobenius norm, which dominates the operator norm.
TheoryConstants estimate_constants(const ModelSpec& spec,
                                   const std::vector<ClientDataset>& clients,
                                   const ModelParams& anchor, int probes,
                                   std::uint64_t seed);

struct BoundReport {
  TheoryConstants constants;
  double alpha = 0.0, beta = 0.0, delta = 0.0;
  int tau = 1, n_clients = 1;
  double participation = 1.0;
  double f0_minus_fstar = 0.0;
  double big_o_constant = 1.0;
  struct Row {
    int nu = 0;
    double L_F = 0.0;
    MomentBound exact, fo, hf;
    double gamma_F_sq = 0.0;
    double f0_minus_fstar = 0.0;
    RhsTerms rhs;
  };
  std::vector<Row> sweep;
};

// Builds uniform batch plans of the given sizes for each nu in the sweep.
BoundReport make_bound_report(const TheoryConstants& c, double alpha,
                              double beta, double delta, int tau, int rounds,
                              double participation, int n_clients,
                              int grad_batch, int hess_batch,
                              double f0_minus_fstar,
                              const std::vector<int>& nu_sweep,
                              double big_o_constant = 1.0);

std::string bound_report_json(const BoundReport& r);

}  // namespace metafl
