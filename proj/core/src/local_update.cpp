#include "metafl/local_update.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace metafl {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_hp(const HyperParams& hp, bool needs_hessian, int min_nu) {
  require(hp.alpha > 0.0, "alpha must be > 0");
  require(hp.beta > 0.0, "beta must be > 0");
  require(hp.nu >= min_nu,
          "nu must be >= " + std::to_string(min_nu) + " for this engine");
  require(hp.delta > 0.0, "delta must be > 0");
  hp.plan.validate(hp.nu, needs_hessian);
}

bool use_dense(HessianApply mode, int dim) {
  switch (mode) {
    case HessianApply::kDense:
      return true;
    case HessianApply::kHvp:
      return false;
    case HessianApply::kAuto:
      return dim <= kDenseHessianCap;
  }
  return false;
}

ModelParams step_model(const ModelParams& w, const Vector& dir, double step,
                       const std::string& what) {
  ModelParams out = w;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] -= step * dir[i];
  check_finite(out.values, what);
  return out;
}

}  // namespace

BatchPlan BatchPlan::uniform(int nu, int batch_size) {
  BatchPlan p;
  p.grad_sizes.assign(nu + 1, batch_size);
  p.hess_sizes.assign(nu, batch_size);
  return p;
}

void BatchPlan::validate(int nu, bool needs_hessian) const {
  require(static_cast<int>(grad_sizes.size()) == nu + 1,
          "batch plan needs " + std::to_string(nu + 1) +
              " gradient batch sizes, has " + std::to_string(grad_sizes.size()));
  for (int s : grad_sizes) require(s >= 1, "gradient batch sizes must be >= 1");
  if (needs_hessian) {
    require(static_cast<int>(hess_sizes.size()) == nu,
            "batch plan needs " + std::to_string(nu) +
                " curvature batch sizes, has " +
                std::to_string(hess_sizes.size()));
    for (int s : hess_sizes)
      require(s >= 1, "curvature batch sizes must be >= 1");
  }
}

Batch BatchSource::grad_batch(int step) {
  ++grad_count_;
  return next_grad(step);
}

Batch BatchSource::hess_batch(int step) {
  ++hess_count_;
  return next_hess(step);
}

StochasticBatchSource::StochasticBatchSource(const ClientDataset& client,
                                             const BatchPlan& plan,
                                             RngStream grad_stream,
                                             RngStream hess_stream)
    : client_(client),
      plan_(plan),
      grad_stream_(grad_stream),
      hess_stream_(hess_stream) {}

Batch StochasticBatchSource::next_grad(int step) {
  return sample_batch(client_, plan_.grad_sizes.at(step), grad_stream_);
}

Batch StochasticBatchSource::next_hess(int step) {
  return sample_batch(client_, plan_.hess_sizes.at(step), hess_stream_);
}

FixedBatchSource::FixedBatchSource(Batch batch) : batch_(std::move(batch)) {}

Batch FixedBatchSource::next_grad(int) { return batch_; }

Batch FixedBatchSource::next_hess(int) { return batch_; }

std::vector<ModelParams> finetune_path(const ModelSpec& spec,
                                       const ModelParams& start,
                                       BatchSource& source, double alpha,
                                       int nu) {
  require(alpha > 0.0, "alpha must be > 0");
  require(nu >= 0, "nu must be >= 0");
  std::vector<ModelParams> path;
  path.reserve(nu + 1);
  path.push_back(start);
  for (int l = 1; l <= nu; ++l) {
    const Vector g = grad(spec, path.back(), source.grad_batch(l - 1));
    path.push_back(step_model(path.back(), g, alpha,
                              "fine-tuning step " + std::to_string(l)));
  }
  return path;
}

namespace detail {

LocalUpdateTrace exact_local_update_with_factor_alpha(
    const ModelSpec& spec, const ModelParams& w, BatchSource& source,
    const HyperParams& hp, HessianApply mode, double factor_alpha) {
  check_hp(hp, /*needs_hessian=*/true, /*min_nu=*/1);
  LocalUpdateTrace t;
  t.path = finetune_path(spec, w, source, hp.alpha, hp.nu);
  t.direction = grad(spec, t.path[hp.nu], source.grad_batch(hp.nu));
  const bool dense = use_dense(mode, spec.param_dim());
  for (int lp = 1; lp <= hp.nu; ++lp) {
    const int anchor = hp.nu - lp;  // walk the path backwards
    const Batch b = source.hess_batch(anchor);
    Vector hd;
    if (dense) {
      const Matrix h = dense_hessian(spec, t.path[anchor], b);
      hd = mat_vec(h, t.direction);
    } else {
      hd = hvp(spec, t.path[anchor], t.direction, b);
    }
    for (std::size_t i = 0; i < t.direction.size(); ++i)
      t.direction[i] -= factor_alpha * hd[i];
    check_finite(t.direction,
                 "curvature pullback step " + std::to_string(lp));
  }
  t.updated = step_model(w, t.direction, hp.beta, "outer update");
  return t;
}

}  // namespace detail

LocalUpdateTrace exact_local_update(const ModelSpec& spec,
                                    const ModelParams& w, BatchSource& source,
                                    const HyperParams& hp, HessianApply mode) {
  return detail::exact_local_update_with_factor_alpha(spec, w, source, hp,
                                                      mode, hp.alpha);
}

LocalUpdateTrace fo_local_update(const ModelSpec& spec, const ModelParams& w,
                                 BatchSource& source, const HyperParams& hp) {
  check_hp(hp, /*needs_hessian=*/false, /*min_nu=*/0);
  LocalUpdateTrace t;
  t.path = finetune_path(spec, w, source, hp.alpha, hp.nu);
  t.direction = grad(spec, t.path[hp.nu], source.grad_batch(hp.nu));
  check_finite(t.direction, "outer gradient");
  t.updated = step_model(w, t.direction, hp.beta, "outer update");
  return t;
}

LocalUpdateTrace hf_local_update(const ModelSpec& spec, const ModelParams& w,
                                 BatchSource& source, const HyperParams& hp) {
  check_hp(hp, /*needs_hessian=*/true, /*min_nu=*/1);
  LocalUpdateTrace t;
  t.path = finetune_path(spec, w, source, hp.alpha, hp.nu);
  t.direction = grad(spec, t.path[hp.nu], source.grad_batch(hp.nu));
  const double scale = hp.alpha / (2.0 * hp.delta);
  for (int lp = 1; lp <= hp.nu; ++lp) {
    const int anchor = hp.nu - lp;
    const Batch b = source.hess_batch(anchor);  // shared by both probes
    const ModelParams plus =
        step_model(t.path[anchor], t.direction, -hp.delta,
                   "curvature probe +delta, step " + std::to_string(lp));
    const ModelParams minus =
        step_model(t.path[anchor], t.direction, hp.delta,
                   "curvature probe -delta, step " + std::to_string(lp));
    const Vector gp = grad(spec, plus, b);
    const Vector gm = grad(spec, minus, b);
    for (std::size_t i = 0; i < t.direction.size(); ++i)
      t.direction[i] -= scale * (gp[i] - gm[i]);
    check_finite(t.direction, "symmetric-difference pullback step " +
                                  std::to_string(lp) +
                                  " (delta = " + std::to_string(hp.delta) + ")");
  }
  t.updated = step_model(w, t.direction, hp.beta, "outer update");
  return t;
}

Vector exact_meta_gradient_oracle(const ModelSpec& spec, const ModelParams& w,
                                  const Batch& data, double alpha, int nu,
                                  HessianApply mode) {
  require(alpha > 0.0, "alpha must be > 0");
  require(nu >= 0, "nu must be >= 0");
  FixedBatchSource source(data);
  const std::vector<ModelParams> path =
      finetune_path(spec, w, source, alpha, nu);
  Vector g = grad(spec, path[nu], data);
  if (use_dense(mode, spec.param_dim())) {
    // accumulate T = (I - alpha H_0) ... (I - alpha H_{nu-1}) left to right,
    // then apply: a second arithmetic route vs the sequential engine
    const int d = spec.param_dim();
    Matrix t(d, d);
    for (int i = 0; i < d; ++i) t.at(i, i) = 1.0;
    for (int l = 0; l < nu; ++l) {
      const Matrix h = dense_hessian(spec, path[l], data);
      Matrix factor(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          factor.at(i, j) = (i == j ? 1.0 : 0.0) - alpha * h.at(i, j);
      t = mat_mul(t, factor);
    }
    return mat_vec(t, g);
  }
  for (int lp = 1; lp <= nu; ++lp) {
    const Vector hd = hvp(spec, path[nu - lp], g, data);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= alpha * hd[i];
  }
  return g;
}

}  // namespace metafl
