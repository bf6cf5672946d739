#pragma once

#include <vector>

#include "metafl/data.hpp"
#include "metafl/model.hpp"
#include "metafl/rng.hpp"

namespace metafl {

// How a client turns the received model into its contribution. Exact
// propagates stochastic curvature through every fine-tuning step; FirstOrder
// drops the curvature factors; HessianFree replaces each factor with a
// symmetric gradient difference.
enum class Engine { kExact, kFirstOrder, kHessianFree };

enum class HessianApply {
  kAuto,   // dense at or below kDenseHessianCap, hvp above
  kDense,  // materialize each curvature estimate as a matrix
  kHvp,    // apply each factor as a single Hessian-vector product
};

// Per-step batch sizes. grad_sizes has nu+1 entries: fine-tuning steps
// 0..nu-1 and the outer gradient. hess_sizes has nu entries: the curvature
// factor anchored at path point l uses hess_sizes[l].
struct BatchPlan {
  std::vector<int> grad_sizes;
  std::vector<int> hess_sizes;

  static BatchPlan uniform(int nu, int batch_size);
  void validate(int nu, bool needs_hessian) const;
};

struct HyperParams {
  double alpha = 0.0;   // fine-tuning stepsize
  double beta = 0.0;    // outer stepsize
  int nu = 1;           // anticipated fine-tuning steps
  int tau = 1;          // local updates per round
  double delta = 1e-3;  // curvature probe width (HessianFree only)
  BatchPlan plan;
};

// Supplies fresh batches to one local update and counts what was consumed,
// so batch accounting is checkable from the outside.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  Batch grad_batch(int step);  // step in [0, nu]
  Batch hess_batch(int step);  // step in [0, nu-1]
  int grad_batches() const { return grad_count_; }
  int hess_batches() const { return hess_count_; }

 protected:
  virtual Batch next_grad(int step) = 0;
  virtual Batch next_hess(int step) = 0;

 private:
  int grad_count_ = 0;
  int hess_count_ = 0;
};

// Draws from the client's train split; gradient and curvature batches come
// from separate streams so engines that skip curvature still see the same
// fine-tuning path.
class StochasticBatchSource final : public BatchSource {
 public:
  StochasticBatchSource(const ClientDataset& client, const BatchPlan& plan,
                        RngStream grad_stream, RngStream hess_stream);

 protected:
  Batch next_grad(int step) override;
  Batch next_hess(int step) override;

 private:
  const ClientDataset& client_;
  BatchPlan plan_;
  RngStream grad_stream_;
  RngStream hess_stream_;
};

// Returns the same fixed batch for every request: full-gradient mode.
class FixedBatchSource final : public BatchSource {
 public:
  explicit FixedBatchSource(Batch batch);

 protected:
  Batch next_grad(int step) override;
  Batch next_hess(int step) override;

 private:
  Batch batch_;
};

struct LocalUpdateTrace {
  std::vector<ModelParams> path;  // nu+1 models, path[0] = input
  Vector direction;               // d
  ModelParams updated;            // input - beta * direction
};

// path[l] = path[l-1] - alpha * grad(path[l-1], fresh batch), l = 1..nu.
std::vector<ModelParams> finetune_path(const ModelSpec& spec,
                                       const ModelParams& start,
                                       BatchSource& source, double alpha,
                                       int nu);

// Exact rule: after the fine-tuning path, the outer gradient is pulled back
// through each step by d <- (I - alpha H~(path[nu-l])) d on fresh curvature
// batches, walking the path backwards. Consumes 2 nu + 1 batches.
LocalUpdateTrace exact_local_update(const ModelSpec& spec,
                                    const ModelParams& w, BatchSource& source,
                                    const HyperParams& hp,
                                    HessianApply mode = HessianApply::kAuto);

// Curvature-free rule: the outer gradient is used as the direction
// unchanged. Consumes nu + 1 batches; nu = 0 reduces to a plain SGD step.
LocalUpdateTrace fo_local_update(const ModelSpec& spec, const ModelParams& w,
                                 BatchSource& source, const HyperParams& hp);

// Symmetric-difference rule: each curvature factor is replaced by
// d <- d - (alpha / 2 delta)(grad(u + delta d) - grad(u - delta d)) with both
// probes on the same batch. Consumes 2 nu + 1 batches.
LocalUpdateTrace hf_local_update(const ModelSpec& spec, const ModelParams& w,
                                 BatchSource& source, const HyperParams& hp);

// Deterministic meta-gradient on a fixed data batch: the reference the
// stochastic engines are measured against. Dense mode accumulates the
// product of (I - alpha H_l) matrices; hvp mode applies factors in sequence.
// nu = 0 degenerates to the plain gradient on the batch.
Vector exact_meta_gradient_oracle(const ModelSpec& spec, const ModelParams& w,
                                  const Batch& data, double alpha, int nu,
                                  HessianApply mode = HessianApply::kAuto);

namespace detail {
// Exact rule with an independent stepsize inside the curvature factors;
// factor_alpha = 0 turns every factor into the identity, which must
// reproduce the curvature-free rule on matching streams.
LocalUpdateTrace exact_local_update_with_factor_alpha(
    const ModelSpec& spec, const ModelParams& w, BatchSource& source,
    const HyperParams& hp, HessianApply mode, double factor_alpha);
}  // namespace detail

}  // namespace metafl
