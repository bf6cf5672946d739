#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace metafl {

using Vector = std::vector<double>;

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
};

Vector mat_vec(const Matrix& a, const Vector& v);
Matrix mat_mul(const Matrix& a, const Matrix& b);

// One labeled mini-batch, inputs already scaled to model range.
struct Batch {
  Matrix inputs;            // n x features
  std::vector<int> labels;  // n entries in [0, classes)
  int size() const { return inputs.rows; }
};

// Fully connected classifier: tanh hidden layers, linear output layer,
// softmax cross entropy averaged over the batch.
struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  int classes = 0;
};

// Quadratic oracle model: loss(w) = 0.5 w^T A w + b^T w, independent of the
// batch content. Gradient A w + b and constant Hessian A make every
// local-update rule checkable in closed form.
struct QuadraticSpec {
  Matrix a;  // symmetric
  Vector b;
};

struct ModelSpec {
  std::variant<MlpSpec, QuadraticSpec> kind;

  static ModelSpec mlp(int input_dim, std::vector<int> hidden, int classes);
  static ModelSpec quadratic(Matrix a, Vector b);

  bool is_mlp() const { return std::holds_alternative<MlpSpec>(kind); }
  const MlpSpec& as_mlp() const { return std::get<MlpSpec>(kind); }
  const QuadraticSpec& as_quadratic() const { return std::get<QuadraticSpec>(kind); }

  int param_dim() const;
};

// Per-layer extent of the flat parameter vector: rows x cols weights
// followed by a bias block. The quadratic model is a single bias-only block.
struct LayerShape {
  int rows = 0;
  int cols = 0;
  int bias = 0;
  int count() const { return rows * cols + bias; }
};

struct ModelParams {
  Vector values;
  std::vector<LayerShape> shapes;

  int dim() const { return static_cast<int>(values.size()); }
};

inline constexpr int kDenseHessianCap = 512;

double loss(const ModelSpec& spec, const ModelParams& w, const Batch& batch);
Vector grad(const ModelSpec& spec, const ModelParams& w, const Batch& batch);

// Exact Hessian-vector product via forward-over-reverse tangent propagation;
// no finite differencing anywhere.
Vector hvp(const ModelSpec& spec, const ModelParams& w, const Vector& v,
           const Batch& batch);

// Column-by-column Hessian from hvp. Refuses dimensions above cap so callers
// scale via hvp instead of by accident.
Matrix dense_hessian(const ModelSpec& spec, const ModelParams& w,
                     const Batch& batch, int cap = kDenseHessianCap);

// Deterministic init: weights zero-mean normal scaled by 1/sqrt(fan_in),
// biases zero; quadratic model starts at the origin.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

// Fraction of batch rows whose argmax logit matches the label (ties break
// to the lowest class index). Classifier specs only.
double accuracy(const ModelSpec& spec, const ModelParams& w, const Batch& batch);

void check_finite(const Vector& v, const std::string& what);

}  // namespace metafl
