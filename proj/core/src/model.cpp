#include "metafl/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "metafl/rng.hpp"

namespace metafl {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct MlpView {
  struct Layer {
    int w_off, b_off, out, in;
  };
  std::vector<Layer> layers;
  int dim = 0;
};

MlpView make_view(const MlpSpec& spec) {
  MlpView v;
  std::vector<int> sizes;
  sizes.push_back(spec.input_dim);
  for (int h : spec.hidden) sizes.push_back(h);
  sizes.push_back(spec.classes);
  int off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    MlpView::Layer lay;
    lay.in = sizes[l];
    lay.out = sizes[l + 1];
    lay.w_off = off;
    lay.b_off = off + lay.out * lay.in;
    off = lay.b_off + lay.out;
    v.layers.push_back(lay);
  }
  v.dim = off;
  return v;
}

void check_params(const ModelSpec& spec, const ModelParams& w) {
  require(w.dim() == spec.param_dim(),
          "parameter vector length " + std::to_string(w.dim()) +
              " does not match model dimension " +
              std::to_string(spec.param_dim()));
}

void check_batch(const MlpSpec& spec, const Batch& batch) {
  require(batch.size() >= 1, "batch must contain at least one sample");
  require(batch.inputs.cols == spec.input_dim,
          "batch input width " + std::to_string(batch.inputs.cols) +
              " does not match model input_dim " +
              std::to_string(spec.input_dim));
  require(static_cast<int>(batch.labels.size()) == batch.size(),
          "batch has " + std::to_string(batch.labels.size()) + " labels for " +
              std::to_string(batch.size()) + " rows");
  for (int lb : batch.labels)
    require(lb >= 0 && lb < spec.classes,
            "label " + std::to_string(lb) + " outside [0, " +
                std::to_string(spec.classes) + ")");
}

// acts[0] = input row; acts[l+1] = tanh(W_l acts[l] + b_l) for hidden layers,
// identity for the final (logit) layer.
void forward(const MlpView& v, const Vector& p, const double* x,
             std::vector<Vector>& acts) {
  const int depth = static_cast<int>(v.layers.size());
  acts.resize(depth + 1);
  acts[0].assign(x, x + v.layers[0].in);
  for (int l = 0; l < depth; ++l) {
    const auto& lay = v.layers[l];
    acts[l + 1].resize(lay.out);
    for (int i = 0; i < lay.out; ++i) {
      const double* wrow = p.data() + lay.w_off + static_cast<std::size_t>(i) * lay.in;
      double s = p[lay.b_off + i];
      for (int j = 0; j < lay.in; ++j) s += wrow[j] * acts[l][j];
      acts[l + 1][i] = (l == depth - 1) ? s : std::tanh(s);
    }
  }
}

// log-sum-exp with max shift; returns lse and fills probs with softmax.
double softmax_lse(const Vector& logits, Vector& probs) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    s += probs[i];
  }
  for (double& v : probs) v /= s;
  return mx + std::log(s);
}

double mlp_loss(const MlpSpec& spec, const ModelParams& w, const Batch& batch) {
  check_batch(spec, batch);
  const MlpView v = make_view(spec);
  std::vector<Vector> acts;
  Vector probs;
  double total = 0.0;
  for (int s = 0; s < batch.size(); ++s) {
    forward(v, w.values, batch.inputs.row(s), acts);
    const double lse = softmax_lse(acts.back(), probs);
    total += lse - acts.back()[batch.labels[s]];
  }
  return total / batch.size();
}

Vector mlp_grad(const MlpSpec& spec, const ModelParams& w, const Batch& batch) {
  check_batch(spec, batch);
  const MlpView v = make_view(spec);
  const int depth = static_cast<int>(v.layers.size());
  Vector g(v.dim, 0.0);
  std::vector<Vector> acts;
  Vector probs, delta, delta_prev;
  for (int s = 0; s < batch.size(); ++s) {
    forward(v, w.values, batch.inputs.row(s), acts);
    softmax_lse(acts.back(), probs);
    delta = probs;
    delta[batch.labels[s]] -= 1.0;
    for (int l = depth - 1; l >= 0; --l) {
      const auto& lay = v.layers[l];
      for (int i = 0; i < lay.out; ++i) {
        double* grow = g.data() + lay.w_off + static_cast<std::size_t>(i) * lay.in;
        const double di = delta[i];
        for (int j = 0; j < lay.in; ++j) grow[j] += di * acts[l][j];
        g[lay.b_off + i] += di;
      }
      if (l > 0) {
        delta_prev.assign(lay.in, 0.0);
        for (int i = 0; i < lay.out; ++i) {
          const double* wrow =
              w.values.data() + lay.w_off + static_cast<std::size_t>(i) * lay.in;
          const double di = delta[i];
          for (int j = 0; j < lay.in; ++j) delta_prev[j] += wrow[j] * di;
        }
        for (int j = 0; j < lay.in; ++j) {
          const double a = acts[l][j];
          delta_prev[j] *= (1.0 - a * a);
        }
        delta.swap(delta_prev);
      }
    }
  }
  const double inv = 1.0 / batch.size();
  for (double& x : g) x *= inv;
  return g;
}

// Forward-over-reverse tangent propagation. Tangent quantities mirror the
// primal pass: Rz_l = V_l a_l + W_l Ra_l + Vb_l, Ra = s'(z) Rz, and the
// softmax Jacobian gives Rdelta at the output. s' = 1 - a^2, s'' = -2a(1-a^2)
// as functions of the activation value a = tanh(z).
Vector mlp_hvp(const MlpSpec& spec, const ModelParams& w, const Vector& dir,
               const Batch& batch) {
  check_batch(spec, batch);
  const MlpView v = make_view(spec);
  require(static_cast<int>(dir.size()) == v.dim,
          "direction length " + std::to_string(dir.size()) +
              " does not match model dimension " + std::to_string(v.dim));
  const int depth = static_cast<int>(v.layers.size());
  Vector h(v.dim, 0.0);
  std::vector<Vector> acts(depth + 1), racts(depth + 1), rzs(depth);
  Vector probs, delta, rdelta, u, ru;
  for (int s = 0; s < batch.size(); ++s) {
    // forward with tangents
    acts[0].assign(batch.inputs.row(s), batch.inputs.row(s) + v.layers[0].in);
    racts[0].assign(v.layers[0].in, 0.0);
    for (int l = 0; l < depth; ++l) {
      const auto& lay = v.layers[l];
      acts[l + 1].resize(lay.out);
      racts[l + 1].resize(lay.out);
      rzs[l].resize(lay.out);
      for (int i = 0; i < lay.out; ++i) {
        const double* wrow =
            w.values.data() + lay.w_off + static_cast<std::size_t>(i) * lay.in;
        const double* vrow =
            dir.data() + lay.w_off + static_cast<std::size_t>(i) * lay.in;
        double z = w.values[lay.b_off + i];
        double rz = dir[lay.b_off + i];
        for (int j = 0; j < lay.in; ++j) {
          z += wrow[j] * acts[l][j];
          rz += vrow[j] * acts[l][j] + wrow[j] * racts[l][j];
        }
        rzs[l][i] = rz;
        if (l == depth - 1) {
          acts[l + 1][i] = z;
          racts[l + 1][i] = rz;
        } else {
          const double a = std::tanh(z);
          acts[l + 1][i] = a;
          racts[l + 1][i] = (1.0 - a * a) * rz;
        }
      }
    }
    // output layer: delta = softmax - onehot, Rdelta = J_softmax Rlogits
    softmax_lse(acts[depth], probs);
    const int classes = v.layers[depth - 1].out;
    delta = probs;
    delta[batch.labels[s]] -= 1.0;
    rdelta.resize(classes);
    double pdotr = 0.0;
    for (int i = 0; i < classes; ++i) pdotr += probs[i] * racts[depth][i];
    for (int i = 0; i < classes; ++i)
      rdelta[i] = probs[i] * (racts[depth][i] - pdotr);
    // reverse with tangents
    for (int l = depth - 1; l >= 0; --l) {
      const auto& lay = v.layers[l];
      for (int i = 0; i < lay.out; ++i) {
        double* hrow = h.data() + lay.w_off + static_cast<std::size_t>(i) * lay.in;
        const double di = delta[i], rdi = rdelta[i];
        for (int j = 0; j < lay.in; ++j)
          hrow[j] += rdi * acts[l][j] + di * racts[l][j];
        h[lay.b_off + i] += rdi;
      }
      if (l > 0) {
        u.assign(lay.in, 0.0);
        ru.assign(lay.in, 0.0);
        for (int i = 0; i < lay.out; ++i) {
          const double* wrow =
              w.values.data() + lay.w_off + static_cast<std::size_t>(i) * lay.in;
          const double* vrow =
              dir.data() + lay.w_off + static_cast<std::size_t>(i) * lay.in;
          const double di = delta[i], rdi = rdelta[i];
          for (int j = 0; j < lay.in; ++j) {
            u[j] += wrow[j] * di;
            ru[j] += vrow[j] * di + wrow[j] * rdi;
          }
        }
        delta.resize(lay.in);
        rdelta.resize(lay.in);
        for (int j = 0; j < lay.in; ++j) {
          const double a = acts[l][j];
          const double sp = 1.0 - a * a;
          const double spp = -2.0 * a * sp;
          delta[j] = u[j] * sp;
          rdelta[j] = ru[j] * sp + u[j] * spp * rzs[l - 1][j];
        }
      }
    }
  }
  const double inv = 1.0 / batch.size();
  for (double& x : h) x *= inv;
  return h;
}

}  // namespace

Vector mat_vec(const Matrix& a, const Vector& v) {
  require(a.cols == static_cast<int>(v.size()),
          "mat_vec: matrix cols " + std::to_string(a.cols) +
              " vs vector length " + std::to_string(v.size()));
  Vector out(a.rows, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* row = a.row(i);
    double s = 0.0;
    for (int j = 0; j < a.cols; ++j) s += row[j] * v[j];
    out[i] = s;
  }
  return out;
}

Matrix mat_mul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, "mat_mul: inner dimensions disagree");
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      double* crow = c.row(i);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  return c;
}

ModelSpec ModelSpec::mlp(int input_dim, std::vector<int> hidden, int classes) {
  require(input_dim >= 1, "input_dim must be >= 1");
  require(classes >= 2, "classes must be >= 2");
  for (int h : hidden) require(h >= 1, "hidden widths must be >= 1");
  ModelSpec s;
  s.kind = MlpSpec{input_dim, std::move(hidden), classes};
  return s;
}

ModelSpec ModelSpec::quadratic(Matrix a, Vector b) {
  require(a.rows == a.cols && a.rows >= 1, "quadratic matrix must be square");
  require(a.rows == static_cast<int>(b.size()),
          "quadratic offset length must match matrix dimension");
  for (int i = 0; i < a.rows; ++i)
    for (int j = i + 1; j < a.cols; ++j)
      require(std::abs(a.at(i, j) - a.at(j, i)) <= 1e-12,
              "quadratic matrix must be symmetric");
  ModelSpec s;
  s.kind = QuadraticSpec{std::move(a), std::move(b)};
  return s;
}

int ModelSpec::param_dim() const {
  if (is_mlp()) return make_view(as_mlp()).dim;
  return as_quadratic().a.rows;
}

double loss(const ModelSpec& spec, const ModelParams& w, const Batch& batch) {
  check_params(spec, w);
  if (spec.is_mlp()) return mlp_loss(spec.as_mlp(), w, batch);
  const auto& q = spec.as_quadratic();
  const Vector aw = mat_vec(q.a, w.values);
  double s = 0.0;
  for (int i = 0; i < q.a.rows; ++i)
    s += 0.5 * w.values[i] * aw[i] + q.b[i] * w.values[i];
  return s;
}

Vector grad(const ModelSpec& spec, const ModelParams& w, const Batch& batch) {
  check_params(spec, w);
  if (spec.is_mlp()) return mlp_grad(spec.as_mlp(), w, batch);
  const auto& q = spec.as_quadratic();
  Vector g = mat_vec(q.a, w.values);
  for (int i = 0; i < q.a.rows; ++i) g[i] += q.b[i];
  return g;
}

Vector hvp(const ModelSpec& spec, const ModelParams& w, const Vector& v,
           const Batch& batch) {
  check_params(spec, w);
  if (spec.is_mlp()) return mlp_hvp(spec.as_mlp(), w, v, batch);
  const auto& q = spec.as_quadratic();
  require(v.size() == q.b.size(),
          "direction length does not match model dimension");
  return mat_vec(q.a, v);
}

Matrix dense_hessian(const ModelSpec& spec, const ModelParams& w,
                     const Batch& batch, int cap) {
  check_params(spec, w);
  const int d = spec.param_dim();
  require(d <= cap, "parameter dimension " + std::to_string(d) +
                        " exceeds dense Hessian cap " + std::to_string(cap));
  if (!spec.is_mlp()) return spec.as_quadratic().a;
  Matrix h(d, d);
  Vector e(d, 0.0);
  for (int j = 0; j < d; ++j) {
    e[j] = 1.0;
    const Vector col = hvp(spec, w, e, batch);
    for (int i = 0; i < d; ++i) h.at(i, j) = col[i];
    e[j] = 0.0;
  }
  return h;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  ModelParams p;
  if (!spec.is_mlp()) {
    const int d = spec.param_dim();
    p.values.assign(d, 0.0);
    p.shapes.push_back(LayerShape{0, 0, d});
    return p;
  }
  const MlpView v = make_view(spec.as_mlp());
  RngStream stream = RngStream::derive(seed, {tag(StreamPurpose::kInit)});
  p.values.assign(v.dim, 0.0);
  for (const auto& lay : v.layers) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(lay.in));
    for (int i = 0; i < lay.out * lay.in; ++i)
      p.values[lay.w_off + i] = stream.normal() * scale;
    p.shapes.push_back(LayerShape{lay.out, lay.in, lay.out});
  }
  return p;
}

double accuracy(const ModelSpec& spec, const ModelParams& w, const Batch& batch) {
  require(spec.is_mlp(), "accuracy is defined for classifier models only");
  check_params(spec, w);
  const MlpSpec& m = spec.as_mlp();
  check_batch(m, batch);
  const MlpView v = make_view(m);
  std::vector<Vector> acts;
  int hit = 0;
  for (int s = 0; s < batch.size(); ++s) {
    forward(v, w.values, batch.inputs.row(s), acts);
    const Vector& logits = acts.back();
    int arg = 0;
    for (int c = 1; c < m.classes; ++c)
      if (logits[c] > logits[arg]) arg = c;
    if (arg == batch.labels[s]) ++hit;
  }
  return static_cast<double>(hit) / batch.size();
}

void check_finite(const Vector& v, const std::string& what) {
  for (double x : v)
    if (!std::isfinite(x))
      throw std::runtime_error("non-finite value in " + what);
}

}  // namespace metafl
