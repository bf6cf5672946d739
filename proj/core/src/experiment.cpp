#include "metafl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace metafl {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw std::runtime_error(path.empty() ? msg : path + ": " + msg);
}

// Tracks which keys were consumed so unknown keys are reported with their
// full path instead of being silently ignored.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_, "expected an object");
  }

  std::string sub(const char* k) const { return path_ + "." + k; }

  bool has(const char* k) {
    return j_.contains(k);
  }

  const json* get(const char* k) {
    seen_.insert(k);
    auto it = j_.find(k);
    return it == j_.end() ? nullptr : &*it;
  }

  double num(const char* k, double dflt) {
    const json* v = get(k);
    if (!v) return dflt;
    if (!v->is_number()) fail(sub(k), "expected a number");
    return v->get<double>();
  }

  int integer(const char* k, int dflt) {
    const json* v = get(k);
    if (!v) return dflt;
    if (!v->is_number_integer()) fail(sub(k), "expected an integer");
    return v->get<int>();
  }

  std::uint64_t u64(const char* k, std::uint64_t dflt) {
    const json* v = get(k);
    if (!v) return dflt;
    if (!v->is_number_unsigned() && !v->is_number_integer())
      fail(sub(k), "expected a non-negative integer");
    if (v->is_number_integer() && v->get<long long>() < 0)
      fail(sub(k), "expected a non-negative integer");
    return v->get<std::uint64_t>();
  }

  bool boolean(const char* k, bool dflt) {
    const json* v = get(k);
    if (!v) return dflt;
    if (!v->is_boolean()) fail(sub(k), "expected true or false");
    return v->get<bool>();
  }

  std::string str(const char* k, std::string dflt) {
    const json* v = get(k);
    if (!v) return dflt;
    if (!v->is_string()) fail(sub(k), "expected a string");
    return v->get<std::string>();
  }

  std::vector<int> int_array(const char* k, std::vector<int> dflt) {
    const json* v = get(k);
    if (!v) return dflt;
    if (!v->is_array()) fail(sub(k), "expected an array of integers");
    std::vector<int> out;
    for (const auto& e : *v) {
      if (!e.is_number_integer()) fail(sub(k), "expected an array of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  std::vector<std::uint64_t> u64_array(const char* k,
                                       std::vector<std::uint64_t> dflt) {
    const json* v = get(k);
    if (!v) return dflt;
    if (!v->is_array()) fail(sub(k), "expected an array of seeds");
    std::vector<std::uint64_t> out;
    for (const auto& e : *v) {
      if (!e.is_number_unsigned() && !e.is_number_integer())
        fail(sub(k), "expected an array of non-negative integers");
      out.push_back(e.get<std::uint64_t>());
    }
    return out;
  }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(path_ + "." + it.key(), "unknown key");
  }

  const json& raw() const { return j_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Engine parse_engine(const std::string& s, const std::string& path) {
  if (s == "exact") return Engine::kExact;
  if (s == "fo" || s == "first_order") return Engine::kFirstOrder;
  if (s == "hf" || s == "hessian_free") return Engine::kHessianFree;
  fail(path, "expected one of exact | fo | hf");
}

const char* engine_name(Engine e) {
  switch (e) {
    case Engine::kExact:
      return "exact";
    case Engine::kFirstOrder:
      return "fo";
    case Engine::kHessianFree:
      return "hf";
  }
  return "?";
}

void check(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) fail(path, msg);
}

ExperimentConfig parse_config_json(const json& root) {
  ExperimentConfig cfg;
  Obj top(root, "");

  if (const json* d = top.get("dataset")) {
    Obj o(*d, "dataset");
    cfg.dataset.kind = o.str("kind", cfg.dataset.kind);
    cfg.dataset.path = o.str("path", cfg.dataset.path);
    cfg.dataset.features = o.integer("features", cfg.dataset.features);
    cfg.dataset.classes = o.integer("classes", cfg.dataset.classes);
    cfg.dataset.cluster_spread = o.num("cluster_spread", cfg.dataset.cluster_spread);
    cfg.dataset.samples = o.integer("samples", cfg.dataset.samples);
    cfg.dataset.seed = o.u64("seed", cfg.dataset.seed);
    if (const json* p = o.get("partition")) {
      Obj po(*p, "dataset.partition");
      cfg.dataset.partition.clients = po.integer("clients", 10);
      cfg.dataset.partition.samples_per_client =
          po.integer("samples_per_client", 200);
      cfg.dataset.partition.train_fraction = po.num("train_fraction", 0.8);
      cfg.dataset.partition.dirichlet_alpha = po.num("dirichlet_alpha", 1.0);
      cfg.dataset.partition.seed = po.u64("seed", 2);
      po.finish();
    } else {
      cfg.dataset.partition.clients = 10;
      cfg.dataset.partition.samples_per_client = 200;
      cfg.dataset.partition.seed = 2;
    }
    o.finish();
  } else {
    cfg.dataset.partition.clients = 10;
    cfg.dataset.partition.samples_per_client = 200;
    cfg.dataset.partition.seed = 2;
  }

  if (const json* m = top.get("model")) {
    Obj o(*m, "model");
    cfg.model.kind = o.str("kind", cfg.model.kind);
    cfg.model.hidden = o.int_array("hidden", cfg.model.hidden);
    cfg.model.quad_dim = o.integer("dim", cfg.model.quad_dim);
    cfg.model.eig_min = o.num("eig_min", cfg.model.eig_min);
    cfg.model.eig_max = o.num("eig_max", cfg.model.eig_max);
    cfg.model.quad_seed = o.u64("seed", cfg.model.quad_seed);
    o.finish();
  }

  if (const json* f = top.get("federation")) {
    Obj o(*f, "federation");
    cfg.federation.rounds = o.integer("rounds", cfg.federation.rounds);
    cfg.federation.participation = o.num("participation", cfg.federation.participation);
    cfg.federation.tau = o.integer("tau", cfg.federation.tau);
    cfg.federation.alpha = o.num("alpha", cfg.federation.alpha);
    cfg.federation.beta = o.num("beta", cfg.federation.beta);
    cfg.federation.batch_size = o.integer("batch_size", cfg.federation.batch_size);
    cfg.federation.hess_batch_size =
        o.integer("hess_batch_size", cfg.federation.hess_batch_size);
    cfg.federation.eval_nu = o.integer("eval_nu", cfg.federation.eval_nu);
    cfg.federation.eval_every = o.integer("eval_every", cfg.federation.eval_every);
    cfg.federation.eval_stochastic =
        o.boolean("eval_stochastic", cfg.federation.eval_stochastic);
    cfg.federation.eval_batch = o.integer("eval_batch", cfg.federation.eval_batch);
    o.finish();
  }

  if (const json* e = top.get("engines")) {
    if (!e->is_array() || e->empty())
      fail("engines", "expected a non-empty array");
    int idx = 0;
    for (const auto& item : *e) {
      const std::string p = "engines[" + std::to_string(idx) + "]";
      Obj o(item, p);
      EngineScenario s;
      s.mode = parse_engine(o.str("mode", "exact"), p + ".mode");
      s.nu = o.integer("nu", 1);
      s.delta = o.num("delta", 1e-3);
      s.eval_nu = o.integer("eval_nu", -1);
      s.label = o.str("label", std::string(engine_name(s.mode)) + "-nu" +
                                   std::to_string(s.nu));
      o.finish();
      cfg.engines.push_back(std::move(s));
      ++idx;
    }
  } else {
    cfg.engines.push_back(EngineScenario{"exact-nu1", Engine::kExact, 1, 1e-3, -1});
  }

  if (const json* t = top.get("theory")) {
    Obj o(*t, "theory");
    cfg.theory.enabled = o.boolean("enabled", cfg.theory.enabled);
    cfg.theory.probes = o.integer("probes", cfg.theory.probes);
    cfg.theory.nu_sweep = o.int_array("nu_sweep", cfg.theory.nu_sweep);
    cfg.theory.similarity_fallback =
        o.boolean("similarity_fallback", cfg.theory.similarity_fallback);
    cfg.theory.big_o_constant = o.num("big_o_constant", cfg.theory.big_o_constant);
    cfg.theory.seed = o.u64("seed", cfg.theory.seed);
    o.finish();
  }

  if (const json* ot = top.get("output")) {
    Obj o(*ot, "output");
    cfg.output.dir = o.str("dir", cfg.output.dir);
    cfg.output.timing = o.boolean("timing", cfg.output.timing);
    o.finish();
  }

  cfg.seeds = top.u64_array("seeds", cfg.seeds);
  cfg.workers = top.integer("workers", cfg.workers);
  top.finish();

  // range validation with field paths
  check(cfg.dataset.kind == "synthetic" || cfg.dataset.kind == "cifar10" ||
            cfg.dataset.kind == "cifar100",
        "dataset.kind", "expected one of synthetic | cifar10 | cifar100");
  check(cfg.dataset.features >= 1, "dataset.features", "must be >= 1");
  check(cfg.dataset.classes >= 2, "dataset.classes", "must be >= 2");
  check(cfg.dataset.cluster_spread >= 0, "dataset.cluster_spread", "must be >= 0");
  check(cfg.dataset.samples >= cfg.dataset.classes, "dataset.samples",
        "must provide at least one sample per class");
  check(cfg.dataset.partition.clients >= 1, "dataset.partition.clients",
        "must be >= 1");
  check(cfg.dataset.partition.samples_per_client >= 2,
        "dataset.partition.samples_per_client", "must be >= 2");
  check(cfg.dataset.partition.dirichlet_alpha > 0,
        "dataset.partition.dirichlet_alpha", "must be > 0");
  const double tf = cfg.dataset.partition.train_fraction;
  check(tf > 0 && tf < 1, "dataset.partition.train_fraction",
        "must be in (0, 1)");
  check(cfg.model.kind == "mlp" || cfg.model.kind == "quadratic", "model.kind",
        "expected mlp | quadratic");
  for (int h : cfg.model.hidden)
    check(h >= 1, "model.hidden", "widths must be >= 1");
  check(cfg.model.quad_dim >= 1, "model.dim", "must be >= 1");
  check(cfg.model.eig_min > 0 && cfg.model.eig_min <= cfg.model.eig_max,
        "model.eig_min", "need 0 < eig_min <= eig_max");
  check(cfg.federation.rounds >= 0, "federation.rounds", "must be >= 0");
  check(cfg.federation.participation > 0 && cfg.federation.participation <= 1,
        "federation.participation", "must be in (0, 1]");
  check(cfg.federation.tau >= 1, "federation.tau", "must be >= 1");
  check(cfg.federation.alpha > 0, "federation.alpha", "must be > 0");
  check(cfg.federation.beta > 0, "federation.beta", "must be > 0");
  check(cfg.federation.batch_size >= 1, "federation.batch_size", "must be >= 1");
  check(cfg.federation.hess_batch_size >= 0, "federation.hess_batch_size",
        "must be >= 0 (0 uses batch_size)");
  check(cfg.federation.eval_nu >= 0, "federation.eval_nu", "must be >= 0");
  check(cfg.federation.eval_every >= 1, "federation.eval_every", "must be >= 1");
  check(cfg.federation.eval_batch >= 0, "federation.eval_batch",
        "must be >= 0 (0 uses batch_size)");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < cfg.engines.size(); ++i) {
    const std::string p = "engines[" + std::to_string(i) + "]";
    const EngineScenario& s = cfg.engines[i];
    check(!s.label.empty(), p + ".label", "must be non-empty");
    check(s.label.find(',') == std::string::npos &&
              s.label.find('\n') == std::string::npos,
          p + ".label", "must not contain commas or newlines");
    check(labels.insert(s.label).second, p + ".label",
          "duplicate label " + s.label);
    check(s.nu >= 0, p + ".nu", "must be >= 0");
    if (s.mode != Engine::kFirstOrder)
      check(s.nu >= 1, p + ".nu",
            "must be >= 1 (nu = 0 runs through the fo engine)");
    check(s.delta > 0, p + ".delta", "must be > 0");
    check(s.eval_nu >= -1, p + ".eval_nu", "must be >= 0 (or omitted)");
  }
  check(cfg.theory.probes >= 2, "theory.probes", "must be >= 2");
  check(!cfg.theory.nu_sweep.empty(), "theory.nu_sweep", "must be non-empty");
  for (int nu : cfg.theory.nu_sweep)
    check(nu >= 1, "theory.nu_sweep", "entries must be >= 1");
  check(cfg.theory.big_o_constant > 0, "theory.big_o_constant", "must be > 0");
  check(!cfg.output.dir.empty(), "output.dir", "must be non-empty");
  check(!cfg.seeds.empty(), "seeds", "must be non-empty");
  check(cfg.workers >= 1, "workers", "must be >= 1");
  return cfg;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file_atomic(const fs::path& p, const std::string& content) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

FedConfig make_fed_config(const ExperimentConfig& cfg,
                          const EngineScenario& s) {
  FedConfig fc;
  fc.n_clients = cfg.dataset.partition.clients;
  fc.participation = cfg.federation.participation;
  fc.rounds = cfg.federation.rounds;
  fc.engine = s.mode;
  fc.hp.alpha = cfg.federation.alpha;
  fc.hp.beta = cfg.federation.beta;
  fc.hp.nu = s.nu;
  fc.hp.tau = cfg.federation.tau;
  fc.hp.delta = s.delta;
  const int hb = cfg.federation.hess_batch_size > 0
                     ? cfg.federation.hess_batch_size
                     : cfg.federation.batch_size;
  fc.hp.plan.grad_sizes.assign(s.nu + 1, cfg.federation.batch_size);
  fc.hp.plan.hess_sizes.assign(s.nu, hb);
  fc.eval_nu = s.eval_nu >= 0 ? s.eval_nu : cfg.federation.eval_nu;
  fc.eval_stochastic = cfg.federation.eval_stochastic;
  fc.eval_batch = cfg.federation.eval_batch > 0 ? cfg.federation.eval_batch
                                                : cfg.federation.batch_size;
  fc.eval_every = cfg.federation.eval_every;
  fc.workers = cfg.workers;
  return fc;
}

// ----- quadratic helpers -----

Matrix random_spd(int d, double eig_min, double eig_max, std::uint64_t seed) {
  RngStream stream(seed);
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    a.at(i, i) = eig_min + (eig_max - eig_min) * stream.uniform();
  for (int r = 0; r < 3 * d; ++r) {
    const int i = static_cast<int>(stream.below(d));
    const int j = static_cast<int>(stream.below(d));
    if (i == j) continue;
    const double th = 2.0 * 3.14159265358979323846 * stream.uniform();
    const double co = std::cos(th), si = std::sin(th);
    for (int k = 0; k < d; ++k) {  // rows
      const double ai = a.at(i, k), aj = a.at(j, k);
      a.at(i, k) = co * ai - si * aj;
      a.at(j, k) = si * ai + co * aj;
    }
    for (int k = 0; k < d; ++k) {  // columns
      const double ai = a.at(k, i), aj = a.at(k, j);
      a.at(k, i) = co * ai - si * aj;
      a.at(k, j) = si * ai + co * aj;
    }
  }
  // exact symmetry against rounding drift
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double m = 0.5 * (a.at(i, j) + a.at(j, i));
      a.at(i, j) = m;
      a.at(j, i) = m;
    }
  return a;
}

// Cholesky-based minimum of 0.5 w'Aw + b'w; empty when A is not positive
// definite (the gap then falls back to F(w0) itself).
std::optional<double> quadratic_min(const Matrix& a, const Vector& b) {
  const int d = a.rows;
  Matrix l(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a.at(i, j);
      for (int k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (s <= 0.0) return std::nullopt;
        l.at(i, i) = std::sqrt(s);
      } else {
        l.at(i, j) = s / l.at(j, j);
      }
    }
  }
  Vector y(d), x(d);
  for (int i = 0; i < d; ++i) {  // L y = -b
    double s = -b[i];
    for (int k = 0; k < i; ++k) s -= l.at(i, k) * y[k];
    y[i] = s / l.at(i, i);
  }
  for (int i = d - 1; i >= 0; --i) {  // L' x = y
    double s = y[i];
    for (int k = i + 1; k < d; ++k) s -= l.at(k, i) * x[k];
    x[i] = s / l.at(i, i);
  }
  double f = 0.0;
  for (int i = 0; i < d; ++i) f += 0.5 * b[i] * x[i];  // 0.5 b'x = -f*
  return f;  // f* = 0.5 x'Ax + b'x = 0.5 b'x with Ax = -b
}

double objective_gap(const ModelSpec& spec,
                     const std::vector<ClientDataset>& clients,
                     const ModelParams& w0, double alpha, int nu) {
  double f0 = 0.0;
  for (const ClientDataset& c : clients) {
    const Batch full = full_train_batch(c);
    FixedBatchSource src(full);
    const auto path = finetune_path(spec, w0, src, alpha, nu);
    f0 += loss(spec, path[nu], full);
  }
  f0 /= static_cast<double>(clients.size());
  double fstar = 0.0;  // cross-entropy is bounded below by zero
  if (!spec.is_mlp()) {
    const auto& q = spec.as_quadratic();
    if (auto m = quadratic_min(q.a, q.b)) fstar = *m;
  }
  return std::max(0.0, f0 - fstar);
}

std::string compute_bounds_json(const ExperimentConfig& cfg,
                                const ModelSpec& spec,
                                const std::vector<ClientDataset>& clients) {
  const ModelParams anchor = init_params(spec, cfg.seeds[0]);
  TheoryConstants c = estimate_constants(spec, clients, anchor,
                                         cfg.theory.probes, cfg.theory.seed);
  if (cfg.theory.similarity_fallback) c = c.with_similarity_fallback();
  double delta = 1e-3;
  for (const auto& s : cfg.engines)
    if (s.mode == Engine::kHessianFree) {
      delta = s.delta;
      break;
    }
  const int gb = cfg.federation.batch_size;
  const int hb = cfg.federation.hess_batch_size > 0
                     ? cfg.federation.hess_batch_size
                     : cfg.federation.batch_size;
  const int rounds = std::max(1, cfg.federation.rounds);

  BoundReport report;
  bool first = true;
  for (int nu : cfg.theory.nu_sweep) {
    const double gap =
        objective_gap(spec, clients, anchor, cfg.federation.alpha, nu);
    BoundReport one = make_bound_report(
        c, cfg.federation.alpha, cfg.federation.beta, delta,
        cfg.federation.tau, rounds, cfg.federation.participation,
        cfg.dataset.partition.clients, gb, hb, gap, {nu},
        cfg.theory.big_o_constant);
    if (first) {
      report = one;
      first = false;
    } else {
      report.sweep.push_back(one.sweep[0]);
    }
  }
  return bound_report_json(report);
}

struct MetricsRow {
  std::uint64_t seed = 0;
  std::string engine;
  int round = 0;
  int eval_nu = 0;
  double accuracy = -1.0;  // nan when not evaluated
  bool has_accuracy = true;
  double wall_ms = 0.0;
};

std::vector<MetricsRow> parse_metrics_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  if (line == "seed,engine,round,eval_nu,mean_accuracy,wall_ms\r")
    line.pop_back();
  if (line != "seed,engine,round,eval_nu,mean_accuracy,wall_ms")
    throw std::runtime_error(path + ": unexpected header '" + line + "'");
  std::vector<MetricsRow> rows;
  int ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6)
      throw std::runtime_error(path + ":" + std::to_string(ln) +
                               ": expected 6 columns, got " +
                               std::to_string(f.size()));
    MetricsRow r;
    try {
      r.seed = std::stoull(f[0]);
      r.engine = f[1];
      r.round = std::stoi(f[2]);
      r.eval_nu = std::stoi(f[3]);
      if (f[4] == "nan") {
        r.has_accuracy = false;
      } else {
        r.accuracy = std::stod(f[4]);
      }
      r.wall_ms = std::stod(f[5]);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(ln) +
                               ": malformed row '" + line + "'");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");
  return rows;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("config is not valid JSON: ") + e.what());
  }
  if (root.is_object() && root.contains("code_version") && root.contains("config"))
    return parse_config_json(root["config"]);  // manifest round-trip
  return parse_config_json(root);
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string resolved_config_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"path", cfg.dataset.path},
                  {"features", cfg.dataset.features},
                  {"classes", cfg.dataset.classes},
                  {"cluster_spread", cfg.dataset.cluster_spread},
                  {"samples", cfg.dataset.samples},
                  {"seed", cfg.dataset.seed},
                  {"partition",
                   {{"clients", cfg.dataset.partition.clients},
                    {"samples_per_client", cfg.dataset.partition.samples_per_client},
                    {"train_fraction", cfg.dataset.partition.train_fraction},
                    {"dirichlet_alpha", cfg.dataset.partition.dirichlet_alpha},
                    {"seed", cfg.dataset.partition.seed}}}};
  j["model"] = {{"kind", cfg.model.kind},     {"hidden", cfg.model.hidden},
                {"dim", cfg.model.quad_dim},  {"eig_min", cfg.model.eig_min},
                {"eig_max", cfg.model.eig_max}, {"seed", cfg.model.quad_seed}};
  j["federation"] = {{"rounds", cfg.federation.rounds},
                     {"participation", cfg.federation.participation},
                     {"tau", cfg.federation.tau},
                     {"alpha", cfg.federation.alpha},
                     {"beta", cfg.federation.beta},
                     {"batch_size", cfg.federation.batch_size},
                     {"hess_batch_size", cfg.federation.hess_batch_size},
                     {"eval_nu", cfg.federation.eval_nu},
                     {"eval_every", cfg.federation.eval_every},
                     {"eval_stochastic", cfg.federation.eval_stochastic},
                     {"eval_batch", cfg.federation.eval_batch}};
  j["engines"] = json::array();
  for (const auto& s : cfg.engines)
    j["engines"].push_back({{"label", s.label},
                            {"mode", engine_name(s.mode)},
                            {"nu", s.nu},
                            {"delta", s.delta},
                            {"eval_nu", s.eval_nu}});
  j["theory"] = {{"enabled", cfg.theory.enabled},
                 {"probes", cfg.theory.probes},
                 {"nu_sweep", cfg.theory.nu_sweep},
                 {"similarity_fallback", cfg.theory.similarity_fallback},
                 {"big_o_constant", cfg.theory.big_o_constant},
                 {"seed", cfg.theory.seed}};
  j["output"] = {{"dir", cfg.output.dir}, {"timing", cfg.output.timing}};
  j["seeds"] = cfg.seeds;
  j["workers"] = cfg.workers;
  return j.dump(2);
}

std::shared_ptr<const MasterDataset> build_master(const DatasetSection& d) {
  if (d.kind == "synthetic")
    return std::make_shared<MasterDataset>(make_synthetic(
        d.features, d.classes, d.cluster_spread, d.samples, d.seed));
  std::string dir = d.path;
  if (dir.empty()) {
    const char* env = std::getenv(kCifarRootEnv);
    if (env) dir = env;
  }
  if (dir.empty())
    fail("dataset.path",
         std::string("not set and ") + kCifarRootEnv + " is empty");
  const CifarVariant v =
      d.kind == "cifar100" ? CifarVariant::kCifar100 : CifarVariant::kCifar10;
  return std::make_shared<MasterDataset>(load_cifar(dir, v, false));
}

ModelSpec build_model(const ModelSection& m, const MasterDataset& master) {
  if (m.kind == "mlp")
    return ModelSpec::mlp(master.features, m.hidden, master.classes);
  Matrix a = random_spd(m.quad_dim, m.eig_min, m.eig_max, m.quad_seed);
  RngStream stream = RngStream::derive(m.quad_seed, {1});
  Vector b(m.quad_dim);
  for (double& v : b) v = 0.1 * stream.normal();
  return ModelSpec::quadratic(std::move(a), std::move(b));
}

int cmd_run(const std::string& config_path, const CliOptions& opt,
            std::ostream& out, std::ostream& err) {
  try {
    ExperimentConfig cfg = load_config_file(config_path);
    if (!opt.out_override.empty()) cfg.output.dir = opt.out_override;
    if (opt.workers > 0) cfg.workers = opt.workers;
    if (cfg.model.kind != "mlp")
      fail("model.kind",
           "run needs a classifier; quadratic models work with the bounds command");

    const fs::path dir(cfg.output.dir);
    std::vector<fs::path> outputs = {dir / "metrics.csv", dir / "manifest.json"};
    if (cfg.theory.enabled) outputs.push_back(dir / "bounds.json");
    for (const auto& p : outputs)
      if (fs::exists(p) && !opt.force) {
        err << "refusing to overwrite " << p.string() << " (pass --force)\n";
        return 2;
      }

    auto master = build_master(cfg.dataset);
    auto clients = partition_dirichlet(master, cfg.dataset.partition);
    const ModelSpec spec = build_model(cfg.model, *master);

    std::ostringstream csv;
    csv << "seed,engine,round,eval_nu,mean_accuracy,wall_ms\n";
    for (const EngineScenario& s : cfg.engines) {
      FedConfig fc = make_fed_config(cfg, s);
      for (std::uint64_t seed : cfg.seeds) {
        fc.seed = seed;
        const std::vector<RoundRecord> records =
            run_experiment(spec, clients, fc);
        for (const RoundRecord& r : records) {
          csv << seed << ',' << s.label << ',' << r.round << ',' << fc.eval_nu
              << ',';
          if (r.mean_eval_accuracy < 0)
            csv << "nan";
          else
            csv << fmt_double(r.mean_eval_accuracy);
          char wbuf[32];
          std::snprintf(wbuf, sizeof wbuf, "%.3f",
                        cfg.output.timing ? r.wall_ms : 0.0);
          csv << ',' << wbuf << '\n';
        }
        out << s.label << " seed " << seed << ": final accuracy "
            << records.back().mean_eval_accuracy << " after "
            << cfg.federation.rounds << " rounds\n";
      }
    }

    std::string bounds_doc;
    if (cfg.theory.enabled)
      bounds_doc = compute_bounds_json(cfg, spec, clients);

    json manifest;
    manifest["code_version"] = kVersion;
    manifest["command"] = "run";
    manifest["config"] = json::parse(resolved_config_json(cfg));

    fs::create_directories(dir);
    write_file_atomic(dir / "metrics.csv", csv.str());
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    if (cfg.theory.enabled)
      write_file_atomic(dir / "bounds.json", bounds_doc + "\n");
    out << "wrote " << (dir / "metrics.csv").string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_compare(const std::vector<std::string>& metrics_files,
                const CliOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    if (metrics_files.size() < 2)
      throw std::runtime_error("compare needs at least two metrics files");
    std::vector<std::vector<MetricsRow>> files;
    for (const auto& f : metrics_files) files.push_back(parse_metrics_file(f));

    int final_round = -1;
    for (std::size_t i = 0; i < files.size(); ++i) {
      int k = 0;
      for (const auto& r : files[i]) k = std::max(k, r.round);
      if (final_round < 0) final_round = k;
      if (k != final_round)
        throw std::runtime_error(metrics_files[i] + ": round count " +
                                 std::to_string(k) + " does not match " +
                                 std::to_string(final_round));
    }

    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> finals;
    std::map<std::string, std::vector<std::vector<const MetricsRow*>>> traces;
    for (const auto& rows : files) {
      std::map<std::pair<std::string, std::uint64_t>,
               std::vector<const MetricsRow*>> by_run;
      for (const auto& r : rows) {
        if (!finals.count(r.engine)) {
          order.push_back(r.engine);
          finals[r.engine] = {};
          traces[r.engine] = {};
        }
        by_run[{r.engine, r.seed}].push_back(&r);
      }
      for (auto& [key, run] : by_run) {
        const MetricsRow* last = nullptr;
        for (const MetricsRow* r : run)
          if (r->round == final_round) last = r;
        if (!last || !last->has_accuracy)
          throw std::runtime_error("engine " + key.first + " seed " +
                                   std::to_string(key.second) +
                                   ": no final-round accuracy");
        finals[key.first].push_back(last->accuracy);
        traces[key.first].push_back(run);
      }
    }

    double best_mean = 0.0;
    std::map<std::string, std::pair<double, double>> stats;
    for (const auto& name : order) {
      const auto& v = finals[name];
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      const double sd =
          v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
      stats[name] = {mean, sd};
      best_mean = std::max(best_mean, mean);
    }
    const double target = opt.target ? *opt.target : 0.9 * best_mean;

    char line[256];
    std::snprintf(line, sizeof line, "target accuracy: %.6f\n", target);
    out << line;
    out << "engine,runs,final_mean,final_std,mean_round_to_target,reached\n";
    for (const auto& name : order) {
      const auto& [mean, sd] = stats[name];
      int reached = 0;
      double round_sum = 0.0;
      for (const auto& run : traces[name]) {
        int first = -1;
        for (const MetricsRow* r : run)
          if (r->has_accuracy && r->accuracy >= target &&
              (first < 0 || r->round < first))
            first = r->round;
        if (first >= 0) {
          ++reached;
          round_sum += first;
        }
      }
      std::snprintf(line, sizeof line, "%s,%zu,%.6f,%.6f,%s,%d/%zu\n",
                    name.c_str(), finals[name].size(), mean, sd,
                    reached ? fmt_double(round_sum / reached).c_str() : "-",
                    reached, traces[name].size());
      out << line;
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_bounds(const std::string& config_path, const CliOptions& opt,
               std::ostream& out, std::ostream& err) {
  try {
    ExperimentConfig cfg = load_config_file(config_path);
    if (!opt.out_override.empty()) cfg.output.dir = opt.out_override;
    const fs::path dir(cfg.output.dir);
    const fs::path target = dir / "bounds.json";
    if (fs::exists(target) && !opt.force) {
      err << "refusing to overwrite " << target.string() << " (pass --force)\n";
      return 2;
    }
    auto master = build_master(cfg.dataset);
    auto clients = partition_dirichlet(master, cfg.dataset.partition);
    const ModelSpec spec = build_model(cfg.model, *master);
    const std::string doc = compute_bounds_json(cfg, spec, clients);
    fs::create_directories(dir);
    write_file_atomic(target, doc + "\n");
    out << doc << "\n";
    out << "wrote " << target.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace metafl
