#include "metafl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace metafl {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

Batch materialize(const MasterDataset& m, const std::vector<int>& rows) {
  Batch b;
  b.inputs = Matrix(static_cast<int>(rows.size()), m.features);
  b.labels.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const float* src = m.inputs.data() + static_cast<std::size_t>(rows[r]) * m.features;
    double* dst = b.inputs.row(static_cast<int>(r));
    for (int j = 0; j < m.features; ++j) dst[j] = static_cast<double>(src[j]);
    b.labels[r] = m.labels[rows[r]];
  }
  return b;
}

int draw_categorical(const std::vector<double>& pmf, RngStream& stream) {
  const double u = stream.uniform();
  double acc = 0.0;
  int last_positive = -1;
  for (std::size_t c = 0; c < pmf.size(); ++c) {
    if (pmf[c] > 0.0) last_positive = static_cast<int>(c);
    acc += pmf[c];
    if (u < acc) return static_cast<int>(c);
  }
  return last_positive;  // u landed on accumulated rounding slack
}

}  // namespace

MasterDataset make_synthetic(int features, int classes, double cluster_spread,
                             int samples, std::uint64_t seed) {
  require(features >= 1, "make_synthetic: features must be >= 1");
  require(classes >= 2, "make_synthetic: classes must be >= 2");
  require(samples >= classes,
          "make_synthetic: need at least one sample per class");
  require(cluster_spread >= 0.0, "make_synthetic: spread must be >= 0");

  RngStream stream(seed);
  std::vector<double> means(static_cast<std::size_t>(classes) * features);
  for (double& v : means) v = stream.uniform();

  std::vector<double> raw(static_cast<std::size_t>(samples) * features);
  MasterDataset out;
  out.features = features;
  out.classes = classes;
  out.labels.resize(samples);
  for (int s = 0; s < samples; ++s) {
    const int c = s % classes;  // balanced within one
    out.labels[s] = c;
    for (int j = 0; j < features; ++j)
      raw[static_cast<std::size_t>(s) * features + j] =
          means[static_cast<std::size_t>(c) * features + j] +
          cluster_spread * stream.normal();
  }
  // min-max per feature onto [0,1]
  out.inputs.resize(raw.size());
  for (int j = 0; j < features; ++j) {
    double lo = raw[j], hi = raw[j];
    for (int s = 1; s < samples; ++s) {
      const double v = raw[static_cast<std::size_t>(s) * features + j];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double span = hi - lo;
    for (int s = 0; s < samples; ++s) {
      const double v = raw[static_cast<std::size_t>(s) * features + j];
      out.inputs[static_cast<std::size_t>(s) * features + j] =
          span > 0.0 ? static_cast<float>((v - lo) / span) : 0.5f;
    }
  }
  return out;
}

MasterDataset load_cifar(const std::string& dir, CifarVariant variant,
                         bool test_rows) {
  constexpr int kPixels = 3072;
  const bool c100 = variant == CifarVariant::kCifar100;
  const int label_bytes = c100 ? 2 : 1;
  const int record = label_bytes + kPixels;
  const int per_file = c100 ? (test_rows ? 10000 : 50000) : 10000;

  std::vector<std::string> files;
  if (c100) {
    files.push_back(dir + "/" + (test_rows ? "test.bin" : "train.bin"));
  } else if (test_rows) {
    files.push_back(dir + "/test_batch.bin");
  } else {
    for (int i = 1; i <= 5; ++i)
      files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  }

  MasterDataset out;
  out.features = kPixels;
  out.classes = c100 ? 100 : 10;
  out.inputs.reserve(static_cast<std::size_t>(per_file) * files.size() * kPixels);
  out.labels.reserve(static_cast<std::size_t>(per_file) * files.size());

  std::vector<unsigned char> buf(static_cast<std::size_t>(record) * per_file);
  for (const std::string& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in)
      throw std::runtime_error("cannot open " + f + " (expected " +
                               std::to_string(buf.size()) + " bytes)");
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw std::runtime_error(f + " truncated: got " +
                               std::to_string(in.gcount()) + " of " +
                               std::to_string(buf.size()) + " bytes");
    char extra;
    if (in.read(&extra, 1))
      throw std::runtime_error(f + " larger than the expected " +
                               std::to_string(buf.size()) + " bytes");
    for (int r = 0; r < per_file; ++r) {
      const unsigned char* rec = buf.data() + static_cast<std::size_t>(r) * record;
      const int label = c100 ? rec[1] : rec[0];  // CIFAR-100: fine label
      if (label >= out.classes)
        throw std::runtime_error(f + " record " + std::to_string(r) +
                                 ": label " + std::to_string(label) +
                                 " outside [0, " + std::to_string(out.classes) + ")");
      out.labels.push_back(label);
      for (int j = 0; j < kPixels; ++j)
        out.inputs.push_back(static_cast<float>(rec[label_bytes + j]) / 255.0f);
    }
  }
  return out;
}

std::vector<ClientDataset> partition_dirichlet(
    std::shared_ptr<const MasterDataset> master, const PartitionConfig& cfg) {
  require(master != nullptr && master->size() >= 1,
          "partition_dirichlet: empty master dataset");
  require(cfg.clients >= 1, "partition.clients: must be >= 1");
  require(cfg.samples_per_client >= 2,
          "partition.samples_per_client: must be >= 2");
  require(cfg.dirichlet_alpha > 0.0, "partition.dirichlet_alpha: must be > 0");
  const int train_n =
      static_cast<int>(std::floor(cfg.train_fraction * cfg.samples_per_client));
  require(train_n >= 1 && train_n < cfg.samples_per_client,
          "partition.train_fraction: both splits must be non-empty");

  // master rows grouped by class, once
  std::vector<std::vector<int>> by_class(master->classes);
  for (int s = 0; s < master->size(); ++s)
    by_class[master->labels[s]].push_back(s);

  const std::vector<double> alpha(master->classes, cfg.dirichlet_alpha);
  std::vector<ClientDataset> clients(cfg.clients);
  for (int i = 0; i < cfg.clients; ++i) {
    ClientDataset& cd = clients[i];
    cd.master = master;
    RngStream pmf_stream = RngStream::derive(
        cfg.seed, {static_cast<std::uint64_t>(i), tag(StreamPurpose::kClientPmf)});
    cd.class_pmf = pmf_stream.dirichlet(alpha);
    RngStream draw_stream = RngStream::derive(
        cfg.seed, {static_cast<std::uint64_t>(i), tag(StreamPurpose::kClientDraw)});
    std::vector<int> rows(cfg.samples_per_client);
    for (int s = 0; s < cfg.samples_per_client; ++s) {
      const int c = draw_categorical(cd.class_pmf, draw_stream);
      if (c < 0 || by_class[c].empty())
        throw std::runtime_error("partition: class " + std::to_string(c) +
                                 " has no rows in the master dataset");
      const auto& pool = by_class[c];
      rows[s] = pool[draw_stream.below(pool.size())];
    }
    // draws are i.i.d., so a prefix split is already a uniform random split
    cd.train_idx.assign(rows.begin(), rows.begin() + train_n);
    cd.test_idx.assign(rows.begin() + train_n, rows.end());
  }
  return clients;
}

Batch sample_batch(const ClientDataset& client, int batch_size,
                   RngStream& stream) {
  require(batch_size >= 1, "sample_batch: batch_size must be >= 1");
  require(!client.train_idx.empty(), "sample_batch: client train split empty");
  std::vector<int> rows(batch_size);
  for (int r = 0; r < batch_size; ++r)
    rows[r] = client.train_idx[stream.below(client.train_idx.size())];
  return materialize(*client.master, rows);
}

Batch full_train_batch(const ClientDataset& client) {
  require(!client.train_idx.empty(), "client train split empty");
  return materialize(*client.master, client.train_idx);
}

Batch full_test_batch(const ClientDataset& client) {
  require(!client.test_idx.empty(), "client test split empty");
  return materialize(*client.master, client.test_idx);
}

}  // namespace metafl
