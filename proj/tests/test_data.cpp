#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "metafl/data.hpp"

using namespace metafl;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const MasterDataset> shared_master(MasterDataset m) {
  return std::make_shared<MasterDataset>(std::move(m));
}

}  // namespace

TEST_CASE("synthetic pool has balanced labels in the unit box") {
  const MasterDataset m = make_synthetic(5, 3, 0.2, 100, 7);
  REQUIRE(m.size() == 100);
  REQUIRE(m.features == 5);
  REQUIRE(m.classes == 3);
  REQUIRE(m.inputs.size() == 500);

  std::vector<int> counts(3, 0);
  for (int lb : m.labels) {
    REQUIRE(lb >= 0);
    REQUIRE(lb < 3);
    ++counts[lb];
  }
  const int lo = *std::min_element(counts.begin(), counts.end());
  const int hi = *std::max_element(counts.begin(), counts.end());
  CHECK(hi - lo <= 1);

  for (float v : m.inputs) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  const MasterDataset again = make_synthetic(5, 3, 0.2, 100, 7);
  CHECK(again.inputs == m.inputs);
  CHECK(again.labels == m.labels);
  const MasterDataset other = make_synthetic(5, 3, 0.2, 100, 8);
  CHECK(other.inputs != m.inputs);
}

TEST_CASE("synthetic classes are separable at small spread") {
  const MasterDataset m = make_synthetic(8, 4, 0.05, 400, 9);
  // per-class centroid distance should dwarf within-class scatter
  std::vector<std::vector<double>> mean(4, std::vector<double>(8, 0.0));
  std::vector<int> n(4, 0);
  for (int i = 0; i < m.size(); ++i) {
    ++n[m.labels[i]];
    for (int f = 0; f < 8; ++f) mean[m.labels[i]][f] += m.inputs[i * 8 + f];
  }
  for (int c = 0; c < 4; ++c)
    for (int f = 0; f < 8; ++f) mean[c][f] /= n[c];
  double min_gap = 1e9;
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) {
      double d2 = 0.0;
      for (int f = 0; f < 8; ++f)
        d2 += (mean[a][f] - mean[b][f]) * (mean[a][f] - mean[b][f]);
      min_gap = std::min(min_gap, std::sqrt(d2));
    }
  CHECK(min_gap > 0.2);
}

TEST_CASE("dirichlet partition splits every client") {
  auto master = shared_master(make_synthetic(6, 4, 0.3, 2000, 11));
  PartitionConfig cfg;
  cfg.clients = 8;
  cfg.samples_per_client = 50;
  cfg.train_fraction = 0.8;
  cfg.dirichlet_alpha = 1.0;
  cfg.seed = 12;
  const auto clients = partition_dirichlet(master, cfg);
  REQUIRE(clients.size() == 8);
  for (const ClientDataset& c : clients) {
    CHECK(c.train_idx.size() == 40);
    CHECK(c.test_idx.size() == 10);
    for (int idx : c.train_idx) {
      CHECK(idx >= 0);
      CHECK(idx < master->size());
    }
    REQUIRE(c.class_pmf.size() == 4);
    double total = 0.0;
    for (double p : c.class_pmf) {
      CHECK(p >= 0.0);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(c.master == master);
  }

  const auto again = partition_dirichlet(master, cfg);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    CHECK(again[i].train_idx == clients[i].train_idx);
    CHECK(again[i].test_idx == clients[i].test_idx);
  }
}

TEST_CASE("small concentration concentrates each client on few classes") {
  auto master = shared_master(make_synthetic(4, 10, 0.3, 5000, 13));
  PartitionConfig cfg;
  cfg.clients = 12;
  cfg.samples_per_client = 100;
  cfg.dirichlet_alpha = 0.01;
  cfg.seed = 14;
  const auto clients = partition_dirichlet(master, cfg);
  int concentrated = 0;
  for (const ClientDataset& c : clients) {
    std::vector<int> counts(10, 0);
    for (int idx : c.train_idx) ++counts[master->labels[idx]];
    const int top = *std::max_element(counts.begin(), counts.end());
    if (top >= static_cast<int>(0.9 * c.train_idx.size())) ++concentrated;
  }
  CHECK(concentrated >= 10);  // near one-hot mixtures with alpha = 0.01
}

TEST_CASE("clients draw different mixtures") {
  auto master = shared_master(make_synthetic(4, 6, 0.3, 3000, 15));
  PartitionConfig cfg;
  cfg.clients = 4;
  cfg.samples_per_client = 30;
  cfg.dirichlet_alpha = 0.5;
  cfg.seed = 16;
  const auto clients = partition_dirichlet(master, cfg);
  CHECK(clients[0].class_pmf != clients[1].class_pmf);
  CHECK(clients[1].class_pmf != clients[2].class_pmf);
}

TEST_CASE("partition validates its inputs") {
  auto master = shared_master(make_synthetic(4, 3, 0.3, 300, 17));
  PartitionConfig cfg;
  cfg.clients = 2;
  cfg.samples_per_client = 1;  // cannot hold a train and a test row
  cfg.seed = 18;
  CHECK_THROWS_AS(partition_dirichlet(master, cfg), std::invalid_argument);
  cfg.samples_per_client = 10;
  cfg.dirichlet_alpha = 0.0;
  CHECK_THROWS_AS(partition_dirichlet(master, cfg), std::invalid_argument);
}

TEST_CASE("a class missing from the pool is reported by index") {
  MasterDataset m;
  m.features = 2;
  m.classes = 3;
  m.inputs = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f};
  m.labels = {0, 1, 0, 1};  // class 2 absent
  auto master = shared_master(std::move(m));
  PartitionConfig cfg;
  cfg.clients = 1;
  cfg.samples_per_client = 4;
  cfg.seed = 19;
  try {
    partition_dirichlet(master, cfg);
    FAIL("expected an error for the missing class");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
  }
}

TEST_CASE("batches sample the train split with replacement") {
  auto master = shared_master(make_synthetic(3, 3, 0.3, 600, 21));
  PartitionConfig cfg;
  cfg.clients = 3;
  cfg.samples_per_client = 20;
  cfg.seed = 22;
  const auto clients = partition_dirichlet(master, cfg);
  const ClientDataset& c = clients[0];

  RngStream s1(100), s2(100);
  const Batch b1 = sample_batch(c, 64, s1);  // larger than the split: fine
  const Batch b2 = sample_batch(c, 64, s2);
  REQUIRE(b1.size() == 64);
  CHECK(b1.inputs.data == b2.inputs.data);
  CHECK(b1.labels == b2.labels);

  // every sampled row must exist verbatim in the train split
  std::set<std::vector<double>> rows;
  for (int idx : c.train_idx) {
    std::vector<double> r(3);
    for (int f = 0; f < 3; ++f) r[f] = master->inputs[idx * 3 + f];
    rows.insert(r);
  }
  for (int i = 0; i < b1.size(); ++i) {
    std::vector<double> r(3);
    for (int f = 0; f < 3; ++f) r[f] = b1.inputs.at(i, f);
    CHECK(rows.count(r) == 1);
  }
}

TEST_CASE("full batches materialize the exact split") {
  auto master = shared_master(make_synthetic(3, 3, 0.3, 600, 23));
  PartitionConfig cfg;
  cfg.clients = 2;
  cfg.samples_per_client = 25;
  cfg.seed = 24;
  const auto clients = partition_dirichlet(master, cfg);
  const Batch train = full_train_batch(clients[1]);
  const Batch test = full_test_batch(clients[1]);
  REQUIRE(train.size() == static_cast<int>(clients[1].train_idx.size()));
  REQUIRE(test.size() == static_cast<int>(clients[1].test_idx.size()));
  for (int i = 0; i < train.size(); ++i) {
    const int idx = clients[1].train_idx[i];
    CHECK(train.labels[i] == master->labels[idx]);
    for (int f = 0; f < 3; ++f)
      CHECK(train.inputs.at(i, f) ==
            static_cast<double>(master->inputs[idx * 3 + f]));
  }
}

TEST_CASE("image loader names the broken file and its size") {
  const fs::path dir =
      fs::temp_directory_path() / "metafl_cifar_broken_test";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "data_batch_1.bin", std::ios::binary);
    const std::vector<char> junk(1000, 'x');
    f.write(junk.data(), junk.size());
  }
  try {
    load_cifar(dir.string(), CifarVariant::kCifar10, false);
    FAIL("expected an error for the truncated file");
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    CHECK(msg.find("data_batch_1.bin") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("image loader reports a missing directory") {
  CHECK_THROWS_AS(
      load_cifar("/nonexistent/dir/for/sure", CifarVariant::kCifar10, false),
      std::exception);
}
