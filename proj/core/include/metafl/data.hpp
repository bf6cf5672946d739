#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "metafl/model.hpp"
#include "metafl/rng.hpp"

namespace metafl {

// Pool every client draws from. Inputs live in [0,1] and are stored as
// float32 (a 50000 x 3072 image set in doubles would be 1.2 GB); batches
// materialize doubles on demand so all model arithmetic stays in double.
struct MasterDataset {
  int features = 0;
  int classes = 0;
  std::vector<float> inputs;  // size() x features, row-major
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
};

// A client's view: index lists into a shared master plus the class mixture
// it was drawn from. Draws are with replacement, so clients may share rows.
struct ClientDataset {
  std::shared_ptr<const MasterDataset> master;
  std::vector<int> train_idx;
  std::vector<int> test_idx;
  std::vector<double> class_pmf;
};

struct PartitionConfig {
  int clients = 0;
  int samples_per_client = 0;
  double train_fraction = 0.8;
  double dirichlet_alpha = 1.0;  // small => each client sees few classes
  std::uint64_t seed = 0;
};

// Gaussian class clusters with uniformly placed centroids, min-max rescaled
// to [0,1] per feature. Labels are assigned round-robin so counts per class
// differ by at most one.
MasterDataset make_synthetic(int features, int classes, double cluster_spread,
                             int samples, std::uint64_t seed);

enum class CifarVariant { kCifar10, kCifar100 };

// Binary batch files: each record is one label byte (CIFAR-100: coarse and
// fine bytes; the fine label is kept) followed by 3072 channel-major pixel
// bytes, scaled to [0,1]. test_rows selects the held-out file(s).
MasterDataset load_cifar(const std::string& dir, CifarVariant variant,
                         bool test_rows = false);

std::vector<ClientDataset> partition_dirichlet(
    std::shared_ptr<const MasterDataset> master, const PartitionConfig& cfg);

// batch_size rows drawn uniformly with replacement from the train split.
Batch sample_batch(const ClientDataset& client, int batch_size,
                   RngStream& stream);

Batch full_train_batch(const ClientDataset& client);
Batch full_test_batch(const ClientDataset& client);

}  // namespace metafl
