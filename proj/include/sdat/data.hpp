#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sdat/tensor.hpp"

namespace sdat {

struct DatasetMeta {
  std::string generator;
  std::uint64_t seed = 0;
  int n = 0;
  int d = 0;
  int k = 0;
  std::map<std::string, double> params;
};

struct LabeledDataset {
  Tensor X;              // n x d
  std::vector<int> y;    // labels in [0, k)
  DatasetMeta meta;
};

// Training-side view of the target domain: labels deliberately absent so they
// cannot traverse the training API.
struct UnlabeledDataset {
  Tensor X;
  DatasetMeta meta;
};

UnlabeledDataset strip_labels(const LabeledDataset& ds);

// Source + target with generator provenance; target labels are retained on
// disk for evaluation only.
struct DomainPair {
  LabeledDataset source;
  LabeledDataset target;
  std::string shift;
};

// Two interleaved unit half-circles: class 0 on the circle centered at the
// origin, class 1 on the circle centered at (1, 0.5), both radius 1, with
// isotropic Gaussian noise of the given std added afterwards.
LabeledDataset make_two_moons(int n, double noise_std, std::uint64_t seed);

// Rigid rotation about the dataset centroid (mean moved to the origin,
// rotate, move back). Labels preserved.
LabeledDataset rotate(const LabeledDataset& ds, double angle_deg);

// k Gaussian clusters in d dimensions; centers drawn uniform in [-4, 4]^d from
// the seed, then offset by centers_shift in every coordinate. sample_stream
// selects an independent draw with the same centers, so a source/target pair
// shares its cluster layout but not its noise.
LabeledDataset make_blobs(int n, int k, int d, double centers_shift, double cluster_std,
                          std::uint64_t seed, std::uint64_t sample_stream = 1);

// Resamples exactly round(fraction * n) labels, chosen without replacement,
// uniformly among the k - 1 other classes (so every touched label changes).
LabeledDataset inject_label_noise(const LabeledDataset& ds, double fraction, std::uint64_t seed);

// CSV with header f0,...,f{d-1},label, one row per sample, LF line endings,
// 17-significant-digit decimal floats; sidecar <name>.meta.json carries the
// meta record. Round-trips are bit exact.
void save_csv(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_csv(const std::string& path);

}  // namespace sdat
