#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "distmark/rng.hpp"
#include "distmark/tensor.hpp"

namespace distmark {

// Labeled image collection in [0, 1], the asset under protection. Balanced
// datasets carry exactly images_per_class samples of every class.
struct DistilledDataset {
  Tensor images;                    // [N, C, H, W]
  std::vector<std::int32_t> labels; // [N], values in {0..num_classes-1}
  int num_classes = 0;
  int images_per_class = 0;
  bool balanced = true;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  void validate() const;
};

enum class MarkerKind { CVM, USTM };
enum class MarkerOrigin { Optimized, KeyGenerated };

const char* marker_kind_name(MarkerKind kind);
const char* marker_origin_name(MarkerOrigin origin);
MarkerKind marker_kind_from_name(const std::string& name);
MarkerOrigin marker_origin_from_name(const std::string& name);

// One additive perturbation per class.
struct MarkerSet {
  Tensor deltas;  // [K, C, H, W]
  MarkerKind kind = MarkerKind::CVM;
  MarkerOrigin origin = MarkerOrigin::Optimized;
  std::string key_fingerprint;  // hex SHA-256 of the secret, empty for CVM

  std::size_t num_classes() const { return deltas.dim(0); }
  float max_abs() const;
  std::string checksum() const;  // SHA-256 over the raw delta bytes
};

// Disjoint split of a dataset into the marker-carrying subset S and the
// untouched utility subset B.
struct SubsetPartition {
  std::vector<std::size_t> manipulation_indices;  // sorted
  std::vector<std::size_t> utility_indices;       // sorted
  double ratio = 0.0;

  bool contains_manipulated(std::size_t index) const;
};

struct ProtectedRelease {
  DistilledDataset dataset;
  int user_id = 0;
  MarkerSet cvm;
  MarkerSet ustm;
  SubsetPartition partition;
};

enum class TestKind { Standard, Verification, Tracing };

const char* test_kind_name(TestKind kind);
TestKind test_kind_from_name(const std::string& name);

struct TestSet {
  Tensor images;
  std::vector<std::int32_t> labels;
  TestKind kind = TestKind::Standard;
  int user_id = -1;  // set only for tracing sets

  std::size_t size() const { return labels.size(); }
};

// Per-class exact-count split: round(alpha * IPC) indices of every class go
// into S, chosen by a seeded shuffle. Same seed, same indices.
SubsetPartition partition_dataset(const DistilledDataset& dataset, double alpha,
                                  std::uint64_t seed);

// images[i] <- clamp(images[i] + delta_label, 0, 1) for i in S; B untouched.
DistilledDataset apply_cvm(const DistilledDataset& dataset, const MarkerSet& cvm,
                           const SubsetPartition& partition);

// Release for one user: both markers summed, one final clamp, B untouched.
ProtectedRelease build_release(const DistilledDataset& dataset,
                               const MarkerSet& cvm, const MarkerSet& ustm,
                               const SubsetPartition& partition, int user_id);

// T_standard, T_verification, and one tracing set per user, in ascending
// user-id order. Markers apply to every sample here; the alpha split only
// matters at training time.
std::vector<TestSet> build_test_sets(const DistilledDataset& eval_data,
                                     const MarkerSet& cvm,
                                     const std::map<int, MarkerSet>& ustms);

// Key-derived user marker: per-class Gaussian stream seeded from the user key
// and the class index. Bitwise reproducible from the key alone.
MarkerSet generate_ustm_init(const UserKey& key, int num_classes,
                             std::size_t channels, std::size_t height,
                             std::size_t width, double sigma);

}  // namespace distmark
