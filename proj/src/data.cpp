#include "distmark/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "distmark/errors.hpp"

namespace distmark {

namespace {

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

void check_marker_compatible(const DistilledDataset& dataset,
                             const MarkerSet& marker) {
  const auto& d = marker.deltas;
  if (d.rank() != 4 || d.dim(0) != static_cast<std::size_t>(dataset.num_classes) ||
      d.dim(1) != dataset.channels() || d.dim(2) != dataset.height() ||
      d.dim(3) != dataset.width()) {
    raise(ErrorCode::ShapeMismatch,
          "marker deltas do not match dataset class count or image shape");
  }
}

void check_partition_compatible(const DistilledDataset& dataset,
                                const SubsetPartition& partition) {
  const std::size_t n = dataset.size();
  if (partition.manipulation_indices.size() + partition.utility_indices.size() != n) {
    raise(ErrorCode::ShapeMismatch, "partition does not cover the dataset");
  }
  for (std::size_t i : partition.manipulation_indices) {
    if (i >= n) raise(ErrorCode::ShapeMismatch, "partition index out of range");
  }
}

}  // namespace

void DistilledDataset::validate() const {
  if (images.rank() != 4) {
    raise(ErrorCode::ShapeMismatch, "images must be [N, C, H, W]");
  }
  if (images.dim(0) != labels.size()) {
    raise(ErrorCode::ShapeMismatch, "image count does not match label count");
  }
  if (num_classes <= 0) {
    raise(ErrorCode::ShapeMismatch, "num_classes must be positive");
  }
  for (std::int32_t y : labels) {
    if (y < 0 || y >= num_classes) {
      raise(ErrorCode::ShapeMismatch, "label outside {0..K-1}");
    }
  }
  for (float v : images.data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      raise(ErrorCode::ShapeMismatch, "pixel outside [0, 1] or non-finite");
    }
  }
  if (balanced &&
      labels.size() != static_cast<std::size_t>(num_classes) *
                           static_cast<std::size_t>(images_per_class)) {
    raise(ErrorCode::Unbalanced, "balanced dataset must have K * IPC samples");
  }
}

const char* marker_kind_name(MarkerKind kind) {
  return kind == MarkerKind::CVM ? "cvm" : "ustm";
}

const char* marker_origin_name(MarkerOrigin origin) {
  return origin == MarkerOrigin::Optimized ? "optimized" : "key_generated";
}

MarkerKind marker_kind_from_name(const std::string& name) {
  if (name == "cvm") return MarkerKind::CVM;
  if (name == "ustm") return MarkerKind::USTM;
  raise(ErrorCode::IoError, "unknown marker kind: " + name);
}

MarkerOrigin marker_origin_from_name(const std::string& name) {
  if (name == "optimized") return MarkerOrigin::Optimized;
  if (name == "key_generated") return MarkerOrigin::KeyGenerated;
  raise(ErrorCode::IoError, "unknown marker origin: " + name);
}

float MarkerSet::max_abs() const {
  float m = 0.0f;
  for (float v : deltas.data) m = std::max(m, std::fabs(v));
  return m;
}

std::string MarkerSet::checksum() const {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(deltas.data.data());
  auto digest = sha256(bytes, deltas.data.size() * sizeof(float));
  return hex_from_bytes(std::vector<std::uint8_t>(digest.begin(), digest.end()));
}

const char* test_kind_name(TestKind kind) {
  switch (kind) {
    case TestKind::Standard: return "standard";
    case TestKind::Verification: return "verification";
    case TestKind::Tracing: return "tracing";
  }
  return "unknown";
}

TestKind test_kind_from_name(const std::string& name) {
  if (name == "standard") return TestKind::Standard;
  if (name == "verification") return TestKind::Verification;
  if (name == "tracing") return TestKind::Tracing;
  raise(ErrorCode::IoError, "unknown test set kind: " + name);
}

bool SubsetPartition::contains_manipulated(std::size_t index) const {
  return std::binary_search(manipulation_indices.begin(),
                            manipulation_indices.end(), index);
}

SubsetPartition partition_dataset(const DistilledDataset& dataset, double alpha,
                                  std::uint64_t seed) {
  dataset.validate();
  if (!(alpha > 0.0 && alpha < 1.0)) {
    raise(ErrorCode::AlphaTooSmall, "alpha must lie in (0, 1)");
  }

  // Group indices by class and require exact balance.
  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(dataset.num_classes));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
  }
  for (const auto& group : by_class) {
    if (group.size() != static_cast<std::size_t>(dataset.images_per_class)) {
      raise(ErrorCode::Unbalanced, "per-class sample counts differ");
    }
  }

  const auto per_class =
      static_cast<std::size_t>(std::lround(alpha * dataset.images_per_class));
  if (per_class == 0) {
    raise(ErrorCode::AlphaTooSmall,
          "alpha selects zero samples per class at this IPC");
  }

  SubsetPartition partition;
  partition.ratio = alpha;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto group = by_class[k];
    GaussianStream stream(splitmix64_scramble(seed ^ (0x51ED270B9ull + k)));
    deterministic_shuffle(group, stream);
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (i < per_class) {
        partition.manipulation_indices.push_back(group[i]);
      } else {
        partition.utility_indices.push_back(group[i]);
      }
    }
  }
  std::sort(partition.manipulation_indices.begin(),
            partition.manipulation_indices.end());
  std::sort(partition.utility_indices.begin(), partition.utility_indices.end());
  return partition;
}

DistilledDataset apply_cvm(const DistilledDataset& dataset, const MarkerSet& cvm,
                           const SubsetPartition& partition) {
  check_marker_compatible(dataset, cvm);
  check_partition_compatible(dataset, partition);

  DistilledDataset out = dataset;
  const std::size_t plane = dataset.channels() * dataset.height() * dataset.width();
  for (std::size_t i : partition.manipulation_indices) {
    const auto k = static_cast<std::size_t>(dataset.labels[i]);
    float* img = out.images.data.data() + i * plane;
    const float* delta = cvm.deltas.data.data() + k * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      img[p] = clamp01(img[p] + delta[p]);
    }
  }
  return out;
}

ProtectedRelease build_release(const DistilledDataset& dataset,
                               const MarkerSet& cvm, const MarkerSet& ustm,
                               const SubsetPartition& partition, int user_id) {
  if (cvm.kind != MarkerKind::CVM || ustm.kind != MarkerKind::USTM) {
    raise(ErrorCode::KindMismatch,
          "build_release expects one CVM and one USTM marker set");
  }
  check_marker_compatible(dataset, cvm);
  check_marker_compatible(dataset, ustm);
  check_partition_compatible(dataset, partition);

  ProtectedRelease release;
  release.user_id = user_id;
  release.cvm = cvm;
  release.ustm = ustm;
  release.partition = partition;
  release.dataset = dataset;

  // Both markers are summed before the single clamp.
  const std::size_t plane = dataset.channels() * dataset.height() * dataset.width();
  for (std::size_t i : partition.manipulation_indices) {
    const auto k = static_cast<std::size_t>(dataset.labels[i]);
    float* img = release.dataset.images.data.data() + i * plane;
    const float* dc = cvm.deltas.data.data() + k * plane;
    const float* du = ustm.deltas.data.data() + k * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      img[p] = clamp01(img[p] + dc[p] + du[p]);
    }
  }
  return release;
}

std::vector<TestSet> build_test_sets(const DistilledDataset& eval_data,
                                     const MarkerSet& cvm,
                                     const std::map<int, MarkerSet>& ustms) {
  check_marker_compatible(eval_data, cvm);
  for (const auto& [user_id, ustm] : ustms) {
    check_marker_compatible(eval_data, ustm);
  }

  const std::size_t plane =
      eval_data.channels() * eval_data.height() * eval_data.width();

  std::vector<TestSet> sets;
  sets.reserve(2 + ustms.size());

  TestSet standard;
  standard.images = eval_data.images;
  standard.labels = eval_data.labels;
  standard.kind = TestKind::Standard;
  sets.push_back(std::move(standard));

  TestSet verification;
  verification.images = eval_data.images;
  verification.labels = eval_data.labels;
  verification.kind = TestKind::Verification;
  for (std::size_t i = 0; i < eval_data.size(); ++i) {
    const auto k = static_cast<std::size_t>(eval_data.labels[i]);
    float* img = verification.images.data.data() + i * plane;
    const float* delta = cvm.deltas.data.data() + k * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      img[p] = clamp01(img[p] + delta[p]);
    }
  }
  const Tensor& veri_images = verification.images;
  sets.push_back(verification);

  // Tracing sets stack the user marker on top of the (clamped) verification
  // images; std::map iteration gives ascending user ids.
  for (const auto& [user_id, ustm] : ustms) {
    TestSet tracing;
    tracing.images = veri_images;
    tracing.labels = eval_data.labels;
    tracing.kind = TestKind::Tracing;
    tracing.user_id = user_id;
    for (std::size_t i = 0; i < eval_data.size(); ++i) {
      const auto k = static_cast<std::size_t>(eval_data.labels[i]);
      float* img = tracing.images.data.data() + i * plane;
      const float* delta = ustm.deltas.data.data() + k * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        img[p] = clamp01(img[p] + delta[p]);
      }
    }
    sets.push_back(std::move(tracing));
  }
  return sets;
}

MarkerSet generate_ustm_init(const UserKey& key, int num_classes,
                             std::size_t channels, std::size_t height,
                             std::size_t width, double sigma) {
  if (!(sigma > 0.0)) {
    raise(ErrorCode::InvalidConfig, "ustm sigma must be positive");
  }
  if (num_classes <= 0) {
    raise(ErrorCode::InvalidConfig, "num_classes must be positive");
  }

  MarkerSet marker;
  marker.kind = MarkerKind::USTM;
  marker.origin = MarkerOrigin::KeyGenerated;
  marker.key_fingerprint = key.fingerprint();
  marker.deltas = Tensor({static_cast<std::size_t>(num_classes), channels,
                          height, width});

  const std::size_t plane = channels * height * width;
  for (std::size_t k = 0; k < static_cast<std::size_t>(num_classes); ++k) {
    GaussianStream stream(
        splitmix64_scramble(key.seed ^ static_cast<std::uint64_t>(k)));
    float* out = marker.deltas.data.data() + k * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      out[p] = static_cast<float>(sigma * stream.next_normal());
    }
  }
  return marker;
}

}  // namespace distmark
