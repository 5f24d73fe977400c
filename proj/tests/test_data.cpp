#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "distmark/data.hpp"
#include "distmark/errors.hpp"

using namespace distmark;

namespace {

DistilledDataset make_dataset(int num_classes, int ipc, std::size_t c = 1,
                              std::size_t h = 4, std::size_t w = 4,
                              std::uint64_t seed = 17) {
  DistilledDataset data;
  data.num_classes = num_classes;
  data.images_per_class = ipc;
  std::size_t n = static_cast<std::size_t>(num_classes) * ipc;
  data.images = Tensor({n, c, h, w});
  GaussianStream stream(seed);
  for (auto& v : data.images.data) {
    v = static_cast<float>(stream.next_uniform());
  }
  for (std::size_t i = 0; i < n; ++i) {
    data.labels.push_back(static_cast<std::int32_t>(i / ipc));
  }
  return data;
}

MarkerSet make_marker(MarkerKind kind, int num_classes, std::size_t c,
                      std::size_t h, std::size_t w, float scale,
                      std::uint64_t seed) {
  MarkerSet marker;
  marker.kind = kind;
  marker.deltas = Tensor({static_cast<std::size_t>(num_classes), c, h, w});
  GaussianStream stream(seed);
  for (auto& v : marker.deltas.data) {
    v = scale * static_cast<float>(stream.next_uniform() - 0.5);
  }
  return marker;
}

}  // namespace

TEST_CASE("partition draws the exact per-class count") {
  DistilledDataset data = make_dataset(10, 50);
  SubsetPartition part = partition_dataset(data, 0.2, 11);

  CHECK(part.manipulation_indices.size() == 100);
  CHECK(part.utility_indices.size() == 400);
  CHECK(std::is_sorted(part.manipulation_indices.begin(),
                       part.manipulation_indices.end()));

  std::vector<int> per_class(10, 0);
  for (std::size_t i : part.manipulation_indices) {
    ++per_class[static_cast<std::size_t>(data.labels[i])];
  }
  for (int c : per_class) CHECK(c == 10);

  std::set<std::size_t> all(part.manipulation_indices.begin(),
                            part.manipulation_indices.end());
  all.insert(part.utility_indices.begin(), part.utility_indices.end());
  CHECK(all.size() == 500);
}

TEST_CASE("partition is seed-deterministic and seed-sensitive") {
  DistilledDataset data = make_dataset(4, 10);
  SubsetPartition a = partition_dataset(data, 0.2, 5);
  SubsetPartition b = partition_dataset(data, 0.2, 5);
  SubsetPartition c = partition_dataset(data, 0.2, 6);
  CHECK(a.manipulation_indices == b.manipulation_indices);
  CHECK(a.manipulation_indices != c.manipulation_indices);
  CHECK(a.ratio == 0.2);
}

TEST_CASE("partition rejects ratios that select nothing") {
  DistilledDataset data = make_dataset(4, 2);
  CHECK_THROWS_AS(partition_dataset(data, 0.2, 1), Error);  // round(0.4) == 0
  CHECK_THROWS_AS(partition_dataset(data, 0.0, 1), Error);
  CHECK_THROWS_AS(partition_dataset(data, 1.0, 1), Error);
  CHECK_NOTHROW(partition_dataset(data, 0.5, 1));
}

TEST_CASE("partition membership lookup agrees with the index list") {
  DistilledDataset data = make_dataset(3, 6);
  SubsetPartition part = partition_dataset(data, 0.5, 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    bool in_s = std::find(part.manipulation_indices.begin(),
                          part.manipulation_indices.end(),
                          i) != part.manipulation_indices.end();
    CHECK(part.contains_manipulated(i) == in_s);
  }
}

TEST_CASE("dataset validation rejects malformed collections") {
  DistilledDataset data = make_dataset(3, 4);
  CHECK_NOTHROW(data.validate());

  DistilledDataset bad_label = data;
  bad_label.labels[0] = 3;
  CHECK_THROWS_AS(bad_label.validate(), Error);

  DistilledDataset bad_pixel = data;
  bad_pixel.images.data[0] = 1.5f;
  CHECK_THROWS_AS(bad_pixel.validate(), Error);

  DistilledDataset bad_count = data;
  bad_count.images_per_class = 5;
  CHECK_THROWS_AS(bad_count.validate(), Error);
}

TEST_CASE("class marker application clamps and leaves utility rows alone") {
  DistilledDataset data = make_dataset(2, 4, 1, 2, 2);
  std::fill(data.images.data.begin(), data.images.data.end(), 0.95f);

  MarkerSet cvm = make_marker(MarkerKind::CVM, 2, 1, 2, 2, 0.0f, 1);
  std::fill(cvm.deltas.data.begin(), cvm.deltas.data.end(), 0.1f);

  SubsetPartition part = partition_dataset(data, 0.5, 9);
  DistilledDataset marked = apply_cvm(data, cvm, part);

  const std::size_t plane = 4;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t p = 0; p < plane; ++p) {
      float expected = part.contains_manipulated(i) ? 1.0f : 0.95f;
      CHECK(marked.images.data[i * plane + p] == expected);
    }
  }
  CHECK(marked.labels == data.labels);
}

TEST_CASE("marker application matches the per-pixel formula") {
  DistilledDataset data = make_dataset(3, 4, 2, 4, 4, 31);
  MarkerSet cvm = make_marker(MarkerKind::CVM, 3, 2, 4, 4, 0.4f, 7);
  SubsetPartition part = partition_dataset(data, 0.5, 13);
  DistilledDataset marked = apply_cvm(data, cvm, part);

  const std::size_t plane = 2 * 4 * 4;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto k = static_cast<std::size_t>(data.labels[i]);
    for (std::size_t p = 0; p < plane; ++p) {
      float x = data.images.data[i * plane + p];
      float expected =
          part.contains_manipulated(i)
              ? std::min(1.0f, std::max(0.0f, x + cvm.deltas.data[k * plane + p]))
              : x;
      CHECK(marked.images.data[i * plane + p] == expected);
    }
  }
}

TEST_CASE("release sums both markers before a single clamp") {
  DistilledDataset data = make_dataset(2, 4, 1, 4, 4, 23);
  MarkerSet cvm = make_marker(MarkerKind::CVM, 2, 1, 4, 4, 0.6f, 3);
  MarkerSet ustm = make_marker(MarkerKind::USTM, 2, 1, 4, 4, 0.6f, 4);
  SubsetPartition part = partition_dataset(data, 0.5, 8);

  ProtectedRelease release = build_release(data, cvm, ustm, part, 7);
  CHECK(release.user_id == 7);

  const std::size_t plane = 16;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto k = static_cast<std::size_t>(data.labels[i]);
    for (std::size_t p = 0; p < plane; ++p) {
      float x = data.images.data[i * plane + p];
      float expected =
          part.contains_manipulated(i)
              ? std::min(1.0f, std::max(0.0f, x + cvm.deltas.data[k * plane + p] +
                                                  ustm.deltas.data[k * plane + p]))
              : x;
      CHECK(release.dataset.images.data[i * plane + p] == expected);
    }
  }

  SUBCASE("marker kinds are enforced") {
    CHECK_THROWS_AS(build_release(data, ustm, cvm, part, 1), Error);
  }
}

TEST_CASE("test-set family covers every sample and stacks markers in order") {
  DistilledDataset heldout = make_dataset(2, 6, 1, 4, 4, 41);
  MarkerSet cvm = make_marker(MarkerKind::CVM, 2, 1, 4, 4, 0.5f, 5);
  std::map<int, MarkerSet> ustms;
  ustms[2] = make_marker(MarkerKind::USTM, 2, 1, 4, 4, 0.5f, 6);
  ustms[1] = make_marker(MarkerKind::USTM, 2, 1, 4, 4, 0.5f, 7);

  std::vector<TestSet> sets = build_test_sets(heldout, cvm, ustms);
  REQUIRE(sets.size() == 4);
  CHECK(sets[0].kind == TestKind::Standard);
  CHECK(sets[1].kind == TestKind::Verification);
  CHECK(sets[2].kind == TestKind::Tracing);
  CHECK(sets[2].user_id == 1);
  CHECK(sets[3].user_id == 2);

  CHECK(sets[0].images.data == heldout.images.data);

  const std::size_t plane = 16;
  auto clamp = [](float v) { return std::min(1.0f, std::max(0.0f, v)); };
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const auto k = static_cast<std::size_t>(heldout.labels[i]);
    for (std::size_t p = 0; p < plane; ++p) {
      float veri = clamp(heldout.images.data[i * plane + p] +
                         cvm.deltas.data[k * plane + p]);
      CHECK(sets[1].images.data[i * plane + p] == veri);
      CHECK(sets[2].images.data[i * plane + p] ==
            clamp(veri + ustms[1].deltas.data[k * plane + p]));
      CHECK(sets[3].images.data[i * plane + p] ==
            clamp(veri + ustms[2].deltas.data[k * plane + p]));
    }
  }
}

TEST_CASE("key-generated markers are bitwise reproducible and key-specific") {
  UserKey key = UserKey::from_secret(1, std::string("secret-one"));
  MarkerSet a = generate_ustm_init(key, 4, 3, 8, 8, 0.01);
  MarkerSet b = generate_ustm_init(key, 4, 3, 8, 8, 0.01);
  CHECK(a.deltas.data == b.deltas.data);
  CHECK(a.kind == MarkerKind::USTM);
  CHECK(a.origin == MarkerOrigin::KeyGenerated);
  CHECK(a.key_fingerprint == key.fingerprint());
  CHECK(a.deltas.shape == std::vector<std::size_t>{4, 3, 8, 8});

  UserKey other = UserKey::from_secret(2, std::string("secret-two"));
  MarkerSet c = generate_ustm_init(other, 4, 3, 8, 8, 0.01);
  CHECK(a.deltas.data != c.deltas.data);

  double sq = 0.0;
  for (float v : a.deltas.data) sq += static_cast<double>(v) * v;
  double stddev = std::sqrt(sq / static_cast<double>(a.deltas.numel()));
  CHECK(stddev == doctest::Approx(0.01).epsilon(0.15));

  CHECK_THROWS_AS(generate_ustm_init(key, 0, 3, 8, 8, 0.01), Error);
  CHECK_THROWS_AS(generate_ustm_init(key, 4, 3, 8, 8, 0.0), Error);
}

TEST_CASE("marker checksum tracks the delta bytes") {
  MarkerSet m = make_marker(MarkerKind::CVM, 2, 1, 4, 4, 0.3f, 12);
  std::string before = m.checksum();
  CHECK(before == m.checksum());
  m.deltas.data[5] += 1e-6f;
  CHECK(m.checksum() != before);

  m.deltas.data = {0.5f, -0.75f};
  m.deltas.shape = {2, 1, 1, 1};
  CHECK(m.max_abs() == 0.75f);
}
