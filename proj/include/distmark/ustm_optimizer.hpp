#pragma once

// Per-user marker optimization on top of a frozen class marker. Each user
// marker starts from its key-derived initialization and trains with the same
// alternating protocol, plus a similarity penalty against the class marker.

#include "distmark/cvm_optimizer.hpp"

namespace distmark {

struct UstmConfig {
  CvmConfig base;
  double lambda_sim = 1.0;
  double sigma = 0.015;  // stddev of the key-derived initialization

  void validate() const;
};

// The class marker stays bit-frozen; its checksum is asserted unchanged.
CvmTrace optimize_ustm(const DistilledDataset& dataset, const MarkerSet& cvm,
                       const UserKey& key, const FrozenEncoder& encoder,
                       const UstmConfig& config,
                       const DistilledDataset* probe = nullptr);

// One release per user key; all share the class marker and the subset split.
std::vector<ProtectedRelease> batch_protect(const DistilledDataset& dataset,
                                            const MarkerSet& cvm,
                                            const std::vector<UserKey>& keys,
                                            const FrozenEncoder& encoder,
                                            const UstmConfig& config);

}  // namespace distmark
