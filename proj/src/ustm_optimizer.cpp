#include "distmark/ustm_optimizer.hpp"

#include <set>

#include "distmark/errors.hpp"

namespace distmark {

void UstmConfig::validate() const {
  base.validate();
  if (lambda_sim < 0.0) raise(ErrorCode::InvalidConfig, "lambda_sim must be >= 0");
  if (!(sigma > 0.0)) raise(ErrorCode::InvalidConfig, "sigma must be positive");
}

CvmTrace optimize_ustm(const DistilledDataset& dataset, const MarkerSet& cvm,
                       const UserKey& key, const FrozenEncoder& encoder,
                       const UstmConfig& config, const DistilledDataset* probe) {
  config.validate();
  dataset.validate();
  if (cvm.kind != MarkerKind::CVM) {
    raise(ErrorCode::KindMismatch, "base marker must be a class marker");
  }
  std::string cvm_before = cvm.checksum();

  SubsetPartition partition =
      partition_dataset(dataset, config.base.alpha, config.base.partition_seed);
  DistilledDataset shifted = apply_cvm(dataset, cvm, partition);

  MarkerSet init = generate_ustm_init(key, dataset.num_classes,
                                      dataset.channels(), dataset.height(),
                                      dataset.width(), config.sigma);

  detail::SimObjective sim;
  sim.reference = &cvm;
  sim.lambda = config.lambda_sim;

  CvmTrace trace = detail::alternating_optimize(
      shifted, encoder, config.base, std::move(init.deltas), sim, probe);
  trace.marker.kind = MarkerKind::USTM;
  trace.marker.origin = MarkerOrigin::Optimized;
  trace.marker.key_fingerprint = key.fingerprint();

  if (cvm.checksum() != cvm_before) {
    raise(ErrorCode::CvmMutated, "class marker changed during a user-marker run");
  }
  return trace;
}

std::vector<ProtectedRelease> batch_protect(const DistilledDataset& dataset,
                                            const MarkerSet& cvm,
                                            const std::vector<UserKey>& keys,
                                            const FrozenEncoder& encoder,
                                            const UstmConfig& config) {
  if (keys.empty()) raise(ErrorCode::InvalidConfig, "at least one user key required");
  std::set<int> seen;
  for (const auto& key : keys) {
    if (!seen.insert(key.user_id).second) {
      raise(ErrorCode::DuplicateUser,
            "user id appears twice: " + std::to_string(key.user_id));
    }
  }

  SubsetPartition partition =
      partition_dataset(dataset, config.base.alpha, config.base.partition_seed);

  std::vector<ProtectedRelease> releases;
  releases.reserve(keys.size());
  for (const auto& key : keys) {
    CvmTrace trace = optimize_ustm(dataset, cvm, key, encoder, config);
    releases.push_back(
        build_release(dataset, cvm, trace.marker, partition, key.user_id));
  }
  return releases;
}

}  // namespace distmark
