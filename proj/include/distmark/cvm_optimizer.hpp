#pragma once

// Alternating optimization of the surrogate classifier and the class marker:
// each epoch trains the surrogate one pass on utility + marked samples, then
// updates the marker one step against the semantic + perceptual objective,
// clamping it to the L-inf budget.

#include <cstdint>

#include "distmark/data.hpp"
#include "distmark/losses.hpp"
#include "distmark/nn.hpp"

namespace distmark {

struct CvmConfig {
  int epochs = 150;
  float lr_theta = 0.10f;
  float lr_delta = 0.08f;
  double alpha = 0.2;
  int batch_size = 10;  // 0 trains full-batch
  float epsilon = 8.0f / 255.0f;
  float sigma_init = 0.01f;    // stddev of the random marker init
  double cos_sign = 1.0;       // sign of the embedding-cosine term in L_sem
  Arch surrogate_arch = Arch::ConvNet;
  int surrogate_width = 0;     // 0 picks the architecture default
  std::uint64_t partition_seed = 1;
  std::uint64_t init_seed = 2;
  std::uint64_t shuffle_seed = 3;

  void validate() const;
};

struct CvmTrace {
  std::vector<LossBreakdown> epoch_losses;  // one entry per epoch
  std::vector<double> epoch_sta;            // surrogate probe accuracy per epoch
  MarkerSet marker;
  Classifier surrogate;
  SubsetPartition partition;
  double wall_seconds = 0.0;
};

struct MarkerQuality {
  double psnr = 0.0;  // +infinity when the marked set is bit-identical
  double ssim = 0.0;
  double msssim = 0.0;
  double max_abs = 0.0;
};

namespace detail {

// Optional extra objective for user-marker runs: keeps the optimized marker
// dissimilar (in encoder space) to a frozen reference marker.
struct SimObjective {
  const MarkerSet* reference = nullptr;
  double lambda = 0.0;
};

CvmTrace alternating_optimize(const DistilledDataset& dataset,
                              const FrozenEncoder& encoder,
                              const CvmConfig& config, Tensor init_delta,
                              const SimObjective& sim,
                              const DistilledDataset* probe);

}  // namespace detail

// probe: optional clean set for the per-epoch surrogate accuracy curve
// (defaults to the training set). init_override: replaces the seeded random
// marker initialization, used by the key-derived path and degeneracy tests.
CvmTrace optimize_cvm(const DistilledDataset& dataset,
                      const FrozenEncoder& encoder, const CvmConfig& config,
                      const DistilledDataset* probe = nullptr,
                      const Tensor* init_override = nullptr);

MarkerQuality marker_quality(const DistilledDataset& dataset,
                             const MarkerSet& cvm,
                             const SubsetPartition& partition);

// Same metrics, computed against an already-built release.
MarkerQuality release_quality(const DistilledDataset& clean,
                              const ProtectedRelease& release);

}  // namespace distmark
