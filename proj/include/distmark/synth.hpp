#pragma once

// Offline stand-in for an external distillation pipeline: smooth seeded
// class prototypes plus Gaussian intra-class noise, emitted as a small
// "distilled" training set and a matched held-out evaluation pool.

#include <cstdint>
#include <utility>

#include "distmark/data.hpp"

namespace distmark {

struct SynthSpec {
  int num_classes = 4;
  int images_per_class = 10;
  int channels = 3;
  int height = 16;
  int width = 16;
  std::uint64_t prototype_seed = 7;
  double sigma_c = 1.0;
  double contrast = 1.0;
  int heldout_per_class = 32;

  void validate() const;
};

// Low-frequency sinusoid prototypes, [K, C, H, W]. Regenerated with a shifted
// seed until every pairwise prototype distance is at least 4 * sigma_c.
Tensor class_prototypes(const SynthSpec& spec);

// (distilled, heldout); both clamp(prototype + N(0, sigma_c^2)) per sample,
// labels grouped class by class. Deterministic in the spec.
std::pair<DistilledDataset, DistilledDataset> generate(const SynthSpec& spec);

}  // namespace distmark
