#pragma once

// Plain SGD training of a downstream classifier on a (possibly protected)
// distilled dataset. Fully deterministic in the seed.

#include <cstdint>

#include "distmark/data.hpp"
#include "distmark/nn.hpp"

namespace distmark {

struct TrainSpec {
  Arch arch = Arch::ConvNet;
  int width = 0;  // 0 picks the architecture default
  int epochs = 80;
  float lr = 0.10f;
  int batch_size = 0;  // 0 trains full-batch
  std::uint64_t seed = 0;

  void validate() const;
};

// When `curve` is non-null it receives the per-epoch training-set accuracy.
Classifier train_model(const DistilledDataset& data, const TrainSpec& spec,
                       std::vector<double>* curve = nullptr);

}  // namespace distmark
