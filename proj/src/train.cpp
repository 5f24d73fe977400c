#include "distmark/train.hpp"

#include <algorithm>

#include "distmark/errors.hpp"
#include "distmark/rng.hpp"

namespace distmark {

void TrainSpec::validate() const {
  if (epochs < 1) raise(ErrorCode::InvalidConfig, "epochs must be >= 1");
  if (!(lr > 0.0f)) raise(ErrorCode::InvalidConfig, "learning rate must be positive");
  if (batch_size < 0) raise(ErrorCode::InvalidConfig, "batch size must be >= 0");
}

namespace {

double training_accuracy(const Classifier& model, const DistilledDataset& data) {
  Tensor logits = forward_logits(model, data.images);
  std::size_t k = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits.data[i * k + c] > logits.data[i * k + best]) best = c;
    }
    if (static_cast<std::int32_t>(best) == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace

Classifier train_model(const DistilledDataset& data, const TrainSpec& spec,
                       std::vector<double>* curve) {
  spec.validate();
  data.validate();
  if (curve != nullptr) curve->clear();

  std::size_t n = data.size();
  std::size_t inner = data.images.numel() / n;
  Classifier model = make_classifier(
      spec.arch, data.num_classes, static_cast<int>(data.channels()),
      static_cast<int>(data.height()), static_cast<int>(data.width()),
      spec.width, splitmix64_scramble(spec.seed ^ 0x7A11ull));

  std::size_t bs = spec.batch_size > 0 ? static_cast<std::size_t>(spec.batch_size) : n;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    GaussianStream stream(splitmix64_scramble(
        spec.seed ^ (0x3FF1Eull + static_cast<std::uint64_t>(epoch))));
    deterministic_shuffle(order, stream);

    for (std::size_t start = 0; start < n; start += bs) {
      std::size_t count = std::min(bs, n - start);
      Tensor batch({count, data.channels(), data.height(), data.width()});
      std::vector<std::int32_t> labels(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::size_t src = order[start + i];
        std::copy(data.images.data.begin() + src * inner,
                  data.images.data.begin() + (src + 1) * inner,
                  batch.data.begin() + i * inner);
        labels[i] = data.labels[src];
      }
      GradientReport grads = backward(model, batch, labels, false);
      sgd_step(model, grads.param_grads, spec.lr);
    }
    if (curve != nullptr) curve->push_back(training_accuracy(model, data));
  }
  model.train_mode = false;
  return model;
}

}  // namespace distmark
