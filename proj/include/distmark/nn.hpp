#pragma once

// Classifier and frozen-encoder models on top of the autodiff graph.
// The forward builders are templates so the same architecture code serves
// float training and double-precision gradient checks.

#include <cstdint>
#include <string>
#include <vector>

#include "distmark/autodiff.hpp"
#include "distmark/tensor.hpp"

namespace distmark {

enum class Arch { ConvNet, Mlp, ConvNetWide };

const char* arch_name(Arch arch);
Arch arch_from_name(const std::string& name);

struct Classifier {
  Arch arch = Arch::ConvNet;
  int num_classes = 0;
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int width = 0;
  bool train_mode = true;
  std::vector<Tensor> params;
  std::vector<std::string> param_names;

  std::string checksum() const;
};

struct FrozenEncoder {
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int width = 0;
  int embed_dim = 0;
  std::vector<Tensor> params;

  std::string checksum() const;
};

struct GradientReport {
  std::vector<Tensor> param_grads;
  Tensor input_grad;
  double loss = 0.0;
};

int default_width(Arch arch);
Classifier make_classifier(Arch arch, int num_classes, int channels, int h,
                           int w, int width, std::uint64_t seed);
FrozenEncoder make_encoder(int channels, int h, int w, int width,
                           std::uint64_t seed);

// Architecture forward pass over graph ids. `params` must follow the layout
// produced by make_classifier for the given arch.
template <typename T>
typename Graph<T>::Id classifier_logits(Graph<T>& g, Arch arch,
                                        const std::vector<typename Graph<T>::Id>& params,
                                        typename Graph<T>::Id x) {
  using Id = typename Graph<T>::Id;
  if (arch == Arch::Mlp) {
    const auto& vx = g.value(x);
    std::size_t b = vx.dim(0);
    std::size_t d = vx.numel() / b;
    Id flat = g.reshape(x, {b, d});
    Id h1 = g.relu(g.linear(flat, params[0], params[1]));
    return g.linear(h1, params[2], params[3]);
  }
  Id h = x;
  for (int block = 0; block < 3; ++block) {
    h = g.avgpool2(g.relu(g.conv2d(h, params[2 * block], params[2 * block + 1])));
  }
  const auto& vh = g.value(h);
  std::size_t b = vh.dim(0);
  std::size_t d = vh.numel() / b;
  Id flat = g.reshape(h, {b, d});
  return g.linear(flat, params[6], params[7]);
}

// Embedding forward for the frozen encoder: three conv blocks, flattened.
template <typename T>
typename Graph<T>::Id encoder_embed(Graph<T>& g,
                                    const std::vector<typename Graph<T>::Id>& params,
                                    typename Graph<T>::Id x) {
  using Id = typename Graph<T>::Id;
  Id h = x;
  for (int block = 0; block < 3; ++block) {
    h = g.avgpool2(g.relu(g.conv2d(h, params[2 * block], params[2 * block + 1])));
  }
  const auto& vh = g.value(h);
  std::size_t b = vh.dim(0);
  std::size_t d = vh.numel() / b;
  return g.reshape(h, {b, d});
}

Tensor forward_logits(const Classifier& model, const Tensor& batch);
Tensor softmax_rows(const Tensor& logits);
double cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& labels);
GradientReport backward(const Classifier& model, const Tensor& batch,
                        const std::vector<std::int32_t>& labels, bool wrt_input);
Classifier& sgd_step(Classifier& model, const std::vector<Tensor>& param_grads,
                     float lr);
Tensor encode(const FrozenEncoder& encoder, const Tensor& batch);

}  // namespace distmark
