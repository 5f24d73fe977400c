#include "distmark/nn.hpp"

#include <cmath>
#include <cstring>

#include "distmark/errors.hpp"
#include "distmark/rng.hpp"

namespace distmark {

namespace {

Tensor he_normal(std::vector<std::size_t> shape, std::size_t fan_in,
                 GaussianStream& stream) {
  Tensor t(std::move(shape));
  double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<float>(stddev * stream.next_normal());
  return t;
}

std::string params_checksum(const std::vector<Tensor>& params) {
  std::vector<std::uint8_t> bytes;
  for (const auto& p : params) {
    std::size_t offset = bytes.size();
    bytes.resize(offset + p.data.size() * sizeof(float));
    std::memcpy(bytes.data() + offset, p.data.data(),
                p.data.size() * sizeof(float));
  }
  return sha256_hex(bytes);
}

void check_batch_shape(const Tensor& batch, int channels, int h, int w,
                       const char* who) {
  if (batch.rank() != 4 || batch.dim(1) != static_cast<std::size_t>(channels) ||
      batch.dim(2) != static_cast<std::size_t>(h) ||
      batch.dim(3) != static_cast<std::size_t>(w)) {
    raise(ErrorCode::ShapeMismatch,
          std::string(who) + ": batch does not match model input shape");
  }
}

}  // namespace

const char* arch_name(Arch arch) {
  switch (arch) {
    case Arch::ConvNet: return "convnet";
    case Arch::Mlp: return "mlp";
    case Arch::ConvNetWide: return "convnet_wide";
  }
  return "unknown";
}

Arch arch_from_name(const std::string& name) {
  if (name == "convnet") return Arch::ConvNet;
  if (name == "mlp") return Arch::Mlp;
  if (name == "convnet_wide") return Arch::ConvNetWide;
  raise(ErrorCode::InvalidConfig, "unknown architecture: " + name);
}

int default_width(Arch arch) {
  switch (arch) {
    case Arch::ConvNet: return 12;
    case Arch::Mlp: return 48;
    case Arch::ConvNetWide: return 24;
  }
  return 12;
}

std::string Classifier::checksum() const { return params_checksum(params); }
std::string FrozenEncoder::checksum() const { return params_checksum(params); }

Classifier make_classifier(Arch arch, int num_classes, int channels, int h,
                           int w, int width, std::uint64_t seed) {
  if (num_classes < 2 || channels < 1 || h < 1 || w < 1) {
    raise(ErrorCode::InvalidConfig, "classifier dimensions out of range");
  }
  if (width <= 0) width = default_width(arch);

  Classifier model;
  model.arch = arch;
  model.num_classes = num_classes;
  model.in_channels = channels;
  model.in_h = h;
  model.in_w = w;
  model.width = width;

  GaussianStream stream(splitmix64_scramble(seed ^ (0xA11C0DEull + static_cast<std::uint64_t>(arch))));
  auto f = static_cast<std::size_t>(width);
  auto c = static_cast<std::size_t>(channels);
  auto k = static_cast<std::size_t>(num_classes);

  if (arch == Arch::Mlp) {
    std::size_t d = c * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    model.params.push_back(he_normal({d, f}, d, stream));
    model.params.push_back(Tensor({f}));
    model.params.push_back(he_normal({f, k}, f, stream));
    model.params.push_back(Tensor({k}));
    model.param_names = {"fc1_w", "fc1_b", "fc2_w", "fc2_b"};
    return model;
  }

  if (h % 8 != 0 || w % 8 != 0) {
    raise(ErrorCode::InvalidConfig,
          "conv architectures pool three times; H and W must be multiples of 8");
  }
  model.params.push_back(he_normal({f, c, 3, 3}, c * 9, stream));
  model.params.push_back(Tensor({f}));
  model.params.push_back(he_normal({f, f, 3, 3}, f * 9, stream));
  model.params.push_back(Tensor({f}));
  model.params.push_back(he_normal({f, f, 3, 3}, f * 9, stream));
  model.params.push_back(Tensor({f}));
  std::size_t flat = f * static_cast<std::size_t>(h / 8) * static_cast<std::size_t>(w / 8);
  model.params.push_back(he_normal({flat, k}, flat, stream));
  model.params.push_back(Tensor({k}));
  model.param_names = {"conv1_w", "conv1_b", "conv2_w", "conv2_b",
                       "conv3_w", "conv3_b", "fc_w",    "fc_b"};
  return model;
}

FrozenEncoder make_encoder(int channels, int h, int w, int width,
                           std::uint64_t seed) {
  if (channels < 1 || h % 8 != 0 || w % 8 != 0) {
    raise(ErrorCode::InvalidConfig,
          "encoder needs H and W divisible by 8");
  }
  if (width <= 0) width = 8;

  FrozenEncoder enc;
  enc.in_channels = channels;
  enc.in_h = h;
  enc.in_w = w;
  enc.width = width;

  GaussianStream stream(splitmix64_scramble(seed ^ 0xE2C0DE5ull));
  auto f = static_cast<std::size_t>(width);
  auto c = static_cast<std::size_t>(channels);
  enc.params.push_back(he_normal({f, c, 3, 3}, c * 9, stream));
  enc.params.push_back(Tensor({f}));
  enc.params.push_back(he_normal({f, f, 3, 3}, f * 9, stream));
  enc.params.push_back(Tensor({f}));
  enc.params.push_back(he_normal({f, f, 3, 3}, f * 9, stream));
  enc.params.push_back(Tensor({f}));
  enc.embed_dim = width * (h / 8) * (w / 8);
  return enc;
}

Tensor forward_logits(const Classifier& model, const Tensor& batch) {
  check_batch_shape(batch, model.in_channels, model.in_h, model.in_w,
                    "forward_logits");
  Graph<float> g;
  std::vector<Graph<float>::Id> params;
  params.reserve(model.params.size());
  for (const auto& p : model.params) params.push_back(g.constant(p));
  auto logits = classifier_logits(g, model.arch, params, g.constant(batch));
  Tensor out = g.value(logits);
  if (!out.all_finite()) {
    raise(ErrorCode::NonFiniteActivation, "non-finite logits");
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) raise(ErrorCode::ShapeMismatch, "softmax expects [N,K]");
  std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    float mx = logits.data[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.data[i * k + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double e = std::exp(static_cast<double>(logits.data[i * k + j] - mx));
      out.data[i * k + j] = static_cast<float>(e);
      denom += e;
    }
    for (std::size_t j = 0; j < k; ++j)
      out.data[i * k + j] = static_cast<float>(out.data[i * k + j] / denom);
  }
  return out;
}

double cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& labels) {
  if (logits.rank() != 2) raise(ErrorCode::ShapeMismatch, "cross_entropy expects [N,K]");
  std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) raise(ErrorCode::ShapeMismatch, "label count mismatch");
  if (n == 0) raise(ErrorCode::EmptyBatch, "cross_entropy on empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto y = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || y >= k) raise(ErrorCode::ShapeMismatch, "label out of range");
    double mx = logits.data[i * k];
    for (std::size_t j = 1; j < k; ++j)
      mx = std::max(mx, static_cast<double>(logits.data[i * k + j]));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      denom += std::exp(static_cast<double>(logits.data[i * k + j]) - mx);
    total += mx + std::log(denom) - static_cast<double>(logits.data[i * k + y]);
  }
  return total / static_cast<double>(n);
}

GradientReport backward(const Classifier& model, const Tensor& batch,
                        const std::vector<std::int32_t>& labels, bool wrt_input) {
  check_batch_shape(batch, model.in_channels, model.in_h, model.in_w, "backward");
  Graph<float> g;
  std::vector<Graph<float>::Id> params;
  params.reserve(model.params.size());
  for (const auto& p : model.params) params.push_back(g.param(p));
  auto x = wrt_input ? g.param(batch) : g.constant(batch);
  auto logits = classifier_logits(g, model.arch, params, x);
  auto loss = g.softmax_cross_entropy(logits, labels);
  g.backward(loss);

  GradientReport report;
  report.loss = static_cast<double>(g.value(loss).data[0]);
  for (std::size_t i = 0; i < params.size(); ++i) {
    report.param_grads.push_back(g.grad(params[i]));
    if (!report.param_grads.back().all_finite()) {
      raise(ErrorCode::NonFiniteGradient, "non-finite parameter gradient");
    }
  }
  if (wrt_input) {
    report.input_grad = g.grad(x);
    if (!report.input_grad.all_finite()) {
      raise(ErrorCode::NonFiniteGradient, "non-finite input gradient");
    }
  }
  return report;
}

Classifier& sgd_step(Classifier& model, const std::vector<Tensor>& param_grads,
                     float lr) {
  if (!(lr > 0.0f)) raise(ErrorCode::InvalidConfig, "learning rate must be positive");
  if (param_grads.size() != model.params.size()) {
    raise(ErrorCode::ShapeMismatch, "gradient list does not match parameter list");
  }
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    auto& p = model.params[i];
    const auto& grad = param_grads[i];
    if (!p.same_shape(grad)) raise(ErrorCode::ShapeMismatch, "gradient shape mismatch");
    for (std::size_t j = 0; j < p.data.size(); ++j) p.data[j] -= lr * grad.data[j];
  }
  return model;
}

Tensor encode(const FrozenEncoder& encoder, const Tensor& batch) {
  check_batch_shape(batch, encoder.in_channels, encoder.in_h, encoder.in_w,
                    "encode");
  Graph<float> g;
  std::vector<Graph<float>::Id> params;
  params.reserve(encoder.params.size());
  for (const auto& p : encoder.params) params.push_back(g.constant(p));
  auto emb = encoder_embed(g, params, g.constant(batch));
  Tensor out = g.value(emb);
  if (!out.all_finite()) {
    raise(ErrorCode::NonFiniteActivation, "non-finite embedding");
  }
  return out;
}

}  // namespace distmark
