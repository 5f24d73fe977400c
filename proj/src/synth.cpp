#include "distmark/synth.hpp"

#include <cmath>
#include <limits>

#include "distmark/errors.hpp"
#include "distmark/rng.hpp"

namespace distmark {

namespace {

constexpr double kTau = 6.283185307179586;

Tensor prototypes_for_seed(const SynthSpec& spec, std::uint64_t seed) {
  auto k = static_cast<std::size_t>(spec.num_classes);
  auto c = static_cast<std::size_t>(spec.channels);
  auto h = static_cast<std::size_t>(spec.height);
  auto w = static_cast<std::size_t>(spec.width);
  Tensor protos({k, c, h, w});
  for (std::size_t cls = 0; cls < k; ++cls) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      GaussianStream stream(splitmix64_scramble(
          seed ^ (0x50F0ull + cls * 131ull + ch * 7919ull)));
      int waves = 2 + static_cast<int>(stream.next_below(3));
      for (int wave = 0; wave < waves; ++wave) {
        double fx = 1.0 + static_cast<double>(stream.next_below(3));
        double fy = 1.0 + static_cast<double>(stream.next_below(3));
        double phase = kTau * stream.next_uniform();
        double amplitude =
            spec.contrast * (0.10 + 0.15 * stream.next_uniform());
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            double value = amplitude *
                std::sin(kTau * (fx * static_cast<double>(x) / static_cast<double>(w) +
                                 fy * static_cast<double>(y) / static_cast<double>(h)) +
                         phase);
            protos.at4(cls, ch, y, x) += static_cast<float>(value);
          }
        }
      }
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          protos.at4(cls, ch, y, x) += 0.5f;
    }
  }
  return protos;
}

double min_pairwise_l2(const Tensor& protos) {
  std::size_t k = protos.dim(0);
  std::size_t inner = protos.numel() / k;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      double total = 0.0;
      for (std::size_t j = 0; j < inner; ++j) {
        double d = static_cast<double>(protos.data[a * inner + j]) -
                   static_cast<double>(protos.data[b * inner + j]);
        total += d * d;
      }
      best = std::min(best, std::sqrt(total));
    }
  }
  return best;
}

DistilledDataset draw_pool(const SynthSpec& spec, const Tensor& protos,
                           int per_class, std::uint64_t tag) {
  auto k = static_cast<std::size_t>(spec.num_classes);
  std::size_t inner = protos.numel() / k;
  auto n = k * static_cast<std::size_t>(per_class);

  DistilledDataset out;
  out.images = Tensor({n, static_cast<std::size_t>(spec.channels),
                       static_cast<std::size_t>(spec.height),
                       static_cast<std::size_t>(spec.width)});
  out.labels.resize(n);
  out.num_classes = spec.num_classes;
  out.images_per_class = per_class;
  out.balanced = true;

  for (std::size_t cls = 0; cls < k; ++cls) {
    GaussianStream stream(
        splitmix64_scramble(spec.prototype_seed ^ (tag + cls * 2654435761ull)));
    for (int i = 0; i < per_class; ++i) {
      std::size_t row = cls * static_cast<std::size_t>(per_class) +
                        static_cast<std::size_t>(i);
      out.labels[row] = static_cast<std::int32_t>(cls);
      for (std::size_t j = 0; j < inner; ++j) {
        double v = static_cast<double>(protos.data[cls * inner + j]) +
                   spec.sigma_c * stream.next_normal();
        out.images.data[row * inner + j] =
            static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
      }
    }
  }
  out.validate();
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  if (num_classes < 2) raise(ErrorCode::InvalidConfig, "need at least 2 classes");
  if (images_per_class < 2) raise(ErrorCode::InvalidConfig, "need IPC >= 2");
  if (channels < 1 || height < 1 || width < 1)
    raise(ErrorCode::InvalidConfig, "image shape out of range");
  if (!(sigma_c > 0.0)) raise(ErrorCode::InvalidConfig, "sigma_c must be positive");
  if (!(contrast > 0.0))
    raise(ErrorCode::InvalidConfig, "contrast must be positive");
  if (heldout_per_class < 1)
    raise(ErrorCode::InvalidConfig, "heldout pool must be nonempty");
}

Tensor class_prototypes(const SynthSpec& spec) {
  spec.validate();
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Tensor protos = prototypes_for_seed(spec, spec.prototype_seed + attempt);
    if (min_pairwise_l2(protos) >= 4.0 * spec.sigma_c) return protos;
  }
  raise(ErrorCode::InvalidConfig,
        "could not separate class prototypes by 4 sigma; lower sigma_c");
}

std::pair<DistilledDataset, DistilledDataset> generate(const SynthSpec& spec) {
  spec.validate();
  Tensor protos = class_prototypes(spec);
  DistilledDataset distilled =
      draw_pool(spec, protos, spec.images_per_class, 0xD157ull);
  DistilledDataset heldout =
      draw_pool(spec, protos, spec.heldout_per_class, 0x8E7Dull);
  return {std::move(distilled), std::move(heldout)};
}

}  // namespace distmark
