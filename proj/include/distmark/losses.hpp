#pragma once

// Training objectives for marker optimization: task, semantic, perceptual
// (MS-SSIM based) and key-marker similarity. Graph builders are templated so
// gradient-check suites can run them in double precision.

#include <vector>

#include "distmark/autodiff.hpp"
#include "distmark/data.hpp"
#include "distmark/nn.hpp"

namespace distmark {

struct LossBreakdown {
  double task = 0.0;
  double semantic = 0.0;
  double perceptual = 0.0;
  double similarity = 0.0;
  double total = 0.0;
};

struct MsSsimSpec {
  int levels = 0;                 // <= 0 selects levels from the image size
  std::vector<double> weights;    // empty selects canonical truncated weights
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

// Largest level count in [1, 5] such that min(h, w) >= 8 * 2^(levels-1).
int auto_msssim_levels(int h, int w);
// Canonical five-scale weights truncated to `levels` and renormalized to 1.
std::vector<double> msssim_weights(int levels);

template <typename T>
std::vector<T> gaussian_kernel2d(int window, double sigma) {
  std::vector<double> line(window);
  double c = (window - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < window; ++i) {
    line[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    total += line[i];
  }
  for (auto& v : line) v /= total;
  std::vector<T> kernel(static_cast<std::size_t>(window) * window);
  for (int y = 0; y < window; ++y)
    for (int x = 0; x < window; ++x)
      kernel[static_cast<std::size_t>(y) * window + x] =
          static_cast<T>(line[y] * line[x]);
  return kernel;
}

namespace detail {

inline int shrink_window(int window, std::size_t min_dim) {
  int w = window;
  if (static_cast<std::size_t>(w) > min_dim) w = static_cast<int>(min_dim);
  if (w % 2 == 0) --w;
  return w;
}

template <typename T>
struct SsimMaps {
  typename Graph<T>::Id luminance;
  typename Graph<T>::Id contrast_structure;
};

template <typename T>
SsimMaps<T> ssim_maps(Graph<T>& g, typename Graph<T>::Id a,
                      typename Graph<T>::Id b, int window, double sigma,
                      double c1, double c2) {
  auto kernel = gaussian_kernel2d<T>(window, sigma);
  auto win = static_cast<std::size_t>(window);
  auto mua = g.blur_valid(a, kernel, win, win);
  auto mub = g.blur_valid(b, kernel, win, win);
  auto saa = g.sub(g.blur_valid(g.mul(a, a), kernel, win, win), g.mul(mua, mua));
  auto sbb = g.sub(g.blur_valid(g.mul(b, b), kernel, win, win), g.mul(mub, mub));
  auto sab = g.sub(g.blur_valid(g.mul(a, b), kernel, win, win), g.mul(mua, mub));
  auto cs = g.div(g.add_scalar(g.scale(sab, T(2)), static_cast<T>(c2)),
                  g.add_scalar(g.add(saa, sbb), static_cast<T>(c2)));
  auto lum = g.div(
      g.add_scalar(g.scale(g.mul(mua, mub), T(2)), static_cast<T>(c1)),
      g.add_scalar(g.add(g.mul(mua, mua), g.mul(mub, mub)), static_cast<T>(c1)));
  return {lum, cs};
}

}  // namespace detail

// Per-image multi-scale structural similarity over a [B, C, H, W] batch,
// returning a [B] node. Luminance enters at the coarsest scale only;
// per-scale contrast/structure means are combined through exp(sum w*log).
template <typename T>
typename Graph<T>::Id ms_ssim_graph(Graph<T>& g, typename Graph<T>::Id a,
                                    typename Graph<T>::Id b,
                                    const MsSsimSpec& spec = {}) {
  const auto& va = g.value(a);
  if (va.rank() != 4 || !va.same_shape(g.value(b)))
    raise(ErrorCode::ShapeMismatch, "ms_ssim expects matching [B,C,H,W] inputs");
  int h = static_cast<int>(va.dim(2));
  int w = static_cast<int>(va.dim(3));
  if (std::min(h, w) < 3)
    raise(ErrorCode::ImageTooSmall, "image below the minimal 3x3 ssim window");

  int levels = spec.levels > 0 ? spec.levels : auto_msssim_levels(h, w);
  std::vector<double> weights =
      spec.weights.empty() ? msssim_weights(levels) : spec.weights;
  if (static_cast<int>(weights.size()) != levels)
    raise(ErrorCode::InvalidConfig, "one ms_ssim weight per level required");

  double c1 = (spec.k1 * spec.range) * (spec.k1 * spec.range);
  double c2 = (spec.k2 * spec.range) * (spec.k2 * spec.range);
  const T log_floor = static_cast<T>(1e-6);

  typename Graph<T>::Id acc = -1;
  for (int level = 0; level < levels; ++level) {
    if (level > 0) {
      a = g.avgpool2(a);
      b = g.avgpool2(b);
      h /= 2;
      w /= 2;
      if (std::min(h, w) < 3)
        raise(ErrorCode::TooFewLevels,
              "scale pyramid underflows the minimal ssim window");
    }
    int win = detail::shrink_window(spec.window, static_cast<std::size_t>(std::min(h, w)));
    if (win < 3)
      raise(ErrorCode::TooFewLevels, "window collapsed below 3x3");
    auto maps = detail::ssim_maps(g, a, b, win, spec.sigma, c1, c2);
    auto wl = static_cast<T>(weights[level]);
    auto mcs = g.mean_chw(maps.contrast_structure);
    auto term = g.scale(g.log(g.clamp_min(mcs, log_floor)), wl);
    acc = (acc < 0) ? term : g.add(acc, term);
    if (level == levels - 1) {
      auto mlum = g.mean_chw(maps.luminance);
      acc = g.add(acc, g.scale(g.log(g.clamp_min(mlum, log_floor)), wl));
    }
  }
  return g.exp(acc);
}

// Single-scale SSIM over a batch, mean of the luminance*cs map per image.
template <typename T>
typename Graph<T>::Id ssim_graph(Graph<T>& g, typename Graph<T>::Id a,
                                 typename Graph<T>::Id b,
                                 const MsSsimSpec& spec = {}) {
  const auto& va = g.value(a);
  if (va.rank() != 4 || !va.same_shape(g.value(b)))
    raise(ErrorCode::ShapeMismatch, "ssim expects matching [B,C,H,W] inputs");
  int h = static_cast<int>(va.dim(2));
  int w = static_cast<int>(va.dim(3));
  if (std::min(h, w) < 3)
    raise(ErrorCode::ImageTooSmall, "image below the minimal 3x3 ssim window");
  int win = detail::shrink_window(spec.window, static_cast<std::size_t>(std::min(h, w)));
  double c1 = (spec.k1 * spec.range) * (spec.k1 * spec.range);
  double c2 = (spec.k2 * spec.range) * (spec.k2 * spec.range);
  auto maps = detail::ssim_maps(g, a, b, win, spec.sigma, c1, c2);
  return g.mean_chw(g.mul(maps.luminance, maps.contrast_structure));
}

// CE on the marked subset plus the clean/marked embedding cosine. The cosine
// enters with `cos_sign` (+1 drives embeddings apart, the literal reading).
template <typename T>
typename Graph<T>::Id semantic_loss_graph(
    Graph<T>& g, Arch arch, const std::vector<typename Graph<T>::Id>& model_params,
    const std::vector<typename Graph<T>::Id>& encoder_params,
    typename Graph<T>::Id x_clean, typename Graph<T>::Id x_marked,
    const std::vector<std::int32_t>& labels, T cos_sign = T(1)) {
  auto logits = classifier_logits(g, arch, model_params, x_marked);
  auto ce = g.softmax_cross_entropy(logits, labels);
  auto ea = encoder_embed(g, encoder_params, x_clean);
  auto eb = encoder_embed(g, encoder_params, x_marked);
  auto cos = g.mean(g.cosine_rows(ea, eb));
  return g.add(ce, g.scale(cos, cos_sign));
}

// Mean squared marker magnitude (per-pixel mean) plus mean (1 - MS-SSIM).
template <typename T>
typename Graph<T>::Id perceptual_loss_graph(Graph<T>& g,
                                            typename Graph<T>::Id delta_rows,
                                            typename Graph<T>::Id x_clean,
                                            typename Graph<T>::Id x_marked,
                                            const MsSsimSpec& spec = {}) {
  auto l2 = g.mean(g.mul(delta_rows, delta_rows));
  auto ms = ms_ssim_graph(g, x_clean, x_marked, spec);
  auto one_minus = g.add_scalar(g.scale(ms, T(-1)), T(1));
  return g.add(l2, g.mean(one_minus));
}

// Mean cosine between encoded user markers and encoded class markers,
// both shifted into [0,1] before encoding.
template <typename T>
typename Graph<T>::Id similarity_loss_graph(
    Graph<T>& g, const std::vector<typename Graph<T>::Id>& encoder_params,
    typename Graph<T>::Id ustm, typename Graph<T>::Id cvm) {
  if (!g.value(ustm).same_shape(g.value(cvm)))
    raise(ErrorCode::ShapeMismatch, "marker sets differ in shape");
  auto su = g.clamp01(g.add_scalar(ustm, T(0.5)));
  auto sc = g.clamp01(g.add_scalar(cvm, T(0.5)));
  auto eu = encoder_embed(g, encoder_params, su);
  auto ec = encoder_embed(g, encoder_params, sc);
  return g.mean(g.cosine_rows(eu, ec));
}

// Scalar conveniences over float tensors.
double ms_ssim(const Tensor& a, const Tensor& b, int levels = 0,
               const std::vector<double>& weights = {});
double ssim(const Tensor& a, const Tensor& b);
double task_loss(const Classifier& model, const Tensor& utility_images,
                 const std::vector<std::int32_t>& utility_labels,
                 const Tensor& marked_images,
                 const std::vector<std::int32_t>& marked_labels);
double semantic_loss(const Classifier& model, const FrozenEncoder& encoder,
                     const Tensor& subset_images,
                     const std::vector<std::int32_t>& subset_labels,
                     const MarkerSet& cvm, double cos_sign = 1.0);
double perceptual_loss(const Tensor& subset_images,
                       const std::vector<std::int32_t>& subset_labels,
                       const MarkerSet& cvm);
LossBreakdown cvm_total_loss(const Classifier& model, const FrozenEncoder& encoder,
                             const Tensor& subset_images,
                             const std::vector<std::int32_t>& subset_labels,
                             const MarkerSet& cvm, double cos_sign = 1.0);
double similarity_loss(const FrozenEncoder& encoder, const MarkerSet& ustm,
                       const MarkerSet& cvm);

}  // namespace distmark
