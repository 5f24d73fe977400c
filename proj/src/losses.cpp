#include "distmark/losses.hpp"

#include <algorithm>

namespace distmark {

namespace {

constexpr double kCanonicalWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

TensorD promote_batch(const Tensor& t, const char* who) {
  if (t.rank() == 3) {
    TensorD out = tensor_cast<double>(t);
    out.shape = {1, t.dim(0), t.dim(1), t.dim(2)};
    return out;
  }
  if (t.rank() == 4) return tensor_cast<double>(t);
  raise(ErrorCode::ShapeMismatch, std::string(who) + ": expected [C,H,W] or [B,C,H,W]");
}

std::vector<Graph<double>::Id> param_ids(Graph<double>& g,
                                         const std::vector<Tensor>& params) {
  std::vector<Graph<double>::Id> ids;
  ids.reserve(params.size());
  for (const auto& p : params) ids.push_back(g.constant(tensor_cast<double>(p)));
  return ids;
}

Tensor concat_batches(const Tensor& a, const Tensor& b) {
  if (a.numel() == 0) return b;
  if (b.numel() == 0) return a;
  if (a.rank() != 4 || b.rank() != 4 || a.dim(1) != b.dim(1) ||
      a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    raise(ErrorCode::ShapeMismatch, "cannot concatenate mismatched batches");
  }
  Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

}  // namespace

int auto_msssim_levels(int h, int w) {
  int levels = 1;
  for (int l = 2; l <= 5; ++l) {
    if (std::min(h, w) >= 8 * (1 << (l - 1))) levels = l;
  }
  return levels;
}

std::vector<double> msssim_weights(int levels) {
  if (levels < 1 || levels > 5)
    raise(ErrorCode::InvalidConfig, "ms_ssim supports 1 to 5 levels");
  std::vector<double> w(kCanonicalWeights, kCanonicalWeights + levels);
  double total = 0.0;
  for (double v : w) total += v;
  for (auto& v : w) v /= total;
  return w;
}

double ms_ssim(const Tensor& a, const Tensor& b, int levels,
               const std::vector<double>& weights) {
  TensorD da = promote_batch(a, "ms_ssim");
  TensorD db = promote_batch(b, "ms_ssim");
  if (!da.same_shape(db)) raise(ErrorCode::ShapeMismatch, "ms_ssim shape mismatch");
  Graph<double> g;
  MsSsimSpec spec;
  spec.levels = levels;
  spec.weights = weights;
  auto out = ms_ssim_graph(g, g.constant(std::move(da)), g.constant(std::move(db)), spec);
  const auto& v = g.value(out);
  double total = 0.0;
  for (double x : v.data) total += x;
  return total / static_cast<double>(v.numel());
}

double ssim(const Tensor& a, const Tensor& b) {
  TensorD da = promote_batch(a, "ssim");
  TensorD db = promote_batch(b, "ssim");
  if (!da.same_shape(db)) raise(ErrorCode::ShapeMismatch, "ssim shape mismatch");
  Graph<double> g;
  auto out = ssim_graph(g, g.constant(std::move(da)), g.constant(std::move(db)));
  const auto& v = g.value(out);
  double total = 0.0;
  for (double x : v.data) total += x;
  return total / static_cast<double>(v.numel());
}

double task_loss(const Classifier& model, const Tensor& utility_images,
                 const std::vector<std::int32_t>& utility_labels,
                 const Tensor& marked_images,
                 const std::vector<std::int32_t>& marked_labels) {
  if (utility_labels.empty() && marked_labels.empty())
    raise(ErrorCode::EmptyBatch, "task loss needs at least one sample");
  Tensor images = concat_batches(utility_images, marked_images);
  std::vector<std::int32_t> labels = utility_labels;
  labels.insert(labels.end(), marked_labels.begin(), marked_labels.end());
  return cross_entropy(forward_logits(model, images), labels);
}

double semantic_loss(const Classifier& model, const FrozenEncoder& encoder,
                     const Tensor& subset_images,
                     const std::vector<std::int32_t>& subset_labels,
                     const MarkerSet& cvm, double cos_sign) {
  Graph<double> g;
  auto model_ids = param_ids(g, model.params);
  auto enc_ids = param_ids(g, encoder.params);
  auto x = g.constant(tensor_cast<double>(subset_images));
  auto deltas = g.constant(tensor_cast<double>(cvm.deltas));
  auto rows = g.gather_rows(deltas, subset_labels);
  auto marked = g.clamp01(g.add(x, rows));
  auto loss = semantic_loss_graph(g, model.arch, model_ids, enc_ids, x, marked,
                                  subset_labels, cos_sign);
  return g.value(loss).data[0];
}

double perceptual_loss(const Tensor& subset_images,
                       const std::vector<std::int32_t>& subset_labels,
                       const MarkerSet& cvm) {
  Graph<double> g;
  auto x = g.constant(tensor_cast<double>(subset_images));
  auto deltas = g.constant(tensor_cast<double>(cvm.deltas));
  auto rows = g.gather_rows(deltas, subset_labels);
  auto marked = g.clamp01(g.add(x, rows));
  auto loss = perceptual_loss_graph(g, rows, x, marked);
  return g.value(loss).data[0];
}

LossBreakdown cvm_total_loss(const Classifier& model, const FrozenEncoder& encoder,
                             const Tensor& subset_images,
                             const std::vector<std::int32_t>& subset_labels,
                             const MarkerSet& cvm, double cos_sign) {
  LossBreakdown out;
  out.semantic =
      semantic_loss(model, encoder, subset_images, subset_labels, cvm, cos_sign);
  out.perceptual = perceptual_loss(subset_images, subset_labels, cvm);
  out.total = out.semantic + out.perceptual;
  return out;
}

double similarity_loss(const FrozenEncoder& encoder, const MarkerSet& ustm,
                       const MarkerSet& cvm) {
  Graph<double> g;
  auto enc_ids = param_ids(g, encoder.params);
  auto u = g.constant(tensor_cast<double>(ustm.deltas));
  auto c = g.constant(tensor_cast<double>(cvm.deltas));
  auto loss = similarity_loss_graph(g, enc_ids, u, c);
  return g.value(loss).data[0];
}

}  // namespace distmark
