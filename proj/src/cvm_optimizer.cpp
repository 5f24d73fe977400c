#include "distmark/cvm_optimizer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "distmark/errors.hpp"
#include "distmark/rng.hpp"

namespace distmark {

namespace {

Tensor select_rows(const Tensor& images, const std::vector<std::size_t>& idx) {
  Tensor out({idx.size(), images.dim(1), images.dim(2), images.dim(3)});
  std::size_t inner = images.numel() / images.dim(0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(images.data.begin() + idx[i] * inner,
              images.data.begin() + (idx[i] + 1) * inner,
              out.data.begin() + i * inner);
  }
  return out;
}

std::vector<std::int32_t> select_labels(const std::vector<std::int32_t>& labels,
                                        const std::vector<std::size_t>& idx) {
  std::vector<std::int32_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
  return out;
}

double probe_accuracy(const Classifier& model, const Tensor& images,
                      const std::vector<std::int32_t>& labels) {
  Tensor logits = forward_logits(model, images);
  std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits.data[i * k + j] > logits.data[i * k + best]) best = j;
    }
    if (best == static_cast<std::size_t>(labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

void clamp_marker(Tensor& delta, float epsilon) {
  for (auto& v : delta.data) {
    if (v > epsilon) v = epsilon;
    if (v < -epsilon) v = -epsilon;
  }
}

}  // namespace

void CvmConfig::validate() const {
  if (epochs < 1) raise(ErrorCode::InvalidConfig, "epochs must be >= 1");
  if (!(lr_theta > 0.0f) || !(lr_delta >= 0.0f))
    raise(ErrorCode::InvalidConfig, "learning rates out of range");
  if (!(alpha > 0.0 && alpha < 1.0))
    raise(ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");
  if (!(epsilon > 0.0f)) raise(ErrorCode::InvalidConfig, "epsilon must be positive");
  if (batch_size < 0) raise(ErrorCode::InvalidConfig, "batch size must be >= 0");
}

namespace detail {

CvmTrace alternating_optimize(const DistilledDataset& dataset,
                              const FrozenEncoder& encoder,
                              const CvmConfig& config, Tensor init_delta,
                              const SimObjective& sim,
                              const DistilledDataset* probe) {
  auto started = std::chrono::steady_clock::now();
  config.validate();
  dataset.validate();

  auto k = static_cast<std::size_t>(dataset.num_classes);
  std::size_t c = dataset.channels(), h = dataset.height(), w = dataset.width();
  if (init_delta.rank() != 4 || init_delta.dim(0) != k || init_delta.dim(1) != c ||
      init_delta.dim(2) != h || init_delta.dim(3) != w) {
    raise(ErrorCode::ShapeMismatch, "marker init does not match dataset shape");
  }

  CvmTrace trace;
  trace.partition = partition_dataset(dataset, config.alpha, config.partition_seed);
  const auto& s_idx = trace.partition.manipulation_indices;
  const auto& b_idx = trace.partition.utility_indices;

  Tensor xs = select_rows(dataset.images, s_idx);
  std::vector<std::int32_t> ys = select_labels(dataset.labels, s_idx);
  Tensor xb = select_rows(dataset.images, b_idx);
  std::vector<std::int32_t> yb = select_labels(dataset.labels, b_idx);
  std::size_t ns = s_idx.size(), nb = b_idx.size(), n = ns + nb;
  std::size_t inner = c * h * w;

  Tensor delta = std::move(init_delta);
  clamp_marker(delta, config.epsilon);

  Classifier surrogate = make_classifier(
      config.surrogate_arch, dataset.num_classes, static_cast<int>(c),
      static_cast<int>(h), static_cast<int>(w), config.surrogate_width,
      splitmix64_scramble(config.init_seed ^ 0x5E0D0ull));

  const Tensor& probe_images = probe ? probe->images : dataset.images;
  const std::vector<std::int32_t>& probe_labels =
      probe ? probe->labels : dataset.labels;

  // Combined training tensor: utility block first, marked block after it.
  Tensor combined({n, c, h, w});
  std::copy(xb.data.begin(), xb.data.end(), combined.data.begin());
  std::vector<std::int32_t> combined_labels = yb;
  combined_labels.insert(combined_labels.end(), ys.begin(), ys.end());

  double initial_total = 0.0;
  int high_loss_streak = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Step 1: refresh the marked block from the current marker, then one
    // SGD pass over the shuffled combined set. The marker is fixed here.
    for (std::size_t i = 0; i < ns; ++i) {
      auto y = static_cast<std::size_t>(ys[i]);
      for (std::size_t j = 0; j < inner; ++j) {
        float v = xs.data[i * inner + j] + delta.data[y * inner + j];
        combined.data[(nb + i) * inner + j] =
            v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
      }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    GaussianStream shuffle_stream(splitmix64_scramble(
        config.shuffle_seed ^ (0x9A0BD1ull + static_cast<std::uint64_t>(epoch))));
    deterministic_shuffle(order, shuffle_stream);

    std::size_t bs = config.batch_size > 0 ? static_cast<std::size_t>(config.batch_size) : n;
    double task_total = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      std::size_t count = std::min(bs, n - start);
      Tensor batch({count, c, h, w});
      std::vector<std::int32_t> batch_labels(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::size_t src = order[start + i];
        std::copy(combined.data.begin() + src * inner,
                  combined.data.begin() + (src + 1) * inner,
                  batch.data.begin() + i * inner);
        batch_labels[i] = combined_labels[src];
      }
      GradientReport grads = backward(surrogate, batch, batch_labels, false);
      sgd_step(surrogate, grads.param_grads, config.lr_theta);
      task_total += grads.loss * static_cast<double>(count);
    }
    double task_loss_value = task_total / static_cast<double>(n);

    // Step 2: one marker step against the fixed surrogate.
    LossBreakdown entry;
    entry.task = task_loss_value;
    {
      Graph<float> g;
      std::vector<Graph<float>::Id> model_ids;
      for (const auto& p : surrogate.params) model_ids.push_back(g.constant(p));
      std::vector<Graph<float>::Id> enc_ids;
      for (const auto& p : encoder.params) enc_ids.push_back(g.constant(p));
      auto delta_id = g.param(delta);
      auto x_id = g.constant(xs);
      auto rows = g.gather_rows(delta_id, ys);
      auto marked = g.clamp01(g.add(x_id, rows));
      auto sem = semantic_loss_graph(g, surrogate.arch, model_ids, enc_ids, x_id,
                                     marked, ys,
                                     static_cast<float>(config.cos_sign));
      auto per = perceptual_loss_graph(g, rows, x_id, marked);
      auto total = g.add(sem, per);
      if (sim.reference != nullptr && sim.lambda != 0.0) {
        auto ref = g.constant(sim.reference->deltas);
        auto sim_id = similarity_loss_graph(g, enc_ids, delta_id, ref);
        entry.similarity =
            sim.lambda * static_cast<double>(g.value(sim_id).data[0]);
        total = g.add(total, g.scale(sim_id, static_cast<float>(sim.lambda)));
      }
      entry.semantic = static_cast<double>(g.value(sem).data[0]);
      entry.perceptual = static_cast<double>(g.value(per).data[0]);
      entry.total = static_cast<double>(g.value(total).data[0]);

      if (!std::isfinite(entry.total)) {
        raise(ErrorCode::DivergenceDetected, "marker objective became non-finite");
      }
      if (config.lr_delta > 0.0f) {
        g.backward(total);
        const Tensor& grad = g.grad(delta_id);
        if (!grad.all_finite()) {
          raise(ErrorCode::DivergenceDetected, "marker gradient became non-finite");
        }
        for (std::size_t i = 0; i < delta.data.size(); ++i) {
          delta.data[i] -= config.lr_delta * grad.data[i];
        }
        clamp_marker(delta, config.epsilon);
      }
    }

    if (epoch == 0) {
      initial_total = entry.total;
    } else if (initial_total > 0.0 && entry.total > 10.0 * initial_total) {
      if (++high_loss_streak >= 5) {
        raise(ErrorCode::DivergenceDetected,
              "marker objective exceeded 10x its initial value for 5 epochs");
      }
    } else {
      high_loss_streak = 0;
    }

    trace.epoch_losses.push_back(entry);
    trace.epoch_sta.push_back(probe_accuracy(surrogate, probe_images, probe_labels));
  }

  surrogate.train_mode = false;
  trace.surrogate = std::move(surrogate);
  trace.marker.deltas = std::move(delta);
  trace.marker.kind = MarkerKind::CVM;
  trace.marker.origin = MarkerOrigin::Optimized;
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return trace;
}

}  // namespace detail

CvmTrace optimize_cvm(const DistilledDataset& dataset,
                      const FrozenEncoder& encoder, const CvmConfig& config,
                      const DistilledDataset* probe,
                      const Tensor* init_override) {
  config.validate();
  dataset.validate();
  auto k = static_cast<std::size_t>(dataset.num_classes);
  Tensor init({k, dataset.channels(), dataset.height(), dataset.width()});
  if (init_override != nullptr) {
    init = *init_override;
  } else if (config.sigma_init > 0.0f) {
    GaussianStream stream(splitmix64_scramble(config.init_seed ^ 0xC4A55ull));
    for (auto& v : init.data) {
      v = static_cast<float>(config.sigma_init * stream.next_normal());
    }
  }
  return detail::alternating_optimize(dataset, encoder, config, std::move(init),
                                      detail::SimObjective{}, probe);
}

MarkerQuality marker_quality(const DistilledDataset& dataset,
                             const MarkerSet& cvm,
                             const SubsetPartition& partition) {
  DistilledDataset marked = apply_cvm(dataset, cvm, partition);
  ProtectedRelease release;
  release.dataset = std::move(marked);
  release.partition = partition;
  MarkerQuality q = release_quality(dataset, release);
  q.max_abs = cvm.max_abs();
  return q;
}

MarkerQuality release_quality(const DistilledDataset& clean,
                              const ProtectedRelease& release) {
  const auto& idx = release.partition.manipulation_indices;
  if (idx.empty()) raise(ErrorCode::EmptyBatch, "release has no marked samples");
  std::size_t c = clean.channels(), h = clean.height(), w = clean.width();
  std::size_t inner = c * h * w;

  double mse = 0.0;
  double ssim_total = 0.0, msssim_total = 0.0;
  float max_abs = 0.0f;
  for (std::size_t i : idx) {
    Tensor a({1, c, h, w}), b({1, c, h, w});
    std::copy(clean.images.data.begin() + i * inner,
              clean.images.data.begin() + (i + 1) * inner, a.data.begin());
    std::copy(release.dataset.images.data.begin() + i * inner,
              release.dataset.images.data.begin() + (i + 1) * inner,
              b.data.begin());
    for (std::size_t j = 0; j < inner; ++j) {
      double d = static_cast<double>(b.data[j]) - static_cast<double>(a.data[j]);
      mse += d * d;
      max_abs = std::max(max_abs, std::abs(b.data[j] - a.data[j]));
    }
    ssim_total += ssim(a, b);
    msssim_total += ms_ssim(a, b);
  }
  mse /= static_cast<double>(idx.size() * inner);

  MarkerQuality q;
  q.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity()
                      : 10.0 * std::log10(1.0 / mse);
  q.ssim = ssim_total / static_cast<double>(idx.size());
  q.msssim = msssim_total / static_cast<double>(idx.size());
  q.max_abs = static_cast<double>(max_abs);
  return q;
}

}  // namespace distmark
