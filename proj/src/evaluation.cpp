#include "distmark/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "distmark/errors.hpp"

namespace distmark {

namespace {

// Survival function of the Kolmogorov distribution, Q(lambda) = P(K > lambda).
// Two complementary series: the theta-function form converges fast for small
// lambda, the alternating exponential form for large lambda.
double kolmogorov_q(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.18) {
    double t = std::exp(-M_PI * M_PI / (8.0 * lambda * lambda));
    double series = t * (1.0 + std::pow(t, 8.0) * (1.0 + std::pow(t, 16.0)));
    double q = 1.0 - std::sqrt(2.0 * M_PI) / lambda * series;
    return std::clamp(q, 0.0, 1.0);
  }
  double e = std::exp(-2.0 * lambda * lambda);
  double q = 2.0 * (e - std::pow(e, 4.0) + std::pow(e, 9.0) - std::pow(e, 16.0));
  return std::clamp(q, 0.0, 1.0);
}

}  // namespace

Tensor BlackBoxModel::query(const Tensor& batch) const {
  Tensor probs = query_fn(batch);
  if (probs.rank() != 2 || probs.dim(0) != batch.dim(0)) {
    raise(ErrorCode::ShapeMismatch, "prediction rows do not match the batch");
  }
  std::size_t n = probs.dim(0), k = probs.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) row += probs.data[i * k + j];
    if (std::abs(row - 1.0) > 1e-5) {
      raise(ErrorCode::NonFiniteActivation,
            "prediction row is not a probability distribution");
    }
  }
  query_count += n;
  return probs;
}

BlackBoxModel wrap_classifier(const Classifier& model) {
  BlackBoxModel box;
  box.query_fn = [model](const Tensor& batch) {
    return softmax_rows(forward_logits(model, batch));
  };
  return box;
}

double accuracy(const BlackBoxModel& model, const TestSet& test) {
  if (test.size() == 0) raise(ErrorCode::EmptyTestSet, "empty test set");
  Tensor probs = model.query(test.images);
  std::size_t n = probs.dim(0), k = probs.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (probs.data[i * k + j] > probs.data[i * k + best]) best = j;
    }
    if (best == static_cast<std::size_t>(test.labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

GapReport gap_report(const BlackBoxModel& model,
                     const std::vector<TestSet>& test_sets) {
  const TestSet* standard = nullptr;
  const TestSet* verification = nullptr;
  std::vector<const TestSet*> tracing;
  for (const auto& t : test_sets) {
    switch (t.kind) {
      case TestKind::Standard:
        if (standard) raise(ErrorCode::MissingTestSet, "duplicate standard set");
        standard = &t;
        break;
      case TestKind::Verification:
        if (verification)
          raise(ErrorCode::MissingTestSet, "duplicate verification set");
        verification = &t;
        break;
      case TestKind::Tracing:
        tracing.push_back(&t);
        break;
    }
  }
  if (!standard || !verification) {
    raise(ErrorCode::MissingTestSet,
          "need one standard and one verification set");
  }
  std::sort(tracing.begin(), tracing.end(),
            [](const TestSet* a, const TestSet* b) { return a->user_id < b->user_id; });

  GapReport report;
  report.sta = accuracy(model, *standard);
  report.vta = accuracy(model, *verification);
  report.g = report.sta - report.vta;
  for (const TestSet* t : tracing) {
    double tta = accuracy(model, *t);
    report.tta.push_back(tta);
    report.user_ids.push_back(t->user_id);
    report.g_hat.push_back(report.sta - tta);
  }
  return report;
}

std::vector<double> confidence_samples(const BlackBoxModel& model,
                                       const TestSet& test) {
  if (test.size() == 0) raise(ErrorCode::EmptyTestSet, "empty test set");
  Tensor probs = model.query(test.images);
  std::size_t n = probs.dim(0), k = probs.dim(1);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    float best = probs.data[i * k];
    for (std::size_t j = 1; j < k; ++j)
      best = std::max(best, probs.data[i * k + j]);
    out[i] = static_cast<double>(best);
  }
  return out;
}

KsResult ks_two_sample(const std::vector<double>& a,
                       const std::vector<double>& b) {
  if (a.size() < 5 || b.size() < 5) {
    raise(ErrorCode::TooFewSamples, "KS needs at least 5 samples per side");
  }
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  auto na = static_cast<double>(sa.size());
  auto nb = static_cast<double>(sb.size());

  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < sa.size() && j < sb.size()) {
    double v = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == v) ++i;
    while (j < sb.size() && sb[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na -
                             static_cast<double>(j) / nb));
  }

  double ne = na * nb / (na + nb);
  KsResult result;
  result.d = d;
  result.p = kolmogorov_q(std::sqrt(ne) * d);
  return result;
}

int tracing_argmax(const GapReport& report) {
  if (report.g_hat.empty()) {
    raise(ErrorCode::MissingTestSet, "no tracing gaps to rank");
  }
  int best = 0;
  for (int i = 1; i < static_cast<int>(report.g_hat.size()); ++i) {
    if (std::abs(report.g_hat[i]) > std::abs(report.g_hat[best])) best = i;
  }
  return best;
}

}  // namespace distmark
