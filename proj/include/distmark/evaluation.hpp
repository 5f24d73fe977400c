#pragma once

// Black-box evaluation: accuracy over test-set families, verification and
// tracing gaps, max-softmax confidence, and the two-sample KS test.

#include <functional>
#include <vector>

#include "distmark/data.hpp"
#include "distmark/nn.hpp"

namespace distmark {

// Opaque prediction interface: only probability rows are observable, and
// every queried sample is counted.
struct BlackBoxModel {
  std::function<Tensor(const Tensor&)> query_fn;
  mutable std::size_t query_count = 0;

  // Returns [B, K] probability rows; enforces row normalization within 1e-5.
  Tensor query(const Tensor& batch) const;
};

BlackBoxModel wrap_classifier(const Classifier& model);

struct GapReport {
  double sta = 0.0;
  double vta = 0.0;
  std::vector<double> tta;      // tracing accuracy, ascending user id
  std::vector<int> user_ids;    // aligned with tta
  double g = 0.0;               // sta - vta; negative signals infringement
  std::vector<double> g_hat;    // sta - tta per user
};

double accuracy(const BlackBoxModel& model, const TestSet& test);

// Expects exactly one standard set, one verification set, and the tracing
// sets; tracing entries are reported in ascending user-id order.
GapReport gap_report(const BlackBoxModel& model,
                     const std::vector<TestSet>& test_sets);

// Max softmax probability per sample, each in [1/K, 1].
std::vector<double> confidence_samples(const BlackBoxModel& model,
                                       const TestSet& test);

struct KsResult {
  double d = 0.0;
  double p = 1.0;
};

// Two-sample Kolmogorov-Smirnov: d is the ECDF sup-distance, p comes from
// the asymptotic Kolmogorov distribution at effective size |a||b|/(|a|+|b|).
KsResult ks_two_sample(const std::vector<double>& a,
                       const std::vector<double>& b);

// Index (into g_hat / user_ids) of the largest |g_hat|; ties pick the lowest.
int tracing_argmax(const GapReport& report);

}  // namespace distmark
