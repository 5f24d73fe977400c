// End-to-end acceptance gate. Each case prints exactly one PASS/FAIL line;
// criteria 3 through 8 and 10 through 11 share a single desk-scale pipeline
// run so the whole binary stays within its time budget.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "distmark/behavior_bank.hpp"
#include "distmark/cvm_optimizer.hpp"
#include "distmark/data.hpp"
#include "distmark/io.hpp"
#include "distmark/losses.hpp"
#include "distmark/nn.hpp"
#include "distmark/pipeline.hpp"
#include "distmark/rng.hpp"

namespace fs = std::filesystem;
using namespace distmark;

namespace {

using GD = Graph<double>;
using TensorD = TensorT<double>;

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

void verdict_line(int index, const std::string& name, bool ok,
                  const std::string& detail) {
  std::string line = "[acceptance " + std::to_string(index / 10) +
                     std::to_string(index % 10) + "] " + name + ": " +
                     (ok ? "PASS" : "FAIL");
  if (!detail.empty()) line += "  (" + detail + ")";
  std::printf("%s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

TensorD rand_tensor(std::vector<std::size_t> shape, GaussianStream& s,
                    double lo, double hi) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) v = lo + (hi - lo) * s.next_uniform();
  return t;
}

// Values in [lo, hi] kept at least `margin` away from every kink listed.
TensorD rand_tensor_off(std::vector<std::size_t> shape, GaussianStream& s,
                        double lo, double hi, std::vector<double> kinks,
                        double margin) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) {
    for (int tries = 0; tries < 1000; ++tries) {
      double x = lo + (hi - lo) * s.next_uniform();
      bool clear = true;
      for (double k : kinks)
        if (std::abs(x - k) < margin) clear = false;
      if (clear) {
        v = x;
        break;
      }
    }
  }
  return t;
}

struct FdCase {
  std::string name;
  std::vector<TensorD> inputs;
  std::function<GD::Id(GD&, const std::vector<GD::Id>&)> build;
};

// Weighted-sum reducer so every output element carries a distinct gradient.
std::function<GD::Id(GD&, GD::Id)> make_reducer(const TensorD& like,
                                                GaussianStream& s) {
  TensorD w(like.shape);
  for (auto& v : w.data) v = 0.5 + s.next_uniform();
  return [w](GD& g, GD::Id id) { return g.sum(g.mul(id, g.constant(w))); };
}

double scalar_eval(const FdCase& c, const std::vector<TensorD>& inputs) {
  GD g;
  std::vector<GD::Id> ids;
  ids.reserve(inputs.size());
  for (const auto& t : inputs) ids.push_back(g.input(t, false));
  return g.value(c.build(g, ids)).data[0];
}

struct FdOutcome {
  double max_rel = 0.0;
  int probes = 0;
};

FdOutcome fd_check(const FdCase& c, int probes, GaussianStream& pick) {
  GD g;
  std::vector<GD::Id> ids;
  ids.reserve(c.inputs.size());
  for (const auto& t : c.inputs) ids.push_back(g.input(t, true));
  g.backward(c.build(g, ids));
  std::vector<TensorD> grads;
  grads.reserve(ids.size());
  for (auto id : ids) grads.push_back(g.grad(id));

  FdOutcome out;
  for (int p = 0; p < probes; ++p) {
    std::size_t which = p % c.inputs.size();
    std::size_t i = static_cast<std::size_t>(
        pick.next_below(c.inputs[which].data.size()));
    double base = c.inputs[which].data[i];
    double h = 1e-5 * std::max(1.0, std::abs(base));
    std::vector<TensorD> shifted = c.inputs;
    shifted[which].data[i] = base + h;
    double fp = scalar_eval(c, shifted);
    shifted[which].data[i] = base - h;
    double fm = scalar_eval(c, shifted);
    double fd = (fp - fm) / (2.0 * h);
    double an = grads[which].data[i];
    double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
    out.max_rel = std::max(out.max_rel, rel);
    ++out.probes;
  }
  return out;
}

std::vector<GD::Id> params_to_ids(GD& g, const std::vector<Tensor>& params,
                                  bool grad) {
  std::vector<GD::Id> ids;
  ids.reserve(params.size());
  for (const auto& p : params) ids.push_back(g.input(tensor_cast<double>(p), grad));
  return ids;
}

std::vector<FdCase> build_fd_cases() {
  GaussianStream s(0xACC3551);
  std::vector<FdCase> cases;

  auto unary = [&](const std::string& name, std::vector<std::size_t> shape,
                   double lo, double hi,
                   std::function<GD::Id(GD&, GD::Id)> op) {
    TensorD x = rand_tensor(shape, s, lo, hi);
    auto reduce = make_reducer(x, s);
    cases.push_back({name,
                     {x},
                     [op, reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, op(g, in[0]));
                     }});
  };

  TensorD other = rand_tensor({2, 3, 4}, s, 0.5, 1.5);
  auto binary_const = [&](const std::string& name, double lo, double hi,
                          std::function<GD::Id(GD&, GD::Id, GD::Id)> op) {
    TensorD x = rand_tensor({2, 3, 4}, s, lo, hi);
    auto reduce = make_reducer(x, s);
    TensorD rhs = other;
    cases.push_back({name,
                     {x},
                     [op, reduce, rhs](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, op(g, in[0], g.constant(rhs)));
                     }});
  };

  binary_const("add", -1.0, 1.0,
               [](GD& g, GD::Id a, GD::Id b) { return g.add(a, b); });
  binary_const("sub", -1.0, 1.0,
               [](GD& g, GD::Id a, GD::Id b) { return g.sub(a, b); });
  binary_const("mul", -1.0, 1.0,
               [](GD& g, GD::Id a, GD::Id b) { return g.mul(a, b); });
  binary_const("div_num", -1.0, 1.0,
               [](GD& g, GD::Id a, GD::Id b) { return g.div(a, b); });
  binary_const("div_den", 0.5, 1.5,
               [](GD& g, GD::Id a, GD::Id b) { return g.div(b, a); });
  unary("scale", {2, 3, 4}, -1.0, 1.0,
        [](GD& g, GD::Id a) { return g.scale(a, 1.7); });
  unary("add_scalar", {2, 3, 4}, -1.0, 1.0,
        [](GD& g, GD::Id a) { return g.add_scalar(a, 0.3); });
  unary("exp", {2, 3, 4}, -1.0, 1.0, [](GD& g, GD::Id a) { return g.exp(a); });
  unary("log", {2, 3, 4}, 0.2, 1.2, [](GD& g, GD::Id a) { return g.log(a); });

  {
    TensorD x = rand_tensor_off({2, 3, 4}, s, -1.0, 1.0, {0.0}, 0.05);
    auto reduce = make_reducer(x, s);
    cases.push_back({"relu",
                     {x},
                     [reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.relu(in[0]));
                     }});
  }
  {
    TensorD x = rand_tensor_off({2, 3, 4}, s, 0.0, 1.0, {0.5}, 0.05);
    auto reduce = make_reducer(x, s);
    cases.push_back({"clamp_min",
                     {x},
                     [reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.clamp_min(in[0], 0.5));
                     }});
  }
  {
    TensorD x = rand_tensor_off({2, 3, 4}, s, -0.5, 1.5, {0.0, 1.0}, 0.05);
    auto reduce = make_reducer(x, s);
    cases.push_back({"clamp01",
                     {x},
                     [reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.clamp01(in[0]));
                     }});
  }
  {
    TensorD x = rand_tensor({2, 3, 4}, s, -1.0, 1.0);
    TensorD flat_like({24});
    for (std::size_t i = 0; i < 24; ++i) flat_like.data[i] = 0.0;
    auto reduce = make_reducer(flat_like, s);
    cases.push_back({"reshape",
                     {x},
                     [reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.reshape(in[0], {24}));
                     }});
  }
  unary("sum", {3, 5}, -1.0, 1.0, [](GD& g, GD::Id a) { return g.sum(a); });
  unary("mean", {3, 5}, -1.0, 1.0, [](GD& g, GD::Id a) { return g.mean(a); });
  {
    TensorD x = rand_tensor({2, 2, 4, 4}, s, -1.0, 1.0);
    TensorD batch_like({2});
    auto reduce = make_reducer(batch_like, s);
    cases.push_back({"mean_chw",
                     {x},
                     [reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.mean_chw(in[0]));
                     }});
  }
  {
    TensorD table = rand_tensor({6, 4}, s, -1.0, 1.0);
    std::vector<std::int32_t> rows{3, 1, 3, 0, 5};
    TensorD out_like({5, 4});
    auto reduce = make_reducer(out_like, s);
    cases.push_back({"gather_rows",
                     {table},
                     [rows, reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.gather_rows(in[0], rows));
                     }});
  }
  {
    TensorD x = rand_tensor({2, 2, 6, 6}, s, -1.0, 1.0);
    TensorD w = rand_tensor({3, 2, 3, 3}, s, -0.5, 0.5);
    TensorD b = rand_tensor({3}, s, -0.2, 0.2);
    TensorD out_like({2, 3, 6, 6});
    auto reduce = make_reducer(out_like, s);
    cases.push_back({"conv2d",
                     {x, w, b},
                     [reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.conv2d(in[0], in[1], in[2]));
                     }});
  }
  {
    TensorD x = rand_tensor({2, 2, 8, 8}, s, 0.0, 1.0);
    auto kernel = gaussian_kernel2d<double>(3, 1.5);
    TensorD out_like({2, 2, 6, 6});
    auto reduce = make_reducer(out_like, s);
    cases.push_back({"blur_valid",
                     {x},
                     [kernel, reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.blur_valid(in[0], kernel, 3, 3));
                     }});
  }
  {
    TensorD x = rand_tensor({2, 2, 8, 8}, s, -1.0, 1.0);
    TensorD out_like({2, 2, 4, 4});
    auto reduce = make_reducer(out_like, s);
    cases.push_back({"avgpool2",
                     {x},
                     [reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.avgpool2(in[0]));
                     }});
  }
  {
    Classifier mlp = make_classifier(Arch::Mlp, 4, 1, 4, 4, 6, 11);
    TensorD x = rand_tensor({3, 16}, s, -1.0, 1.0);
    TensorD w = tensor_cast<double>(mlp.params[0]);
    TensorD b = tensor_cast<double>(mlp.params[1]);
    TensorD out_like({3, 6});
    auto reduce = make_reducer(out_like, s);
    cases.push_back({"linear",
                     {x, w, b},
                     [reduce](GD& g, const std::vector<GD::Id>& in) {
                       return reduce(g, g.linear(in[0], in[1], in[2]));
                     }});
  }
  {
    TensorD logits = rand_tensor({6, 4}, s, -2.0, 2.0);
    std::vector<std::int32_t> labels{0, 1, 2, 3, 1, 2};
    cases.push_back({"softmax_cross_entropy",
                     {logits},
                     [labels](GD& g, const std::vector<GD::Id>& in) {
                       return g.softmax_cross_entropy(in[0], labels);
                     }});
  }
  {
    TensorD a = rand_tensor({4, 7}, s, -1.0, 1.0);
    TensorD b = rand_tensor({4, 7}, s, -1.0, 1.0);
    cases.push_back({"cosine_rows",
                     {a, b},
                     [](GD& g, const std::vector<GD::Id>& in) {
                       return g.mean(g.cosine_rows(in[0], in[1]));
                     }});
  }
  {
    TensorD a = rand_tensor({2, 1, 16, 16}, s, 0.1, 0.9);
    TensorD b = rand_tensor({2, 1, 16, 16}, s, 0.1, 0.9);
    cases.push_back({"ms_ssim",
                     {a, b},
                     [](GD& g, const std::vector<GD::Id>& in) {
                       return g.mean(ms_ssim_graph<double>(g, in[0], in[1]));
                     }});
  }

  // Classifier forwards through cross entropy, gradients taken at the input.
  {
    Classifier conv = make_classifier(Arch::ConvNet, 3, 3, 8, 8, 4, 21);
    std::vector<Tensor> params = conv.params;
    TensorD x = rand_tensor({3, 3, 8, 8}, s, 0.0, 1.0);
    std::vector<std::int32_t> labels{0, 1, 2};
    cases.push_back({"convnet_ce",
                     {x},
                     [params, labels](GD& g, const std::vector<GD::Id>& in) {
                       auto ids = params_to_ids(g, params, false);
                       auto logits =
                           classifier_logits(g, Arch::ConvNet, ids, in[0]);
                       return g.softmax_cross_entropy(logits, labels);
                     }});
  }
  {
    Classifier mlp = make_classifier(Arch::Mlp, 3, 1, 8, 8, 10, 22);
    std::vector<Tensor> params = mlp.params;
    TensorD x = rand_tensor({4, 1, 8, 8}, s, 0.0, 1.0);
    std::vector<std::int32_t> labels{0, 1, 2, 0};
    cases.push_back({"mlp_ce",
                     {x},
                     [params, labels](GD& g, const std::vector<GD::Id>& in) {
                       auto ids = params_to_ids(g, params, false);
                       auto logits = classifier_logits(g, Arch::Mlp, ids, in[0]);
                       return g.softmax_cross_entropy(logits, labels);
                     }});
  }

  // Marker objectives, gradients taken at the class-marker table.
  {
    Classifier mlp = make_classifier(Arch::Mlp, 3, 1, 8, 8, 8, 31);
    FrozenEncoder enc = make_encoder(1, 8, 8, 4, 32);
    std::vector<Tensor> mparams = mlp.params;
    std::vector<Tensor> eparams = enc.params;
    TensorD x = rand_tensor({5, 1, 8, 8}, s, 0.15, 0.85);
    TensorD delta = rand_tensor({3, 1, 8, 8}, s, -0.04, 0.04);
    std::vector<std::int32_t> labels{0, 1, 2, 1, 0};
    cases.push_back(
        {"semantic_loss",
         {delta},
         [mparams, eparams, x, labels](GD& g, const std::vector<GD::Id>& in) {
           auto mids = params_to_ids(g, mparams, false);
           auto eids = params_to_ids(g, eparams, false);
           auto xc = g.constant(x);
           auto rows = g.gather_rows(in[0], labels);
           auto marked = g.clamp01(g.add(xc, rows));
           return semantic_loss_graph<double>(g, Arch::Mlp, mids, eids, xc,
                                              marked, labels, 1.0);
         }});
    cases.push_back(
        {"perceptual_loss",
         {delta},
         [x, labels](GD& g, const std::vector<GD::Id>& in) {
           auto xc = g.constant(x);
           auto rows = g.gather_rows(in[0], labels);
           auto marked = g.clamp01(g.add(xc, rows));
           return perceptual_loss_graph<double>(g, rows, xc, marked);
         }});
    TensorD ustm = rand_tensor({3, 1, 8, 8}, s, -0.2, 0.2);
    TensorD cvm = rand_tensor({3, 1, 8, 8}, s, -0.2, 0.2);
    cases.push_back(
        {"similarity_loss",
         {ustm},
         [eparams, cvm](GD& g, const std::vector<GD::Id>& in) {
           auto eids = params_to_ids(g, eparams, false);
           return similarity_loss_graph<double>(g, eids, in[0], g.constant(cvm));
         }});
  }

  return cases;
}

// ------------------------------------------------------------- desk pipeline

struct DeskRun {
  ExperimentConfig config;
  ExperimentReport report;
  double wall_seconds = 0.0;
  std::string report_bytes;
  MarkerSet cvm;
  std::vector<MarkerSet> user_markers;
};

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

DeskRun make_desk_run() {
  DeskRun d;
  d.config.master_seed = 424242;
  d.config.out_dir = fs::temp_directory_path() / "distmark_acceptance" / "desk";
  fs::remove_all(d.config.out_dir);
  fs::create_directories(d.config.out_dir);

  double t0 = now_seconds();
  d.report = run_pipeline(d.config);
  d.wall_seconds = now_seconds() - t0;

  d.report_bytes = read_bytes(d.config.out_dir / "report.json");
  d.cvm = load_marker(d.config.out_dir / "cvm" / "marker");
  for (int j = 1; j <= d.config.num_users; ++j) {
    d.user_markers.push_back(
        load_marker(d.config.out_dir / ("user" + std::to_string(j)) / "marker"));
  }
  return d;
}

DeskRun& desk() {
  static DeskRun d = make_desk_run();
  return d;
}

}  // namespace

TEST_CASE("gradients of every differentiable op match finite differences") {
  double t0 = now_seconds();
  GaussianStream pick(0xF1D);
  auto cases = build_fd_cases();
  double worst = 0.0;
  std::string worst_name;
  bool all_ok = true;
  for (const auto& c : cases) {
    auto outcome = fd_check(c, 24, pick);
    CHECK_MESSAGE(outcome.max_rel <= 1e-4,
                  c.name << " max rel err " << outcome.max_rel);
    CHECK(outcome.probes >= 20);
    if (outcome.max_rel > worst) {
      worst = outcome.max_rel;
      worst_name = c.name;
    }
    if (outcome.max_rel > 1e-4 || outcome.probes < 20) all_ok = false;
  }
  double elapsed = now_seconds() - t0;
  bool in_time = elapsed < 60.0;
  CHECK(in_time);
  verdict_line(1, "gradient fidelity", all_ok && in_time,
               std::to_string(cases.size()) + " ops, worst rel err " +
                   fmt(worst) + " at " + worst_name + ", " + fmt(elapsed) + "s");
}

TEST_CASE("key-derived markers are bit-reproducible and pairwise dissimilar") {
  double t0 = now_seconds();
  const int K = 4, C = 3, H = 16, W = 16;
  const double sigma = 0.015;

  GaussianStream secrets(0x5EC2E75);
  auto random_key = [&](int id) {
    std::vector<std::uint8_t> bytes(32);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(secrets.next_below(256));
    return UserKey::from_secret(id, bytes);
  };

  UserKey fixed = random_key(1);
  MarkerSet first = generate_ustm_init(fixed, K, C, H, W, sigma);
  bool repeatable = true;
  for (int r = 0; r < 99; ++r) {
    MarkerSet again = generate_ustm_init(fixed, K, C, H, W, sigma);
    if (again.deltas.data != first.deltas.data) repeatable = false;
  }
  CHECK(repeatable);

  double sum_abs_cos = 0.0;
  int pairs = 0;
  for (int p = 0; p < 100; ++p) {
    MarkerSet a = generate_ustm_init(random_key(2 * p + 10), K, C, H, W, sigma);
    MarkerSet b = generate_ustm_init(random_key(2 * p + 11), K, C, H, W, sigma);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.deltas.data.size(); ++i) {
      double xa = a.deltas.data[i], xb = b.deltas.data[i];
      dot += xa * xb;
      na += xa * xa;
      nb += xb * xb;
    }
    sum_abs_cos += std::abs(dot / std::sqrt(na * nb));
    ++pairs;
  }
  double mean_abs_cos = sum_abs_cos / pairs;
  CHECK(mean_abs_cos < 0.2);

  double elapsed = now_seconds() - t0;
  bool in_time = elapsed < 10.0;
  CHECK(in_time);
  verdict_line(2, "keyed marker determinism", repeatable && mean_abs_cos < 0.2 && in_time,
               "100 repeats bit-identical, mean |cos| " + fmt(mean_abs_cos) +
                   " over 100 pairs, " + fmt(elapsed) + "s");
}

TEST_CASE("marking leaves standard accuracy of downstream models intact") {
  DeskRun& d = desk();
  double gap = std::abs(d.report.mean_sta_infringing - d.report.mean_sta_reference);
  bool in_time = d.wall_seconds < 600.0;
  bool ok = gap <= 0.05 && in_time;
  CHECK(gap <= 0.05);
  CHECK(in_time);
  verdict_line(3, "harmlessness", ok,
               "mean STA ref " + fmt(d.report.mean_sta_reference) + " vs marked " +
                   fmt(d.report.mean_sta_infringing) + ", gap " + fmt(gap) +
                   ", pipeline " + fmt(d.wall_seconds) + "s");
}

TEST_CASE("verification gap separates marked-data models from reference models") {
  DeskRun& d = desk();
  int inf_total = 0, inf_hit = 0, ref_total = 0, ref_hit = 0;
  for (const auto& r : d.report.eval_records) {
    if (r.infringing) {
      ++inf_total;
      if (r.gaps.g <= -0.10) ++inf_hit;
    } else {
      ++ref_total;
      if (std::abs(r.gaps.g) <= 0.05) ++ref_hit;
    }
  }
  bool ok = inf_total > 0 && ref_total > 0 &&
            inf_hit * 10 >= inf_total * 9 && ref_hit * 10 >= ref_total * 9;
  CHECK(ok);
  verdict_line(4, "verification gap separation", ok,
               "G<=-0.10 on " + std::to_string(inf_hit) + "/" +
                   std::to_string(inf_total) + " marked-data models, |G|<=0.05 on " +
                   std::to_string(ref_hit) + "/" + std::to_string(ref_total) +
                   " reference models");
}

TEST_CASE("verdict success rate on held-out models") {
  DeskRun& d = desk();
  // First five seeds per provenance: a balanced 20-model subset, all disjoint
  // from the bank split.
  std::vector<bool> predicted, truth;
  for (const auto& r : d.report.eval_records) {
    if (r.eval_index < 5) {
      predicted.push_back(r.predicted_infringing);
      truth.push_back(r.infringing);
    }
  }
  double rate = predicted.empty() ? 0.0 : cvsr(predicted, truth);
  bool ok = predicted.size() == 20 && rate >= 0.90;
  CHECK(ok);
  verdict_line(5, "verdict success rate", ok,
               "CVSR " + fmt(rate) + " over " + std::to_string(predicted.size()) +
                   " held-out models, full population " + fmt(d.report.cvsr_value));
}

TEST_CASE("leaking user is traced from black-box behavior") {
  DeskRun& d = desk();
  bool ok = d.report.dltsr_value >= 0.80;
  bool diag_ok = !d.report.diag_total_counts.empty();
  for (std::size_t j = 0; j < d.report.diag_total_counts.size(); ++j) {
    int total = d.report.diag_total_counts[j];
    int dominant = d.report.diag_dominant_counts[j];
    if (dominant * 10 < total * 8) diag_ok = false;
  }
  CHECK(ok);
  CHECK(diag_ok);
  std::string per_user;
  for (std::size_t j = 0; j < d.report.diag_total_counts.size(); ++j) {
    if (j) per_user += " ";
    per_user += std::to_string(d.report.diag_dominant_counts[j]) + "/" +
                std::to_string(d.report.diag_total_counts[j]);
  }
  verdict_line(6, "tracing success rate", ok && diag_ok,
               "DLTSR " + fmt(d.report.dltsr_value) + ", per-user gap argmax " +
                   per_user);
}

TEST_CASE("confidence distributions split on verification but not standard data") {
  DeskRun& d = desk();
  int samples_per_set = d.report.num_classes * d.report.heldout_per_class;
  bool enough = samples_per_set >= 100;
  bool ok = d.report.ks_standard_p_median > 0.05 &&
            d.report.ks_verification_p_median < 0.01 && enough;
  CHECK(d.report.ks_standard_p_median > 0.05);
  CHECK(d.report.ks_verification_p_median < 0.01);
  CHECK(enough);
  verdict_line(7, "confidence distribution split", ok,
               "KS p standard " + fmt(d.report.ks_standard_p_median) +
                   ", verification " + fmt(d.report.ks_verification_p_median) +
                   ", " + std::to_string(samples_per_set) + " samples per set");
}

TEST_CASE("released datasets stay imperceptibly close to the clean data") {
  DeskRun& d = desk();
  float eps = d.config.cvm.epsilon;
  float budget = eps * (1.0f + 1e-5f);
  bool ok = !d.report.release_qualities.empty();
  double worst_msssim = 1.0, worst_psnr = std::numeric_limits<double>::infinity();
  for (const auto& q : d.report.release_qualities) {
    worst_msssim = std::min(worst_msssim, q.msssim);
    worst_psnr = std::min(worst_psnr, q.psnr);
    if (q.msssim < 0.95 || q.psnr < 30.0) ok = false;
  }
  bool markers_in_budget = d.cvm.max_abs() <= budget;
  for (const auto& m : d.user_markers) {
    if (m.max_abs() > budget) markers_in_budget = false;
  }
  CHECK(ok);
  CHECK(markers_in_budget);
  verdict_line(8, "release imperceptibility", ok && markers_in_budget,
               "worst MS-SSIM " + fmt(worst_msssim) + ", worst PSNR " +
                   fmt(worst_psnr) + " dB, marker sup-norm within " + fmt(eps));
}

TEST_CASE("signature retrieval matches brute-force nearest neighbor") {
  GaussianStream s(0xBA27C);
  auto brute = [](const ReferenceBank& bank, const std::vector<double>& q,
                  bool euclidean) {
    std::size_t best = 0;
    double best_d = 0.0;
    bool first = true;
    for (std::size_t i = 0; i < bank.entries.size(); ++i) {
      const auto& e = bank.entries[i].signature;
      double dist;
      if (euclidean) {
        double total = 0.0;
        for (std::size_t k = 0; k < e.size(); ++k)
          total += (q[k] - e[k]) * (q[k] - e[k]);
        dist = std::sqrt(total);
      } else {
        double qa = 0.0, ea = 0.0, dot = 0.0;
        for (double x : q) qa += x * x;
        for (double x : e) ea += x * x;
        double nq = std::sqrt(qa), ne = std::sqrt(ea);
        for (std::size_t k = 0; k < e.size(); ++k) dot += q[k] * e[k];
        dist = 1.0 - dot / (nq * ne);
      }
      if (first || dist < best_d) {
        best = i;
        best_d = dist;
        first = false;
      }
    }
    return std::pair<std::size_t, double>(best, best_d);
  };

  int mismatches = 0;
  int tie_banks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t dim = 2 + s.next_below(7);
    std::size_t n = 1 + s.next_below(100);
    ReferenceBank bank;
    for (std::size_t i = 0; i < n; ++i) {
      BankEntry e;
      if (i > 0 && s.next_below(4) == 0) {
        e.signature = bank.entries[s.next_below(i)].signature;
        ++tie_banks;
      } else {
        e.signature.resize(dim);
        for (auto& v : e.signature) v = 0.05 + s.next_uniform();
      }
      e.label.infringing = s.next_below(2) == 1;
      e.label.user_id = e.label.infringing ? static_cast<int>(s.next_below(5)) : -1;
      bank.append(std::move(e));
    }
    std::vector<double> q(dim);
    if (s.next_below(4) == 0) {
      q = bank.entries[s.next_below(n)].signature;
    } else {
      for (auto& v : q) v = 0.05 + s.next_uniform();
    }
    bool euclidean = s.next_below(2) == 1;
    auto got = retrieve(bank, q, euclidean);
    auto want = brute(bank, q, euclidean);
    if (got.index != want.first ||
        std::abs(got.distance - want.second) > 1e-12) {
      ++mismatches;
    }
  }
  bool ok = mismatches == 0;
  CHECK(ok);
  verdict_line(9, "retrieval exactness", ok,
               "1000 random banks, " + std::to_string(mismatches) +
                   " disagreements, " + std::to_string(tie_banks) +
                   " duplicated entries exercised");
}

TEST_CASE("repeated runs with one master seed reproduce the report byte for byte") {
  DeskRun& d = desk();
  double t0 = now_seconds();
  ExperimentReport second = run_pipeline(d.config);
  double second_wall = now_seconds() - t0;
  std::string second_bytes = read_bytes(d.config.out_dir / "report.json");
  bool identical = second_bytes == d.report_bytes;
  bool in_time = d.wall_seconds + second_wall < 1200.0;
  CHECK(identical);
  CHECK(in_time);
  CHECK(second.eval_records.size() == d.report.eval_records.size());
  verdict_line(10, "bitwise reproducibility", identical && in_time,
               std::to_string(second_bytes.size()) + " report bytes" +
                   (identical ? " identical" : " differ") + ", two runs " +
                   fmt(d.wall_seconds + second_wall) + "s");
}

TEST_CASE("class marker optimization finishes within its time budget") {
  DeskRun& d = desk();
  double cvm_seconds = d.report.timings.cvm;
  Json timings = read_json_file(d.config.out_dir / "timings.json");
  bool recorded = timings.contains("cvm_seconds") &&
                  timings["cvm_seconds"].get<double>() == cvm_seconds;
  bool ok = cvm_seconds > 0.0 && cvm_seconds < 60.0 && recorded;
  CHECK(cvm_seconds > 0.0);
  CHECK(cvm_seconds < 60.0);
  CHECK(recorded);
  verdict_line(11, "marker optimization speed", ok,
               "marker stage " + fmt(cvm_seconds) + "s, recorded in timings.json");
}
