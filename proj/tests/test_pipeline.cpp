#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "distmark/pipeline.hpp"
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

using namespace distmark;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("distmark_pipe_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.master_seed = 99;
  c.out_dir = out;
  c.synth.num_classes = 2;
  c.synth.images_per_class = 5;
  c.synth.channels = 1;
  c.synth.height = 8;
  c.synth.width = 8;
  c.synth.sigma_c = 0.25;
  c.synth.heldout_per_class = 3;
  c.cvm.epochs = 4;
  c.cvm.alpha = 0.4;
  c.cvm.surrogate_arch = Arch::Mlp;
  c.cvm.surrogate_width = 8;
  c.num_users = 1;
  c.downstream.archs = {Arch::Mlp};
  c.downstream.epochs = {5};
  c.downstream.width = 8;
  c.bank_seeds_per_cell = 1;
  c.eval_models_per_provenance = 2;
  return c;
}

}  // namespace

TEST_CASE("user keys derive deterministically from the master seed") {
  auto keys = derive_user_keys(1234, 3);
  REQUIRE(keys.size() == 3);
  for (int j = 0; j < 3; ++j) {
    CHECK(keys[j].user_id == j + 1);
    CHECK(keys[j].secret.size() == 32);
    CHECK(keys[j].fingerprint().size() == 64);
  }
  CHECK(keys[0].fingerprint() != keys[1].fingerprint());

  auto again = derive_user_keys(1234, 3);
  CHECK(again[2].fingerprint() == keys[2].fingerprint());
  auto shifted = derive_user_keys(1235, 3);
  CHECK(shifted[0].fingerprint() != keys[0].fingerprint());
}

TEST_CASE("experiment config round trips through json") {
  auto c = tiny_config("somewhere");
  c.lambda_sim = 0.5;
  c.ustm_sigma = 0.02;
  c.downstream.archs = {Arch::ConvNetWide, Arch::Mlp};
  c.downstream.epochs = {5, 9};

  Json j = experiment_config_json(c);
  auto parsed = parse_experiment_config(j);
  CHECK(parsed.master_seed == c.master_seed);
  CHECK(parsed.out_dir == c.out_dir);
  CHECK(parsed.synth.num_classes == 2);
  CHECK(parsed.synth.heldout_per_class == 3);
  CHECK(parsed.cvm.epochs == 4);
  CHECK(parsed.cvm.alpha == c.cvm.alpha);
  CHECK(parsed.lambda_sim == 0.5);
  CHECK(parsed.ustm_sigma == 0.02);
  CHECK(parsed.num_users == 1);
  CHECK(parsed.downstream.archs == c.downstream.archs);
  CHECK(parsed.downstream.epochs == c.downstream.epochs);
  CHECK(parsed.bank_seeds_per_cell == 1);
  CHECK(parsed.eval_models_per_provenance == 2);
  CHECK(experiment_config_json(parsed) == j);

  CHECK_THROWS_AS(
      parse_experiment_config(Json{{"ustm", Json{{"num_users", 0}}}}), Error);
}

TEST_CASE("tiny pipeline produces a consistent artifact tree") {
  auto out = fresh_dir("run");
  auto config = tiny_config(out);
  auto report = run_pipeline(config);

  // population sizes: bank = 1 arch x 1 epoch x 2 provenances x 1 seed,
  // eval = 2 models each for reference and the single user
  CHECK(report.bank_size == 2);
  REQUIRE(report.eval_records.size() == 4);
  CHECK(report.num_classes == 2);
  CHECK(report.images_per_class == 5);
  CHECK(report.heldout_per_class == 3);

  std::size_t heldout_n = 6;
  for (const auto& r : report.eval_records) {
    CHECK(r.queries == heldout_n * 3);  // standard + verification + tracing
    CHECK(r.gaps.user_ids == std::vector<int>{1});
    CHECK(r.train_curve.size() == 5);
    CHECK(r.gaps.sta >= 0.0);
    CHECK(r.gaps.sta <= 1.0);
    CHECK((r.provenance == "reference" || r.provenance == "user1"));
    CHECK(r.infringing == (r.provenance == "user1"));
  }
  CHECK(report.cvm_losses.size() == 4);
  CHECK(report.cvm_sta_curve.size() == 4);
  CHECK(report.cvm_quality.max_abs <= config.cvm.epsilon + 1e-6);
  REQUIRE(report.release_qualities.size() == 1);
  CHECK(report.ustm_pairwise_cos.empty());  // one user, no pairs
  CHECK(report.cross_user_matrix.size() == 1);
  CHECK(report.diag_total_counts == std::vector<int>{2});
  CHECK(report.ks_pairs.size() == 2);
  CHECK(report.cvsr_value >= 0.0);
  CHECK(report.cvsr_value <= 1.0);
  CHECK(report.timings.total > 0.0);

  for (const char* rel :
       {"dataset/manifest.json", "heldout/manifest.json", "cvm/marker/manifest.json",
        "partition.json", "keys.json", "user1/marker/manifest.json",
        "user1/release/manifest.json", "test_sets/standard/manifest.json",
        "test_sets/verification/manifest.json",
        "test_sets/tracing_user1/manifest.json", "bank.json", "report.json",
        "timings.json", "plot_data/cvm_curve.csv", "plot_data/gap_bars.csv",
        "plot_data/tracing_matrix.csv", "plot_data/confidence_hist_standard.csv",
        "plot_data/confidence_hist_verification.csv",
        "plot_data/timing_bars.csv"}) {
    CAPTURE(rel);
    CHECK(fs::exists(out / rel));
  }
  for (int m = 0; m < 4; ++m) {
    char name[40];
    std::snprintf(name, sizeof(name), "plot_data/model_curve_%03d.csv", m);
    CHECK(fs::exists(out / name));
  }

  // everything on disk reloads
  auto dataset = load_dataset(out / "dataset");
  CHECK_NOTHROW(dataset.validate());
  CHECK(load_marker(out / "cvm" / "marker").kind == MarkerKind::CVM);
  CHECK(load_marker(out / "user1" / "marker").kind == MarkerKind::USTM);
  CHECK(load_bank(out / "bank.json").size() == 2);
  int ts_classes = 0;
  CHECK(load_test_set(out / "test_sets" / "tracing_user1", &ts_classes).user_id == 1);
  CHECK(load_test_set(out / "test_sets" / "standard", &ts_classes).size() ==
        heldout_n);
  CHECK(ts_classes == 2);

  // saved report matches the in-memory one and a re-run is byte-identical
  std::string first = slurp(out / "report.json");
  CHECK(Json::parse(first) == report_json(report));
  auto report2 = run_pipeline(config);
  CHECK(slurp(out / "report.json") == first);

  // plot data regenerates from the saved json alone
  auto regen = fresh_dir("regen");
  emit_plot_data_from_json(Json::parse(first),
                           Json::parse(slurp(out / "timings.json")), regen);
  for (const char* rel :
       {"plot_data/cvm_curve.csv", "plot_data/model_curve_000.csv",
        "plot_data/gap_bars.csv", "plot_data/tracing_matrix.csv",
        "plot_data/confidence_hist_standard.csv", "plot_data/timing_bars.csv"}) {
    CAPTURE(rel);
    CHECK(slurp(regen / rel) == slurp(out / rel));
  }

  CHECK_THROWS_AS(
      emit_plot_data_from_json(Json::object(), Json::object(), regen), Error);
}

TEST_CASE("importing a saved dataset replaces synthesis") {
  auto src = fresh_dir("import_src");
  auto config = tiny_config(fresh_dir("import_run"));
  auto [distilled, heldout] = generate(config.synth);
  save_dataset(distilled, src / "distilled");
  save_dataset(heldout, src / "heldout");

  config.import_dir = src.string();
  auto report = run_pipeline(config);
  CHECK(report.num_classes == distilled.num_classes);
  CHECK(report.images_per_class == distilled.images_per_class);

  auto reexported = load_dataset(config.out_dir / "dataset");
  CHECK(reexported.images.data == distilled.images.data);
  CHECK(reexported.labels == distilled.labels);
}
