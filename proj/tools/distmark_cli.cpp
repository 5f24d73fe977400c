// distmark: protect distilled datasets with class and per-user markers, then
// verify and trace suspect models through black-box queries.

#include <cstdlib>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "distmark/errors.hpp"
#include "distmark/pipeline.hpp"

namespace fs = std::filesystem;
using namespace distmark;

namespace {

// Flat JSON schema shared by both protect subcommands; the encoder fields
// must match between the cvm and ustm runs for the similarity term to mean
// anything.
struct ProtectConfig {
  CvmConfig cvm;
  std::uint64_t encoder_seed = 0xE5EEDull;
  int encoder_width = 8;
  double lambda_sim = 1.0;
  double sigma = 0.015;
};

ProtectConfig parse_protect_config(const Json& j) {
  ProtectConfig pc;
  CvmConfig& c = pc.cvm;
  c.epochs = j.value("epochs", c.epochs);
  c.lr_theta = j.value("lr_theta", c.lr_theta);
  c.lr_delta = j.value("lr_delta", c.lr_delta);
  c.alpha = j.value("alpha", c.alpha);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.sigma_init = j.value("sigma_init", c.sigma_init);
  c.cos_sign = j.value("cos_sign", c.cos_sign);
  if (j.contains("surrogate_arch"))
    c.surrogate_arch = arch_from_name(j.at("surrogate_arch").get<std::string>());
  c.surrogate_width = j.value("surrogate_width", c.surrogate_width);
  c.partition_seed = j.value("partition_seed", c.partition_seed);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
  pc.encoder_seed = j.value("encoder_seed", pc.encoder_seed);
  pc.encoder_width = j.value("encoder_width", pc.encoder_width);
  pc.lambda_sim = j.value("lambda_sim", pc.lambda_sim);
  pc.sigma = j.value("sigma", pc.sigma);
  c.validate();
  return pc;
}

ProtectConfig load_protect_config(const std::string& path) {
  return path.empty() ? ProtectConfig{} : parse_protect_config(read_json_file(path));
}

SynthSpec parse_synth_spec(const Json& j) {
  SynthSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  s.images_per_class = j.value("images_per_class", s.images_per_class);
  s.channels = j.value("channels", s.channels);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.prototype_seed = j.value("prototype_seed", s.prototype_seed);
  s.sigma_c = j.value("sigma_c", s.sigma_c);
  s.heldout_per_class = j.value("heldout_per_class", s.heldout_per_class);
  s.validate();
  return s;
}

Json finite_or_string(double v) {
  if (std::isinf(v)) return v > 0 ? Json("inf") : Json("-inf");
  return Json(v);
}

Json quality_json(const MarkerQuality& q) {
  return Json{{"psnr_db", finite_or_string(q.psnr)},
              {"ssim", q.ssim},
              {"msssim", q.msssim},
              {"max_abs", q.max_abs}};
}

Json trace_json(const CvmTrace& trace, const MarkerQuality& quality) {
  Json curve = Json::array();
  for (const auto& l : trace.epoch_losses) {
    curve.push_back(Json{{"task", l.task},
                         {"semantic", l.semantic},
                         {"perceptual", l.perceptual},
                         {"similarity", l.similarity},
                         {"total", l.total}});
  }
  Json j;
  j["epochs"] = trace.epoch_losses.size();
  j["wall_seconds"] = trace.wall_seconds;
  j["loss_curve"] = curve;
  j["sta_curve"] = trace.epoch_sta;
  j["marker_checksum"] = trace.marker.checksum();
  j["surrogate_checksum"] = trace.surrogate.checksum();
  j["quality"] = quality_json(quality);
  return j;
}

Json gaps_json(const GapReport& g) {
  return Json{{"sta", g.sta},       {"vta", g.vta},
              {"tta", g.tta},       {"user_ids", g.user_ids},
              {"g", g.g},           {"g_hat", g.g_hat}};
}

std::vector<TestSet> load_test_sets_dir(const fs::path& dir) {
  std::vector<fs::path> entries;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory() && fs::exists(e.path() / "manifest.json")) {
        entries.push_back(e.path());
      }
    }
  }
  std::sort(entries.begin(), entries.end());
  if (entries.empty()) {
    raise(ErrorCode::MissingTestSet, "no test-set containers under " + dir.string());
  }
  std::vector<TestSet> sets;
  for (const auto& p : entries) sets.push_back(load_test_set(p, nullptr));
  return sets;
}

Verdict run_verdict(const std::string& bank_path, const std::string& model_dir,
                    const std::string& ts_dir, Json* verdict_out) {
  ReferenceBank bank = load_bank(bank_path);
  Classifier model = load_model(model_dir);
  std::vector<TestSet> sets = load_test_sets_dir(ts_dir);
  BlackBoxModel box = wrap_classifier(model);
  Verdict v = verdict(bank, box, sets);
  if (verdict_out != nullptr) {
    Json j;
    j["infringing"] = v.infringing;
    j["user_id"] = v.user_id;
    j["distance"] = v.distance;
    j["neighbor_index"] = v.neighbor_index;
    j["signature"] = v.signature;
    j["gaps"] = gaps_json(v.gaps);
    j["ks_standard_vs_verification"] =
        Json{{"d", v.ks_standard_vs_verification.d},
             {"p", v.ks_standard_vs_verification.p}};
    j["queries"] = box.query_count;
    *verdict_out = j;
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distilled-dataset marker protection and black-box provenance checks"};
  app.require_subcommand(1);
  int exit_code = 0;

  // synth
  auto* synth_cmd = app.add_subcommand(
      "synth", "generate a synthetic distilled dataset plus held-out pool");
  std::string synth_spec_path, synth_out;
  synth_cmd->add_option("--spec", synth_spec_path, "synthesis spec JSON");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->callback([&] {
    SynthSpec spec = synth_spec_path.empty()
                         ? SynthSpec{}
                         : parse_synth_spec(read_json_file(synth_spec_path));
    auto [distilled, heldout] = generate(spec);
    save_dataset(distilled, fs::path(synth_out) / "distilled");
    save_dataset(heldout, fs::path(synth_out) / "heldout");
    std::cout << "distilled " << distilled.size() << " images, heldout "
              << heldout.size() << " images -> " << synth_out << "\n";
  });

  // protect cvm / protect ustm
  auto* protect_cmd = app.add_subcommand("protect", "optimize dataset markers");
  protect_cmd->require_subcommand(1);

  auto* cvm_cmd = protect_cmd->add_subcommand("cvm", "optimize the class marker");
  std::string cvm_dataset, cvm_config, cvm_out;
  cvm_cmd->add_option("--dataset", cvm_dataset, "distilled dataset directory")->required();
  cvm_cmd->add_option("--config", cvm_config, "protect config JSON");
  cvm_cmd->add_option("--out", cvm_out, "output directory")->required();
  cvm_cmd->callback([&] {
    DistilledDataset data = load_dataset(cvm_dataset);
    ProtectConfig pc = load_protect_config(cvm_config);
    FrozenEncoder encoder = make_encoder(
        static_cast<int>(data.channels()), static_cast<int>(data.height()),
        static_cast<int>(data.width()), pc.encoder_width, pc.encoder_seed);
    CvmTrace trace = optimize_cvm(data, encoder, pc.cvm);
    fs::path out(cvm_out);
    save_marker(trace.marker, out / "marker");
    save_partition(trace.partition, pc.cvm.partition_seed, out / "partition.json");
    write_json_file(out / "trace.json",
                    trace_json(trace, marker_quality(data, trace.marker,
                                                     trace.partition)));
    std::cout << "class marker optimized in " << trace.wall_seconds << " s -> "
              << out.string() << "\n";
  });

  auto* ustm_cmd = protect_cmd->add_subcommand(
      "ustm", "optimize per-user markers and build releases");
  std::string ustm_dataset, ustm_cvm, ustm_keys, ustm_config, ustm_heldout, ustm_out;
  ustm_cmd->add_option("--dataset", ustm_dataset, "distilled dataset directory")->required();
  ustm_cmd->add_option("--cvm", ustm_cvm, "class marker directory")->required();
  ustm_cmd->add_option("--keys", ustm_keys, "user key file (JSON)")->required();
  ustm_cmd->add_option("--config", ustm_config, "protect config JSON");
  ustm_cmd->add_option("--heldout", ustm_heldout,
                       "held-out dataset; when given, also emits the test-set family");
  ustm_cmd->add_option("--out", ustm_out, "output directory")->required();
  ustm_cmd->callback([&] {
    DistilledDataset data = load_dataset(ustm_dataset);
    MarkerSet cvm = load_marker(ustm_cvm);
    std::vector<UserKey> keys = load_keys(ustm_keys);
    ProtectConfig pc = load_protect_config(ustm_config);
    FrozenEncoder encoder = make_encoder(
        static_cast<int>(data.channels()), static_cast<int>(data.height()),
        static_cast<int>(data.width()), pc.encoder_width, pc.encoder_seed);
    UstmConfig ucfg;
    ucfg.base = pc.cvm;
    ucfg.lambda_sim = pc.lambda_sim;
    ucfg.sigma = pc.sigma;

    fs::path out(ustm_out);
    std::set<int> seen;
    std::map<int, MarkerSet> ustms;
    for (const UserKey& key : keys) {
      if (!seen.insert(key.user_id).second) {
        raise(ErrorCode::DuplicateUser,
              "duplicate user id " + std::to_string(key.user_id));
      }
      CvmTrace trace = optimize_ustm(data, cvm, key, encoder, ucfg);
      ProtectedRelease release =
          build_release(data, cvm, trace.marker, trace.partition, key.user_id);
      fs::path user_dir = out / ("user" + std::to_string(key.user_id));
      save_marker(trace.marker, user_dir / "marker");
      save_dataset(release.dataset, user_dir / "release");
      write_json_file(user_dir / "trace.json",
                      trace_json(trace, release_quality(data, release)));
      ustms[key.user_id] = trace.marker;
      std::cout << "user " << key.user_id << " marker optimized in "
                << trace.wall_seconds << " s\n";
    }
    if (!ustm_heldout.empty()) {
      DistilledDataset heldout = load_dataset(ustm_heldout);
      for (const TestSet& t : build_test_sets(heldout, cvm, ustms)) {
        std::string name = test_kind_name(t.kind);
        if (t.kind == TestKind::Tracing) name += "_user" + std::to_string(t.user_id);
        save_test_set(t, heldout.num_classes, out / "test_sets" / name);
      }
      std::cout << "test sets -> " << (out / "test_sets").string() << "\n";
    }
  });

  // release
  auto* release_cmd = app.add_subcommand(
      "release", "assemble a user release from existing markers");
  std::string rel_dataset, rel_cvm, rel_ustm, rel_partition, rel_out;
  int rel_user = 0;
  release_cmd->add_option("--dataset", rel_dataset, "distilled dataset directory")->required();
  release_cmd->add_option("--cvm", rel_cvm, "class marker directory")->required();
  release_cmd->add_option("--ustm", rel_ustm, "user marker directory")->required();
  release_cmd->add_option("--partition", rel_partition, "partition JSON")->required();
  release_cmd->add_option("--user-id", rel_user, "user id")->required();
  release_cmd->add_option("--out", rel_out, "output dataset directory")->required();
  release_cmd->callback([&] {
    DistilledDataset data = load_dataset(rel_dataset);
    ProtectedRelease release =
        build_release(data, load_marker(rel_cvm), load_marker(rel_ustm),
                      load_partition(rel_partition), rel_user);
    save_dataset(release.dataset, rel_out);
    MarkerQuality q = release_quality(data, release);
    std::cout << "release for user " << rel_user << " -> " << rel_out
              << " (msssim " << q.msssim << ")\n";
  });

  // train
  auto* train_cmd = app.add_subcommand(
      "train", "train a downstream classifier on a dataset directory");
  std::string tr_dataset, tr_arch = "convnet", tr_out;
  TrainSpec tr_spec;
  int tr_user = -1;
  train_cmd->add_option("--dataset", tr_dataset, "training dataset directory")->required();
  train_cmd->add_option("--arch", tr_arch, "convnet | mlp | convnet_wide");
  train_cmd->add_option("--epochs", tr_spec.epochs, "training epochs");
  train_cmd->add_option("--lr", tr_spec.lr, "learning rate");
  train_cmd->add_option("--batch-size", tr_spec.batch_size, "0 trains full-batch");
  train_cmd->add_option("--width", tr_spec.width, "0 picks the architecture default");
  train_cmd->add_option("--seed", tr_spec.seed, "training seed");
  train_cmd->add_option("--user-id", tr_user,
                        "provenance user id when the dataset is a user release");
  train_cmd->add_option("--out", tr_out, "output model directory")->required();
  train_cmd->callback([&] {
    DistilledDataset data = load_dataset(tr_dataset);
    tr_spec.arch = arch_from_name(tr_arch);
    std::vector<double> curve;
    Classifier model = train_model(data, tr_spec, &curve);
    Json provenance;
    provenance["infringing"] = tr_user > 0;
    provenance["user_id"] = tr_user > 0 ? tr_user : -1;
    provenance["arch"] = arch_name(tr_spec.arch);
    provenance["epochs"] = tr_spec.epochs;
    provenance["seed"] = tr_spec.seed;
    provenance["lr"] = tr_spec.lr;
    provenance["batch_size"] = tr_spec.batch_size;
    provenance["width"] = tr_spec.width;
    provenance["dataset"] = tr_dataset;
    provenance["train_curve"] = curve;
    save_model(model, tr_out, provenance);
    std::cout << "trained " << arch_name(tr_spec.arch) << ", final train accuracy "
              << (curve.empty() ? 0.0 : curve.back()) << " -> " << tr_out << "\n";
  });

  // bank build
  auto* bank_cmd = app.add_subcommand("bank", "reference bank operations");
  bank_cmd->require_subcommand(1);
  auto* bank_build_cmd = bank_cmd->add_subcommand(
      "build", "extract signatures from labeled models into a bank");
  std::string bb_test_sets, bb_out;
  std::vector<std::string> bb_models;
  bank_build_cmd->add_option("--test-sets", bb_test_sets, "test-set family directory")->required();
  bank_build_cmd->add_option("--model", bb_models, "model directory (repeatable)")->required();
  bank_build_cmd->add_option("--out", bb_out, "output bank JSON")->required();
  bank_build_cmd->callback([&] {
    std::vector<TestSet> sets = load_test_sets_dir(bb_test_sets);
    std::vector<std::pair<BlackBoxModel, ProvenanceLabel>> models;
    for (const std::string& dir : bb_models) {
      Json provenance;
      Classifier model = load_model(dir, &provenance);
      ProvenanceLabel label;
      label.infringing = provenance.value("infringing", false);
      label.user_id = provenance.value("user_id", -1);
      label.arch = arch_name(model.arch);
      label.epochs = provenance.value("epochs", 0);
      label.seed = provenance.value("seed", std::uint64_t{0});
      models.emplace_back(wrap_classifier(model), label);
    }
    ReferenceBank bank = build_bank(models, sets);
    save_bank(bank, bb_out);
    std::cout << "bank of " << bank.size() << " signatures (dim " << bank.dim
              << ") -> " << bb_out << "\n";
  });

  // verify
  auto* verify_cmd = app.add_subcommand(
      "verify", "black-box copyright verdict for a suspect model");
  std::string vf_bank, vf_model, vf_test_sets, vf_out;
  verify_cmd->add_option("--bank", vf_bank, "bank JSON")->required();
  verify_cmd->add_option("--model", vf_model, "suspect model directory")->required();
  verify_cmd->add_option("--test-sets", vf_test_sets, "test-set family directory")->required();
  verify_cmd->add_option("--out", vf_out, "also write the verdict JSON here");
  verify_cmd->callback([&] {
    Json out;
    Verdict v = run_verdict(vf_bank, vf_model, vf_test_sets, &out);
    std::cout << out.dump(2) << "\n";
    if (!vf_out.empty()) write_json_file(vf_out, out);
    exit_code = v.infringing ? 2 : 0;
  });

  // trace
  auto* trace_cmd = app.add_subcommand(
      "trace", "identify the leaking user for an infringing model");
  std::string tc_bank, tc_model, tc_test_sets, tc_out;
  trace_cmd->add_option("--bank", tc_bank, "bank JSON")->required();
  trace_cmd->add_option("--model", tc_model, "suspect model directory")->required();
  trace_cmd->add_option("--test-sets", tc_test_sets, "test-set family directory")->required();
  trace_cmd->add_option("--out", tc_out, "also write the tracing JSON here");
  trace_cmd->callback([&] {
    Json full;
    Verdict v = run_verdict(tc_bank, tc_model, tc_test_sets, &full);
    Json out;
    out["infringing"] = v.infringing;
    out["retrieved_user"] = v.user_id;
    out["gap_argmax_user"] = v.gaps.user_ids[static_cast<std::size_t>(tracing_argmax(v.gaps))];
    out["g_hat"] = v.gaps.g_hat;
    out["user_ids"] = v.gaps.user_ids;
    out["distance"] = v.distance;
    std::cout << out.dump(2) << "\n";
    if (!tc_out.empty()) write_json_file(tc_out, out);
  });

  // run-all
  auto* run_cmd = app.add_subcommand(
      "run-all", "full pipeline: synth, protect, train, bank, evaluate, report");
  std::string ra_config, ra_out;
  run_cmd->add_option("--config", ra_config, "experiment config JSON");
  run_cmd->add_option("--out", ra_out, "output directory (DISTMARK_OUT overrides)");
  run_cmd->callback([&] {
    ExperimentConfig cfg = ra_config.empty()
                               ? ExperimentConfig{}
                               : parse_experiment_config(read_json_file(ra_config));
    if (!ra_out.empty()) cfg.out_dir = ra_out;
    if (const char* env = std::getenv("DISTMARK_OUT")) cfg.out_dir = env;
    ExperimentReport report = run_pipeline(cfg);
    std::cout << "bank " << report.bank_size << " models, evaluated "
              << report.eval_records.size() << "\n"
              << "cvsr " << report.cvsr_value << ", dltsr " << report.dltsr_value
              << ", gap tracing " << report.gap_tracing_rate << "\n"
              << "mean G reference "
              << report.mean_sta_reference - report.mean_vta_reference
              << ", infringing "
              << report.mean_sta_infringing - report.mean_vta_infringing << "\n"
              << "total " << report.timings.total << " s -> "
              << (cfg.out_dir / "report.json").string() << "\n";
  });

  // plot-data
  auto* plot_cmd = app.add_subcommand(
      "plot-data", "regenerate plot CSVs from a saved report");
  std::string pd_report, pd_timings, pd_out;
  plot_cmd->add_option("--report", pd_report, "report JSON")->required();
  plot_cmd->add_option("--timings", pd_timings, "timings JSON sidecar");
  plot_cmd->add_option("--out", pd_out, "directory receiving plot_data/")->required();
  plot_cmd->callback([&] {
    Json report = read_json_file(pd_report);
    Json timings = pd_timings.empty() ? Json::object() : read_json_file(pd_timings);
    emit_plot_data_from_json(report, timings, pd_out);
    std::cout << "plot data -> " << (fs::path(pd_out) / "plot_data").string() << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
