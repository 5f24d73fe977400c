#include "distmark/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "distmark/errors.hpp"

namespace distmark {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> values) {
  if (values.empty()) raise(ErrorCode::TooFewSamples, "median of nothing");
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Json json_finite(double v) {
  if (std::isinf(v)) return v > 0 ? Json("inf") : Json("-inf");
  return Json(v);
}

Json quality_json(const MarkerQuality& q) {
  Json j;
  j["psnr_db"] = json_finite(q.psnr);
  j["ssim"] = q.ssim;
  j["msssim"] = q.msssim;
  j["max_abs"] = q.max_abs;
  return j;
}

Json loss_json(const LossBreakdown& l) {
  Json j;
  j["task"] = l.task;
  j["semantic"] = l.semantic;
  j["perceptual"] = l.perceptual;
  j["similarity"] = l.similarity;
  j["total"] = l.total;
  return j;
}

Json ks_json(const KsResult& k) {
  Json j;
  j["d"] = k.d;
  j["p"] = k.p;
  return j;
}

Json histogram_json(const std::vector<double>& reference,
                    const std::vector<double>& infringing, int bins = 10) {
  Json edges = Json::array();
  Json ref_counts = Json::array();
  Json inf_counts = Json::array();
  for (int b = 0; b <= bins; ++b) {
    edges.push_back(static_cast<double>(b) / bins);
  }
  auto count = [bins](const std::vector<double>& values, int b) {
    double lo = static_cast<double>(b) / bins;
    double hi = static_cast<double>(b + 1) / bins;
    std::size_t c = 0;
    for (double v : values) {
      if ((v >= lo && v < hi) || (b == bins - 1 && v == hi)) ++c;
    }
    return c;
  };
  for (int b = 0; b < bins; ++b) {
    ref_counts.push_back(count(reference, b));
    inf_counts.push_back(count(infringing, b));
  }
  Json j;
  j["bin_edges"] = edges;
  j["reference"] = ref_counts;
  j["infringing"] = inf_counts;
  return j;
}

double flat_cosine(const Tensor& a, const Tensor& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    dot += static_cast<double>(a.data[i]) * b.data[i];
    na += static_cast<double>(a.data[i]) * a.data[i];
    nb += static_cast<double>(b.data[i]) * b.data[i];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  return denom == 0.0 ? 0.0 : dot / denom;
}

}  // namespace

void ExperimentConfig::validate() const {
  synth.validate();
  cvm.validate();
  if (lambda_sim < 0.0) raise(ErrorCode::InvalidConfig, "lambda_sim must be >= 0");
  if (!(ustm_sigma > 0.0)) raise(ErrorCode::InvalidConfig, "ustm_sigma must be positive");
  if (num_users < 1) raise(ErrorCode::InvalidConfig, "need at least one user");
  if (downstream.archs.empty() || downstream.epochs.empty())
    raise(ErrorCode::InvalidConfig, "downstream spec needs archs and epochs");
  for (int e : downstream.epochs)
    if (e < 1) raise(ErrorCode::InvalidConfig, "epochs must be >= 1");
  if (bank_seeds_per_cell < 1)
    raise(ErrorCode::InvalidConfig, "bank needs at least one seed per cell");
  if (eval_models_per_provenance < 1)
    raise(ErrorCode::InvalidConfig, "need at least one held-out model per provenance");
}

ExperimentConfig parse_experiment_config(const Json& j) {
  ExperimentConfig c;
  c.master_seed = j.value("master_seed", c.master_seed);
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  c.import_dir = j.value("import_dir", c.import_dir);
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    c.synth.num_classes = s.value("num_classes", c.synth.num_classes);
    c.synth.images_per_class = s.value("images_per_class", c.synth.images_per_class);
    c.synth.channels = s.value("channels", c.synth.channels);
    c.synth.height = s.value("height", c.synth.height);
    c.synth.width = s.value("width", c.synth.width);
    c.synth.sigma_c = s.value("sigma_c", c.synth.sigma_c);
    c.synth.heldout_per_class = s.value("heldout_per_class", c.synth.heldout_per_class);
  }
  if (j.contains("cvm")) {
    const auto& s = j.at("cvm");
    c.cvm.epochs = s.value("epochs", c.cvm.epochs);
    c.cvm.lr_theta = s.value("lr_theta", c.cvm.lr_theta);
    c.cvm.lr_delta = s.value("lr_delta", c.cvm.lr_delta);
    c.cvm.alpha = s.value("alpha", c.cvm.alpha);
    c.cvm.batch_size = s.value("batch_size", c.cvm.batch_size);
    c.cvm.epsilon = s.value("epsilon", c.cvm.epsilon);
    c.cvm.sigma_init = s.value("sigma_init", c.cvm.sigma_init);
    c.cvm.cos_sign = s.value("cos_sign", c.cvm.cos_sign);
    if (s.contains("surrogate_arch"))
      c.cvm.surrogate_arch = arch_from_name(s.at("surrogate_arch").get<std::string>());
    c.cvm.surrogate_width = s.value("surrogate_width", c.cvm.surrogate_width);
  }
  if (j.contains("ustm")) {
    const auto& s = j.at("ustm");
    c.lambda_sim = s.value("lambda_sim", c.lambda_sim);
    c.ustm_sigma = s.value("sigma", c.ustm_sigma);
    c.num_users = s.value("num_users", c.num_users);
  }
  if (j.contains("downstream")) {
    const auto& s = j.at("downstream");
    if (s.contains("archs")) {
      c.downstream.archs.clear();
      for (const auto& name : s.at("archs"))
        c.downstream.archs.push_back(arch_from_name(name.get<std::string>()));
    }
    if (s.contains("epochs"))
      c.downstream.epochs = s.at("epochs").get<std::vector<int>>();
    c.downstream.lr = s.value("lr", c.downstream.lr);
    c.downstream.batch_size = s.value("batch_size", c.downstream.batch_size);
    c.downstream.width = s.value("width", c.downstream.width);
  }
  if (j.contains("bank")) {
    c.bank_seeds_per_cell = j.at("bank").value("seeds_per_cell", c.bank_seeds_per_cell);
  }
  if (j.contains("eval")) {
    c.eval_models_per_provenance =
        j.at("eval").value("models_per_provenance", c.eval_models_per_provenance);
  }
  c.validate();
  return c;
}

Json experiment_config_json(const ExperimentConfig& c) {
  Json j;
  j["master_seed"] = c.master_seed;
  j["out_dir"] = c.out_dir.string();
  j["import_dir"] = c.import_dir;
  j["synth"] = Json{{"num_classes", c.synth.num_classes},
                    {"images_per_class", c.synth.images_per_class},
                    {"channels", c.synth.channels},
                    {"height", c.synth.height},
                    {"width", c.synth.width},
                    {"sigma_c", c.synth.sigma_c},
                    {"heldout_per_class", c.synth.heldout_per_class}};
  j["cvm"] = Json{{"epochs", c.cvm.epochs},
                  {"lr_theta", c.cvm.lr_theta},
                  {"lr_delta", c.cvm.lr_delta},
                  {"alpha", c.cvm.alpha},
                  {"batch_size", c.cvm.batch_size},
                  {"epsilon", c.cvm.epsilon},
                  {"sigma_init", c.cvm.sigma_init},
                  {"cos_sign", c.cvm.cos_sign},
                  {"surrogate_arch", arch_name(c.cvm.surrogate_arch)},
                  {"surrogate_width", c.cvm.surrogate_width}};
  j["ustm"] = Json{{"lambda_sim", c.lambda_sim},
                   {"sigma", c.ustm_sigma},
                   {"num_users", c.num_users}};
  Json archs = Json::array();
  for (Arch a : c.downstream.archs) archs.push_back(arch_name(a));
  j["downstream"] = Json{{"archs", archs},
                         {"epochs", c.downstream.epochs},
                         {"lr", c.downstream.lr},
                         {"batch_size", c.downstream.batch_size},
                         {"width", c.downstream.width}};
  j["bank"] = Json{{"seeds_per_cell", c.bank_seeds_per_cell}};
  j["eval"] = Json{{"models_per_provenance", c.eval_models_per_provenance}};
  return j;
}

std::vector<UserKey> derive_user_keys(std::uint64_t master_seed, int num_users) {
  std::vector<UserKey> keys;
  for (int j = 1; j <= num_users; ++j) {
    std::string seed_string = "distmark-user-" + std::to_string(j) + "-" +
                              std::to_string(master_seed);
    std::vector<std::uint8_t> material(seed_string.begin(), seed_string.end());
    auto digest = sha256(material);
    keys.push_back(UserKey::from_secret(
        j, std::vector<std::uint8_t>(digest.begin(), digest.end())));
  }
  return keys;
}

ExperimentReport run_pipeline(const ExperimentConfig& config_in) {
  ExperimentConfig config = config_in;
  config.validate();
  auto t_total = Clock::now();

  fs::create_directories(config.out_dir);

  // Stage seeds all derive from the master seed.
  SynthSpec synth_spec = config.synth;
  synth_spec.prototype_seed = splitmix64_scramble(config.master_seed ^ 0x5EED0001ull);
  CvmConfig cvm_config = config.cvm;
  cvm_config.partition_seed = splitmix64_scramble(config.master_seed ^ 0x5EED0002ull);
  cvm_config.init_seed = splitmix64_scramble(config.master_seed ^ 0x5EED0003ull);
  cvm_config.shuffle_seed = splitmix64_scramble(config.master_seed ^ 0x5EED0004ull);

  ExperimentReport report;
  report.config_echo = experiment_config_json(config);
  report.config_echo["synth"]["prototype_seed"] = synth_spec.prototype_seed;

  // 1. Dataset.
  auto t_stage = Clock::now();
  DistilledDataset distilled, heldout;
  if (!config.import_dir.empty()) {
    distilled = load_dataset(fs::path(config.import_dir) / "distilled");
    heldout = load_dataset(fs::path(config.import_dir) / "heldout");
  } else {
    auto pools = generate(synth_spec);
    distilled = std::move(pools.first);
    heldout = std::move(pools.second);
  }
  report.timings.synth = seconds_since(t_stage);
  report.num_classes = distilled.num_classes;
  report.images_per_class = distilled.images_per_class;
  report.heldout_per_class = heldout.images_per_class;
  save_dataset(distilled, config.out_dir / "dataset");
  save_dataset(heldout, config.out_dir / "heldout");

  FrozenEncoder encoder = make_encoder(
      static_cast<int>(distilled.channels()), static_cast<int>(distilled.height()),
      static_cast<int>(distilled.width()), 8,
      splitmix64_scramble(config.master_seed ^ 0x5EED0005ull));
  std::string encoder_checksum = encoder.checksum();

  // 2. Class marker.
  t_stage = Clock::now();
  CvmTrace cvm_trace = optimize_cvm(distilled, encoder, cvm_config);
  report.timings.cvm = seconds_since(t_stage);
  report.cvm_losses = cvm_trace.epoch_losses;
  report.cvm_sta_curve = cvm_trace.epoch_sta;
  report.cvm_quality = marker_quality(distilled, cvm_trace.marker, cvm_trace.partition);
  save_marker(cvm_trace.marker, config.out_dir / "cvm" / "marker");
  save_partition(cvm_trace.partition, cvm_config.partition_seed,
                 config.out_dir / "partition.json");
  {
    TestSet probe;
    probe.images = heldout.images;
    probe.labels = heldout.labels;
    BlackBoxModel surrogate_box = wrap_classifier(cvm_trace.surrogate);
    report.surrogate_final_sta = accuracy(surrogate_box, probe);
  }

  // 3. User markers and releases.
  t_stage = Clock::now();
  std::vector<UserKey> keys = derive_user_keys(config.master_seed, config.num_users);
  save_keys(keys, config.out_dir / "keys.json");
  UstmConfig ustm_config;
  ustm_config.base = cvm_config;
  ustm_config.lambda_sim = config.lambda_sim;
  ustm_config.sigma = config.ustm_sigma;
  std::vector<ProtectedRelease> releases =
      batch_protect(distilled, cvm_trace.marker, keys, encoder, ustm_config);
  report.timings.ustm = seconds_since(t_stage);

  std::map<int, MarkerSet> ustm_by_user;
  for (const auto& release : releases) {
    ustm_by_user[release.user_id] = release.ustm;
    report.release_qualities.push_back(release_quality(distilled, release));
    fs::path user_dir = config.out_dir / ("user" + std::to_string(release.user_id));
    save_marker(release.ustm, user_dir / "marker");
    save_dataset(release.dataset, user_dir / "release");
  }
  for (std::size_t a = 0; a < releases.size(); ++a) {
    for (std::size_t b = a + 1; b < releases.size(); ++b) {
      report.ustm_pairwise_cos.push_back(
          flat_cosine(releases[a].ustm.deltas, releases[b].ustm.deltas));
    }
  }

  // 4. Test-set family from the held-out pool.
  std::vector<TestSet> test_sets = build_test_sets(heldout, cvm_trace.marker,
                                                   ustm_by_user);
  {
    fs::path ts_dir = config.out_dir / "test_sets";
    for (const auto& t : test_sets) {
      std::string name = test_kind_name(t.kind);
      if (t.kind == TestKind::Tracing) name += "_user" + std::to_string(t.user_id);
      save_test_set(t, distilled.num_classes, ts_dir / name);
    }
  }

  auto dataset_for = [&](int user_id) -> const DistilledDataset& {
    if (user_id < 0) return distilled;
    for (const auto& r : releases) {
      if (r.user_id == user_id) return r.dataset;
    }
    raise(ErrorCode::InvalidConfig, "no release for user " + std::to_string(user_id));
  };

  // 5. Bank population: even seeds, every (arch x provenance x epochs) cell.
  t_stage = Clock::now();
  std::uint64_t seed_base =
      splitmix64_scramble(config.master_seed ^ 0x5EED0006ull) & ~1ull;
  std::vector<std::pair<BlackBoxModel, ProvenanceLabel>> bank_models;
  std::uint64_t cell = 0;
  for (int user = 0; user <= config.num_users; ++user) {
    int user_id = user == 0 ? -1 : user;
    for (Arch arch : config.downstream.archs) {
      for (int epochs : config.downstream.epochs) {
        for (int s = 0; s < config.bank_seeds_per_cell; ++s) {
          TrainSpec spec;
          spec.arch = arch;
          spec.width = config.downstream.width;
          spec.epochs = epochs;
          spec.lr = config.downstream.lr;
          spec.batch_size = config.downstream.batch_size;
          spec.seed = seed_base + cell * 1000000ull +
                      2ull * static_cast<std::uint64_t>(s);
          Classifier model = train_model(dataset_for(user_id), spec);
          ProvenanceLabel label;
          label.infringing = user_id > 0;
          label.user_id = user_id > 0 ? user_id : -1;
          label.arch = arch_name(arch);
          label.epochs = epochs;
          label.seed = spec.seed;
          bank_models.emplace_back(wrap_classifier(model), label);
        }
        ++cell;
      }
    }
  }
  report.timings.train_bank = seconds_since(t_stage);

  ReferenceBank bank = build_bank(bank_models, test_sets);
  bank_models.clear();
  report.bank_size = bank.size();
  save_bank(bank, config.out_dir / "bank.json");

  // 6. Held-out population: odd seeds, arch and epochs rotate per index.
  t_stage = Clock::now();
  struct EvalModel {
    ModelRecord record;
    Classifier model;
  };
  std::vector<EvalModel> eval_models;
  for (int user = 0; user <= config.num_users; ++user) {
    int user_id = user == 0 ? -1 : user;
    for (int i = 0; i < config.eval_models_per_provenance; ++i) {
      TrainSpec spec;
      spec.arch = config.downstream.archs[i % config.downstream.archs.size()];
      spec.width = config.downstream.width;
      spec.epochs = config.downstream.epochs[i % config.downstream.epochs.size()];
      spec.lr = config.downstream.lr;
      spec.batch_size = config.downstream.batch_size;
      spec.seed = seed_base + 500000000ull * static_cast<std::uint64_t>(user + 1) +
                  2ull * static_cast<std::uint64_t>(i) + 1ull;
      EvalModel em;
      em.model = train_model(dataset_for(user_id), spec, &em.record.train_curve);
      em.record.provenance =
          user_id < 0 ? "reference" : "user" + std::to_string(user_id);
      em.record.infringing = user_id > 0;
      em.record.user_id = user_id > 0 ? user_id : -1;
      em.record.arch = arch_name(spec.arch);
      em.record.epochs = spec.epochs;
      em.record.seed = spec.seed;
      em.record.eval_index = i;
      eval_models.push_back(std::move(em));
    }
  }
  report.timings.train_eval = seconds_since(t_stage);

  // 7. Verdicts and aggregates.
  t_stage = Clock::now();
  std::vector<bool> predicted_infringing, true_infringing;
  std::vector<int> predicted_users, true_users;
  int j_users = config.num_users;
  report.cross_user_matrix.assign(j_users, std::vector<double>(j_users, 0.0));
  report.diag_dominant_counts.assign(j_users, 0);
  report.diag_total_counts.assign(j_users, 0);
  std::vector<std::vector<double>> conf_std(eval_models.size());
  std::vector<std::vector<double>> conf_ver(eval_models.size());
  double sta_ref = 0.0, sta_inf = 0.0, vta_ref = 0.0, vta_inf = 0.0;
  std::size_t n_ref = 0, n_inf = 0;
  int gap_trace_hits = 0;

  for (std::size_t m = 0; m < eval_models.size(); ++m) {
    auto& em = eval_models[m];
    BlackBoxModel box = wrap_classifier(em.model);
    Verdict v = verdict(bank, box, test_sets);
    em.record.gaps = v.gaps;
    em.record.predicted_infringing = v.infringing;
    em.record.predicted_user = v.user_id;
    em.record.distance = v.distance;
    em.record.ks_self = v.ks_standard_vs_verification;
    em.record.queries = box.query_count;
    conf_std[m] = std::move(v.conf_standard);
    conf_ver[m] = std::move(v.conf_verification);

    predicted_infringing.push_back(em.record.predicted_infringing);
    true_infringing.push_back(em.record.infringing);
    if (em.record.infringing) {
      ++n_inf;
      sta_inf += v.gaps.sta;
      vta_inf += v.gaps.vta;
      predicted_users.push_back(em.record.predicted_user);
      true_users.push_back(em.record.user_id);

      int own = em.record.user_id - 1;
      report.diag_total_counts[own] += 1;
      bool dominant = true;
      for (int l = 0; l < j_users; ++l) {
        report.cross_user_matrix[own][l] += v.gaps.g_hat[l];
        if (l != own &&
            std::abs(v.gaps.g_hat[l]) >= std::abs(v.gaps.g_hat[own])) {
          dominant = false;
        }
      }
      if (dominant) report.diag_dominant_counts[own] += 1;
      if (tracing_argmax(v.gaps) == own) ++gap_trace_hits;

      report.conf_infringing_standard.insert(report.conf_infringing_standard.end(),
                                             conf_std[m].begin(), conf_std[m].end());
      report.conf_infringing_verification.insert(
          report.conf_infringing_verification.end(), conf_ver[m].begin(),
          conf_ver[m].end());
    } else {
      ++n_ref;
      sta_ref += v.gaps.sta;
      vta_ref += v.gaps.vta;
      report.conf_reference_standard.insert(report.conf_reference_standard.end(),
                                            conf_std[m].begin(), conf_std[m].end());
      report.conf_reference_verification.insert(
          report.conf_reference_verification.end(), conf_ver[m].begin(),
          conf_ver[m].end());
    }
    report.eval_records.push_back(em.record);
  }

  for (int j = 0; j < j_users; ++j) {
    for (int l = 0; l < j_users; ++l) {
      if (report.diag_total_counts[j] > 0) {
        report.cross_user_matrix[j][l] /= report.diag_total_counts[j];
      }
    }
  }
  report.cvsr_value = cvsr(predicted_infringing, true_infringing);
  report.dltsr_value = predicted_users.empty() ? 0.0 : dltsr(predicted_users, true_users);
  report.gap_tracing_rate =
      n_inf == 0 ? 0.0 : static_cast<double>(gap_trace_hits) / static_cast<double>(n_inf);
  report.mean_sta_reference = n_ref ? sta_ref / static_cast<double>(n_ref) : 0.0;
  report.mean_sta_infringing = n_inf ? sta_inf / static_cast<double>(n_inf) : 0.0;
  report.mean_vta_reference = n_ref ? vta_ref / static_cast<double>(n_ref) : 0.0;
  report.mean_vta_infringing = n_inf ? vta_inf / static_cast<double>(n_inf) : 0.0;

  // Reference-vs-infringing KS pairs: the i-th reference model against the
  // same-index model of user (i mod J) + 1, so architectures line up.
  auto find_model = [&](int user_id, int eval_index) -> std::size_t {
    for (std::size_t m = 0; m < eval_models.size(); ++m) {
      if (eval_models[m].record.user_id == user_id &&
          eval_models[m].record.eval_index == eval_index) {
        return m;
      }
    }
    raise(ErrorCode::InvalidConfig, "missing evaluation model");
  };
  std::vector<double> pd_std, pp_std, pd_ver, pp_ver;
  for (int i = 0; i < config.eval_models_per_provenance; ++i) {
    std::size_t ref_m = find_model(-1, i);
    std::size_t inf_m = find_model((i % j_users) + 1, i);
    KsPairResult pair;
    pair.eval_index = i;
    pair.standard = ks_two_sample(conf_std[ref_m], conf_std[inf_m]);
    pair.verification = ks_two_sample(conf_ver[ref_m], conf_ver[inf_m]);
    report.ks_pairs.push_back(pair);
    pd_std.push_back(pair.standard.d);
    pp_std.push_back(pair.standard.p);
    pd_ver.push_back(pair.verification.d);
    pp_ver.push_back(pair.verification.p);
  }
  report.ks_standard_d_median = median(pd_std);
  report.ks_standard_p_median = median(pp_std);
  report.ks_verification_d_median = median(pd_ver);
  report.ks_verification_p_median = median(pp_ver);
  report.timings.evaluate = seconds_since(t_stage);
  report.timings.total = seconds_since(t_total);

  report.config_echo["encoder_checksum"] = encoder_checksum;

  write_json_file(config.out_dir / "report.json", report_json(report));
  write_json_file(config.out_dir / "timings.json", timings_json(report.timings));
  emit_plot_data(report, config.out_dir);
  return report;
}

Json report_json(const ExperimentReport& report) {
  Json j;
  j["config"] = report.config_echo;
  j["dataset"] = Json{{"num_classes", report.num_classes},
                      {"images_per_class", report.images_per_class},
                      {"heldout_per_class", report.heldout_per_class}};

  Json cvm;
  cvm["epochs"] = report.cvm_losses.size();
  if (!report.cvm_losses.empty()) cvm["final_loss"] = loss_json(report.cvm_losses.back());
  Json curve = Json::array();
  for (const auto& l : report.cvm_losses) curve.push_back(loss_json(l));
  cvm["loss_curve"] = curve;
  cvm["sta_curve"] = report.cvm_sta_curve;
  cvm["surrogate_heldout_sta"] = report.surrogate_final_sta;
  cvm["quality"] = quality_json(report.cvm_quality);
  j["cvm"] = cvm;

  Json users = Json::array();
  for (std::size_t i = 0; i < report.release_qualities.size(); ++i) {
    users.push_back(Json{{"user_id", i + 1},
                         {"release_quality", quality_json(report.release_qualities[i])}});
  }
  j["users"] = users;
  j["ustm_pairwise_cos"] = report.ustm_pairwise_cos;
  j["bank"] = Json{{"size", report.bank_size}};

  Json models = Json::array();
  for (const auto& r : report.eval_records) {
    Json m;
    m["provenance"] = r.provenance;
    m["infringing"] = r.infringing;
    m["user_id"] = r.user_id;
    m["arch"] = r.arch;
    m["epochs"] = r.epochs;
    m["seed"] = r.seed;
    m["eval_index"] = r.eval_index;
    m["sta"] = r.gaps.sta;
    m["vta"] = r.gaps.vta;
    m["tta"] = r.gaps.tta;
    m["g"] = r.gaps.g;
    m["g_hat"] = r.gaps.g_hat;
    m["predicted_infringing"] = r.predicted_infringing;
    m["predicted_user"] = r.predicted_user;
    m["distance"] = r.distance;
    m["ks_self"] = ks_json(r.ks_self);
    m["queries"] = r.queries;
    m["train_curve"] = r.train_curve;
    models.push_back(m);
  }

  Json ks_pairs = Json::array();
  for (const auto& p : report.ks_pairs) {
    ks_pairs.push_back(Json{{"eval_index", p.eval_index},
                            {"standard", ks_json(p.standard)},
                            {"verification", ks_json(p.verification)}});
  }

  Json aggregates;
  aggregates["cvsr"] = report.cvsr_value;
  aggregates["dltsr"] = report.dltsr_value;
  aggregates["gap_tracing_rate"] = report.gap_tracing_rate;
  aggregates["mean_sta_reference"] = report.mean_sta_reference;
  aggregates["mean_sta_infringing"] = report.mean_sta_infringing;
  aggregates["mean_vta_reference"] = report.mean_vta_reference;
  aggregates["mean_vta_infringing"] = report.mean_vta_infringing;
  aggregates["cross_user_matrix"] = report.cross_user_matrix;
  aggregates["diag_dominant_counts"] = report.diag_dominant_counts;
  aggregates["diag_total_counts"] = report.diag_total_counts;
  aggregates["ks_pairs"] = ks_pairs;
  aggregates["ks_medians"] = Json{{"standard_d", report.ks_standard_d_median},
                                  {"standard_p", report.ks_standard_p_median},
                                  {"verification_d", report.ks_verification_d_median},
                                  {"verification_p", report.ks_verification_p_median}};
  aggregates["confidence_histograms"] =
      Json{{"standard", histogram_json(report.conf_reference_standard,
                                       report.conf_infringing_standard)},
           {"verification", histogram_json(report.conf_reference_verification,
                                           report.conf_infringing_verification)}};
  j["evaluation"] = Json{{"models", models}, {"aggregates", aggregates}};
  return j;
}

Json timings_json(const StageTimings& t) {
  Json j;
  j["synth_seconds"] = t.synth;
  j["cvm_seconds"] = t.cvm;
  j["ustm_seconds"] = t.ustm;
  j["train_bank_seconds"] = t.train_bank;
  j["train_eval_seconds"] = t.train_eval;
  j["evaluate_seconds"] = t.evaluate;
  j["total_seconds"] = t.total;
  return j;
}

void emit_plot_data(const ExperimentReport& report, const fs::path& dir) {
  emit_plot_data_from_json(report_json(report), timings_json(report.timings), dir);
}

void emit_plot_data_from_json(const Json& report, const Json& timings,
                              const fs::path& dir) {
  if (!report.contains("cvm") || !report.contains("evaluation") ||
      report.at("cvm").value("loss_curve", Json::array()).empty() ||
      report.at("evaluation").value("models", Json::array()).empty()) {
    raise(ErrorCode::IncompleteReport, "report lacks curves or model records");
  }
  const Json& models = report.at("evaluation").at("models");
  const Json& aggregates = report.at("evaluation").at("aggregates");

  fs::path plot_dir = dir / "plot_data";
  fs::create_directories(plot_dir);
  auto open = [](const fs::path& p) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot write " + p.string());
    out.precision(10);
    return out;
  };

  {
    auto out = open(plot_dir / "cvm_curve.csv");
    out << "epoch,task,semantic,perceptual,similarity,total,sta\n";
    const Json& curve = report.at("cvm").at("loss_curve");
    const Json& sta = report.at("cvm").at("sta_curve");
    for (std::size_t e = 0; e < curve.size(); ++e) {
      const Json& l = curve[e];
      out << e << ',' << l.at("task").get<double>() << ','
          << l.at("semantic").get<double>() << ','
          << l.at("perceptual").get<double>() << ','
          << l.at("similarity").get<double>() << ','
          << l.at("total").get<double>() << ',' << sta[e].get<double>() << '\n';
    }
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    char name[40];
    std::snprintf(name, sizeof(name), "model_curve_%03zu.csv", i);
    auto out = open(plot_dir / name);
    out << "epoch,train_accuracy\n";
    Json curve = models[i].value("train_curve", Json::array());
    for (std::size_t e = 0; e < curve.size(); ++e) {
      out << e << ',' << curve[e].get<double>() << '\n';
    }
  }
  {
    auto out = open(plot_dir / "gap_bars.csv");
    out << "index,provenance,arch,seed,sta,vta,g\n";
    for (std::size_t i = 0; i < models.size(); ++i) {
      const Json& r = models[i];
      out << i << ',' << r.at("provenance").get<std::string>() << ','
          << r.at("arch").get<std::string>() << ','
          << r.at("seed").get<std::uint64_t>() << ','
          << r.at("sta").get<double>() << ',' << r.at("vta").get<double>()
          << ',' << r.at("g").get<double>() << '\n';
    }
  }
  {
    auto out = open(plot_dir / "tracing_matrix.csv");
    out << "true_user,gap_user,mean_g_hat\n";
    const Json& matrix = aggregates.at("cross_user_matrix");
    for (std::size_t a = 0; a < matrix.size(); ++a) {
      for (std::size_t b = 0; b < matrix[a].size(); ++b) {
        out << (a + 1) << ',' << (b + 1) << ',' << matrix[a][b].get<double>()
            << '\n';
      }
    }
  }
  auto histogram_csv = [&](const fs::path& p, const Json& hist) {
    auto out = open(p);
    out << "bin_lo,bin_hi,reference,infringing\n";
    const Json& edges = hist.at("bin_edges");
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
      out << edges[b].get<double>() << ',' << edges[b + 1].get<double>() << ','
          << hist.at("reference")[b].get<std::size_t>() << ','
          << hist.at("infringing")[b].get<std::size_t>() << '\n';
    }
  };
  const Json& hists = aggregates.at("confidence_histograms");
  histogram_csv(plot_dir / "confidence_hist_standard.csv", hists.at("standard"));
  histogram_csv(plot_dir / "confidence_hist_verification.csv",
                hists.at("verification"));
  if (timings.is_object() && !timings.empty()) {
    auto out = open(plot_dir / "timing_bars.csv");
    out << "stage,seconds\n";
    for (const char* stage : {"synth", "cvm", "ustm", "train_bank",
                              "train_eval", "evaluate"}) {
      out << stage << ','
          << timings.value(std::string(stage) + "_seconds", 0.0) << '\n';
    }
  }
}

}  // namespace distmark
