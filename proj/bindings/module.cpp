#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "distmark/pipeline.hpp"

namespace py = pybind11;
using namespace distmark;

namespace {

std::vector<std::uint8_t> to_bytes(const py::bytes& b) {
  std::string s = b;
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

}  // namespace

PYBIND11_MODULE(_distmark, m) {
  m.doc() = "class and user-specific marker protection for distilled datasets";
  m.attr("__version__") = "0.1.0";

  py::class_<Tensor>(m, "Tensor")
      .def(py::init<std::vector<std::size_t>>())
      .def(py::init<std::vector<std::size_t>, std::vector<float>>())
      .def_readonly("shape", &Tensor::shape)
      .def_readwrite("data", &Tensor::data)
      .def("numel", &Tensor::numel);

  py::enum_<Arch>(m, "Arch")
      .value("ConvNet", Arch::ConvNet)
      .value("Mlp", Arch::Mlp)
      .value("ConvNetWide", Arch::ConvNetWide);
  py::enum_<MarkerKind>(m, "MarkerKind")
      .value("CVM", MarkerKind::CVM)
      .value("USTM", MarkerKind::USTM);
  py::enum_<MarkerOrigin>(m, "MarkerOrigin")
      .value("Optimized", MarkerOrigin::Optimized)
      .value("KeyGenerated", MarkerOrigin::KeyGenerated);
  py::enum_<TestKind>(m, "TestKind")
      .value("Standard", TestKind::Standard)
      .value("Verification", TestKind::Verification)
      .value("Tracing", TestKind::Tracing);

  py::class_<DistilledDataset>(m, "DistilledDataset")
      .def(py::init<>())
      .def_readwrite("images", &DistilledDataset::images)
      .def_readwrite("labels", &DistilledDataset::labels)
      .def_readwrite("num_classes", &DistilledDataset::num_classes)
      .def_readwrite("images_per_class", &DistilledDataset::images_per_class)
      .def_readwrite("balanced", &DistilledDataset::balanced)
      .def("size", &DistilledDataset::size)
      .def("validate", &DistilledDataset::validate);

  py::class_<MarkerSet>(m, "MarkerSet")
      .def(py::init<>())
      .def_readwrite("deltas", &MarkerSet::deltas)
      .def_readwrite("kind", &MarkerSet::kind)
      .def_readwrite("origin", &MarkerSet::origin)
      .def_readwrite("key_fingerprint", &MarkerSet::key_fingerprint)
      .def("max_abs", &MarkerSet::max_abs)
      .def("checksum", &MarkerSet::checksum);

  py::class_<SubsetPartition>(m, "SubsetPartition")
      .def_readonly("manipulation_indices", &SubsetPartition::manipulation_indices)
      .def_readonly("utility_indices", &SubsetPartition::utility_indices)
      .def_readonly("ratio", &SubsetPartition::ratio);

  py::class_<TestSet>(m, "TestSet")
      .def(py::init<>())
      .def_readwrite("images", &TestSet::images)
      .def_readwrite("labels", &TestSet::labels)
      .def_readwrite("kind", &TestSet::kind)
      .def_readwrite("user_id", &TestSet::user_id)
      .def("size", &TestSet::size);

  py::class_<ProtectedRelease>(m, "ProtectedRelease")
      .def_readonly("dataset", &ProtectedRelease::dataset)
      .def_readonly("user_id", &ProtectedRelease::user_id)
      .def_readonly("cvm", &ProtectedRelease::cvm)
      .def_readonly("ustm", &ProtectedRelease::ustm)
      .def_readonly("partition", &ProtectedRelease::partition);

  py::class_<UserKey>(m, "UserKey")
      .def_static("from_secret",
                  [](int user_id, const py::bytes& secret) {
                    return UserKey::from_secret(user_id, to_bytes(secret));
                  })
      .def_readonly("user_id", &UserKey::user_id)
      .def_readonly("seed", &UserKey::seed)
      .def_property_readonly("secret",
                             [](const UserKey& k) {
                               return py::bytes(std::string(k.secret.begin(),
                                                           k.secret.end()));
                             })
      .def("fingerprint", &UserKey::fingerprint);

  py::class_<SynthSpec>(m, "SynthSpec")
      .def(py::init<>())
      .def_readwrite("num_classes", &SynthSpec::num_classes)
      .def_readwrite("images_per_class", &SynthSpec::images_per_class)
      .def_readwrite("channels", &SynthSpec::channels)
      .def_readwrite("height", &SynthSpec::height)
      .def_readwrite("width", &SynthSpec::width)
      .def_readwrite("prototype_seed", &SynthSpec::prototype_seed)
      .def_readwrite("sigma_c", &SynthSpec::sigma_c)
      .def_readwrite("heldout_per_class", &SynthSpec::heldout_per_class);

  py::class_<CvmConfig>(m, "CvmConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &CvmConfig::epochs)
      .def_readwrite("lr_theta", &CvmConfig::lr_theta)
      .def_readwrite("lr_delta", &CvmConfig::lr_delta)
      .def_readwrite("alpha", &CvmConfig::alpha)
      .def_readwrite("batch_size", &CvmConfig::batch_size)
      .def_readwrite("epsilon", &CvmConfig::epsilon)
      .def_readwrite("sigma_init", &CvmConfig::sigma_init)
      .def_readwrite("cos_sign", &CvmConfig::cos_sign)
      .def_readwrite("surrogate_arch", &CvmConfig::surrogate_arch)
      .def_readwrite("surrogate_width", &CvmConfig::surrogate_width)
      .def_readwrite("partition_seed", &CvmConfig::partition_seed)
      .def_readwrite("init_seed", &CvmConfig::init_seed)
      .def_readwrite("shuffle_seed", &CvmConfig::shuffle_seed);

  py::class_<UstmConfig>(m, "UstmConfig")
      .def(py::init<>())
      .def_readwrite("base", &UstmConfig::base)
      .def_readwrite("lambda_sim", &UstmConfig::lambda_sim)
      .def_readwrite("sigma", &UstmConfig::sigma);

  py::class_<TrainSpec>(m, "TrainSpec")
      .def(py::init<>())
      .def_readwrite("arch", &TrainSpec::arch)
      .def_readwrite("width", &TrainSpec::width)
      .def_readwrite("epochs", &TrainSpec::epochs)
      .def_readwrite("lr", &TrainSpec::lr)
      .def_readwrite("batch_size", &TrainSpec::batch_size)
      .def_readwrite("seed", &TrainSpec::seed);

  py::class_<LossBreakdown>(m, "LossBreakdown")
      .def_readonly("task", &LossBreakdown::task)
      .def_readonly("semantic", &LossBreakdown::semantic)
      .def_readonly("perceptual", &LossBreakdown::perceptual)
      .def_readonly("similarity", &LossBreakdown::similarity)
      .def_readonly("total", &LossBreakdown::total);

  py::class_<MarkerQuality>(m, "MarkerQuality")
      .def_readonly("psnr", &MarkerQuality::psnr)
      .def_readonly("ssim", &MarkerQuality::ssim)
      .def_readonly("msssim", &MarkerQuality::msssim)
      .def_readonly("max_abs", &MarkerQuality::max_abs);

  py::class_<Classifier>(m, "Classifier")
      .def_readonly("arch", &Classifier::arch)
      .def_readonly("num_classes", &Classifier::num_classes)
      .def_readonly("width", &Classifier::width)
      .def("checksum", &Classifier::checksum);

  py::class_<FrozenEncoder>(m, "FrozenEncoder")
      .def_readonly("embed_dim", &FrozenEncoder::embed_dim)
      .def("checksum", &FrozenEncoder::checksum);

  py::class_<CvmTrace>(m, "CvmTrace")
      .def_readonly("epoch_losses", &CvmTrace::epoch_losses)
      .def_readonly("epoch_sta", &CvmTrace::epoch_sta)
      .def_readonly("marker", &CvmTrace::marker)
      .def_readonly("surrogate", &CvmTrace::surrogate)
      .def_readonly("partition", &CvmTrace::partition)
      .def_readonly("wall_seconds", &CvmTrace::wall_seconds);

  py::class_<GapReport>(m, "GapReport")
      .def_readonly("sta", &GapReport::sta)
      .def_readonly("vta", &GapReport::vta)
      .def_readonly("tta", &GapReport::tta)
      .def_readonly("user_ids", &GapReport::user_ids)
      .def_readonly("g", &GapReport::g)
      .def_readonly("g_hat", &GapReport::g_hat);

  py::class_<KsResult>(m, "KsResult")
      .def_readonly("d", &KsResult::d)
      .def_readonly("p", &KsResult::p);

  py::class_<ProvenanceLabel>(m, "ProvenanceLabel")
      .def(py::init<>())
      .def_readwrite("infringing", &ProvenanceLabel::infringing)
      .def_readwrite("user_id", &ProvenanceLabel::user_id)
      .def_readwrite("arch", &ProvenanceLabel::arch)
      .def_readwrite("epochs", &ProvenanceLabel::epochs)
      .def_readwrite("seed", &ProvenanceLabel::seed);

  py::class_<ReferenceBank>(m, "ReferenceBank")
      .def_readonly("dim", &ReferenceBank::dim)
      .def("size", &ReferenceBank::size);

  py::class_<Retrieval>(m, "Retrieval")
      .def_readonly("label", &Retrieval::label)
      .def_readonly("distance", &Retrieval::distance)
      .def_readonly("index", &Retrieval::index);

  py::class_<Verdict>(m, "Verdict")
      .def_readonly("infringing", &Verdict::infringing)
      .def_readonly("user_id", &Verdict::user_id)
      .def_readonly("gaps", &Verdict::gaps)
      .def_readonly("ks_standard_vs_verification",
                    &Verdict::ks_standard_vs_verification)
      .def_readonly("distance", &Verdict::distance)
      .def_readonly("signature", &Verdict::signature)
      .def_readonly("conf_standard", &Verdict::conf_standard)
      .def_readonly("conf_verification", &Verdict::conf_verification);

  m.def("sha256_hex", [](const py::bytes& data) {
    return sha256_hex(to_bytes(data));
  });
  m.def("derive_seed", [](const py::bytes& data) {
    return derive_seed(to_bytes(data));
  });

  m.def("generate", &generate, py::arg("spec"));
  m.def("class_prototypes", &class_prototypes, py::arg("spec"));
  m.def("partition_dataset", &partition_dataset, py::arg("dataset"),
        py::arg("alpha"), py::arg("seed"));
  m.def("apply_cvm", &apply_cvm, py::arg("dataset"), py::arg("cvm"),
        py::arg("partition"));
  m.def("build_release", &build_release, py::arg("dataset"), py::arg("cvm"),
        py::arg("ustm"), py::arg("partition"), py::arg("user_id"));
  m.def("build_test_sets", &build_test_sets, py::arg("eval_data"),
        py::arg("cvm"), py::arg("ustms"));
  m.def("generate_ustm_init", &generate_ustm_init, py::arg("key"),
        py::arg("num_classes"), py::arg("channels"), py::arg("height"),
        py::arg("width"), py::arg("sigma"));

  m.def("make_encoder", &make_encoder, py::arg("channels"), py::arg("h"),
        py::arg("w"), py::arg("width"), py::arg("seed"));
  m.def("optimize_cvm",
        [](const DistilledDataset& dataset, const FrozenEncoder& encoder,
           const CvmConfig& config) {
          return optimize_cvm(dataset, encoder, config);
        },
        py::arg("dataset"), py::arg("encoder"), py::arg("config"));
  m.def("optimize_ustm",
        [](const DistilledDataset& dataset, const MarkerSet& cvm,
           const UserKey& key, const FrozenEncoder& encoder,
           const UstmConfig& config) {
          return optimize_ustm(dataset, cvm, key, encoder, config);
        },
        py::arg("dataset"), py::arg("cvm"), py::arg("key"), py::arg("encoder"),
        py::arg("config"));
  m.def("batch_protect", &batch_protect, py::arg("dataset"), py::arg("cvm"),
        py::arg("keys"), py::arg("encoder"), py::arg("config"));
  m.def("marker_quality", &marker_quality, py::arg("dataset"), py::arg("cvm"),
        py::arg("partition"));
  m.def("release_quality", &release_quality, py::arg("clean"), py::arg("release"));

  m.def("train_model",
        [](const DistilledDataset& data, const TrainSpec& spec) {
          return train_model(data, spec);
        },
        py::arg("data"), py::arg("spec"));

  m.def("accuracy",
        [](const Classifier& model, const TestSet& test) {
          return accuracy(wrap_classifier(model), test);
        },
        py::arg("model"), py::arg("test"));
  m.def("extract_signature",
        [](const Classifier& model, const std::vector<TestSet>& test_sets) {
          return extract_signature(wrap_classifier(model), test_sets);
        },
        py::arg("model"), py::arg("test_sets"));
  m.def("build_bank",
        [](const std::vector<std::pair<Classifier, ProvenanceLabel>>& models,
           const std::vector<TestSet>& test_sets) {
          std::vector<std::pair<BlackBoxModel, ProvenanceLabel>> boxed;
          for (const auto& [model, label] : models) {
            boxed.emplace_back(wrap_classifier(model), label);
          }
          return build_bank(boxed, test_sets);
        },
        py::arg("models"), py::arg("test_sets"));
  m.def("retrieve", &retrieve, py::arg("bank"), py::arg("signature"),
        py::arg("euclidean") = false);
  m.def("verdict",
        [](const ReferenceBank& bank, const Classifier& model,
           const std::vector<TestSet>& test_sets) {
          return verdict(bank, wrap_classifier(model), test_sets);
        },
        py::arg("bank"), py::arg("model"), py::arg("test_sets"));
  m.def("cvsr", &cvsr, py::arg("predicted_infringing"), py::arg("true_infringing"));
  m.def("dltsr", &dltsr, py::arg("predicted_users"), py::arg("true_users"));
  m.def("ks_two_sample", &ks_two_sample, py::arg("a"), py::arg("b"));
  m.def("tracing_argmax", &tracing_argmax, py::arg("report"));
  m.def("ms_ssim",
        [](const Tensor& a, const Tensor& b) { return ms_ssim(a, b); },
        py::arg("a"), py::arg("b"));

  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("dir"));
  m.def("load_dataset", &load_dataset, py::arg("dir"));
  m.def("save_marker", &save_marker, py::arg("marker"), py::arg("dir"));
  m.def("load_marker", &load_marker, py::arg("dir"));
  m.def("save_test_set", &save_test_set, py::arg("test"), py::arg("num_classes"),
        py::arg("dir"));
  m.def("load_test_set",
        [](const std::filesystem::path& dir) { return load_test_set(dir, nullptr); },
        py::arg("dir"));
  m.def("save_model",
        [](const Classifier& model, const std::filesystem::path& dir) {
          save_model(model, dir);
        },
        py::arg("model"), py::arg("dir"));
  m.def("load_model",
        [](const std::filesystem::path& dir) { return load_model(dir); },
        py::arg("dir"));
  m.def("save_bank", &save_bank, py::arg("bank"), py::arg("path"));
  m.def("load_bank", &load_bank, py::arg("path"));
  m.def("save_keys", &save_keys, py::arg("keys"), py::arg("path"));
  m.def("load_keys", &load_keys, py::arg("path"));

  m.def("run_pipeline_json",
        [](const std::string& config) {
          ExperimentConfig cfg = parse_experiment_config(Json::parse(config));
          ExperimentReport report = run_pipeline(cfg);
          return report_json(report).dump(2);
        },
        py::arg("config"),
        "Run the full pipeline from a config JSON string; returns the report "
        "as a JSON string and writes all artifacts to the configured "
        "output directory.");

  py::register_exception<Error>(m, "DistmarkError");
}
