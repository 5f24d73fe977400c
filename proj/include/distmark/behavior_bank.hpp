#pragma once

// Provenance retrieval: models of known origin are summarized by their
// accuracy vector over the test-set family; a suspect model is matched to its
// nearest bank entry by cosine distance.

#include <filesystem>
#include <optional>
#include <utility>

#include "distmark/evaluation.hpp"
#include "distmark/io.hpp"

namespace distmark {

struct ProvenanceLabel {
  bool infringing = false;
  int user_id = -1;  // set only when infringing
  std::string arch;
  int epochs = 0;
  std::uint64_t seed = 0;
};

struct BankEntry {
  std::vector<double> signature;
  ProvenanceLabel label;
};

struct ReferenceBank {
  std::vector<BankEntry> entries;
  std::size_t dim = 0;

  void append(BankEntry entry);
  std::size_t size() const { return entries.size(); }
};

// Accuracies in canonical order: standard, verification, tracing by
// ascending user id. One query pass per test set.
std::vector<double> extract_signature(const BlackBoxModel& model,
                                      const std::vector<TestSet>& test_sets);

ReferenceBank build_bank(
    const std::vector<std::pair<BlackBoxModel, ProvenanceLabel>>& models,
    const std::vector<TestSet>& test_sets);

struct Retrieval {
  ProvenanceLabel label;
  double distance = 0.0;
  std::size_t index = 0;
};

// Nearest neighbor under cosine distance (Euclidean behind the flag);
// ties resolve to the lowest index.
Retrieval retrieve(const ReferenceBank& bank,
                   const std::vector<double>& signature,
                   bool euclidean = false);

struct Verdict {
  bool infringing = false;
  int user_id = -1;
  GapReport gaps;
  KsResult ks_standard_vs_verification;
  double distance = 0.0;
  std::size_t neighbor_index = 0;
  std::vector<double> signature;
  std::vector<double> conf_standard;      // max-softmax samples, standard set
  std::vector<double> conf_verification;  // same, verification set
};

// Single-pass verdict: each test set is queried exactly once; accuracies feed
// both the signature retrieval and the gap evidence, and the model's own
// confidence distributions on the standard vs verification sets feed the KS.
Verdict verdict(const ReferenceBank& bank, const BlackBoxModel& model,
                const std::vector<TestSet>& test_sets);

// Indicator means over a model population.
double cvsr(const std::vector<bool>& predicted_infringing,
            const std::vector<bool>& true_infringing);
double dltsr(const std::vector<int>& predicted_users,
             const std::vector<int>& true_users);

void save_bank(const ReferenceBank& bank, const std::filesystem::path& path);
ReferenceBank load_bank(const std::filesystem::path& path);

}  // namespace distmark
