#include "distmark/behavior_bank.hpp"

#include <algorithm>
#include <cmath>

#include "distmark/errors.hpp"

namespace distmark {

namespace {

double norm2(const std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x * x;
  return std::sqrt(total);
}

double cosine_distance(const std::vector<double>& a,
                       const std::vector<double>& b) {
  double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) {
    raise(ErrorCode::ZeroVector, "cosine distance undefined for a zero vector");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return 1.0 - dot / (na * nb);
}

double euclidean_distance(const std::vector<double>& a,
                          const std::vector<double>& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    total += (a[i] - b[i]) * (a[i] - b[i]);
  }
  return std::sqrt(total);
}

std::vector<const TestSet*> canonical_order(const std::vector<TestSet>& test_sets) {
  const TestSet* standard = nullptr;
  const TestSet* verification = nullptr;
  std::vector<const TestSet*> tracing;
  for (const auto& t : test_sets) {
    switch (t.kind) {
      case TestKind::Standard: standard = &t; break;
      case TestKind::Verification: verification = &t; break;
      case TestKind::Tracing: tracing.push_back(&t); break;
    }
  }
  if (!standard || !verification) {
    raise(ErrorCode::MissingTestSet,
          "signature needs standard and verification sets");
  }
  std::sort(tracing.begin(), tracing.end(),
            [](const TestSet* a, const TestSet* b) { return a->user_id < b->user_id; });
  std::vector<const TestSet*> ordered{standard, verification};
  ordered.insert(ordered.end(), tracing.begin(), tracing.end());
  return ordered;
}

}  // namespace

void ReferenceBank::append(BankEntry entry) {
  if (entries.empty()) {
    dim = entry.signature.size();
  } else if (entry.signature.size() != dim) {
    raise(ErrorCode::DimensionMismatch,
          "signature length does not match the bank");
  }
  entries.push_back(std::move(entry));
}

std::vector<double> extract_signature(const BlackBoxModel& model,
                                      const std::vector<TestSet>& test_sets) {
  std::vector<double> signature;
  for (const TestSet* t : canonical_order(test_sets)) {
    signature.push_back(accuracy(model, *t));
  }
  return signature;
}

ReferenceBank build_bank(
    const std::vector<std::pair<BlackBoxModel, ProvenanceLabel>>& models,
    const std::vector<TestSet>& test_sets) {
  bool any_ref = false, any_inf = false;
  for (const auto& [model, label] : models) {
    (label.infringing ? any_inf : any_ref) = true;
  }
  if (!any_ref || !any_inf) {
    raise(ErrorCode::InvalidConfig,
          "bank needs at least one reference and one infringing model");
  }
  ReferenceBank bank;
  for (const auto& [model, label] : models) {
    bank.append({extract_signature(model, test_sets), label});
  }
  return bank;
}

Retrieval retrieve(const ReferenceBank& bank,
                   const std::vector<double>& signature, bool euclidean) {
  if (bank.entries.empty()) raise(ErrorCode::EmptyBank, "bank has no entries");
  if (signature.size() != bank.dim) {
    raise(ErrorCode::DimensionMismatch, "query signature length mismatch");
  }
  if (!euclidean && norm2(signature) == 0.0) {
    raise(ErrorCode::ZeroVector, "query signature is the zero vector");
  }
  Retrieval best;
  bool first = true;
  for (std::size_t i = 0; i < bank.entries.size(); ++i) {
    double dist = euclidean
                      ? euclidean_distance(signature, bank.entries[i].signature)
                      : cosine_distance(signature, bank.entries[i].signature);
    if (first || dist < best.distance) {
      best.label = bank.entries[i].label;
      best.distance = dist;
      best.index = i;
      first = false;
    }
  }
  return best;
}

Verdict verdict(const ReferenceBank& bank, const BlackBoxModel& model,
                const std::vector<TestSet>& test_sets) {
  auto ordered = canonical_order(test_sets);

  // One query pass per set; everything else is derived from the stored rows.
  std::vector<Tensor> probs;
  probs.reserve(ordered.size());
  for (const TestSet* t : ordered) {
    if (t->size() == 0) raise(ErrorCode::EmptyTestSet, "empty test set");
    probs.push_back(model.query(t->images));
  }

  auto set_accuracy = [](const Tensor& p, const std::vector<std::int32_t>& labels) {
    std::size_t n = p.dim(0), k = p.dim(1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (p.data[i * k + j] > p.data[i * k + arg]) arg = j;
      }
      if (arg == static_cast<std::size_t>(labels[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
  };
  auto set_confidence = [](const Tensor& p) {
    std::size_t n = p.dim(0), k = p.dim(1);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      float best = p.data[i * k];
      for (std::size_t j = 1; j < k; ++j) best = std::max(best, p.data[i * k + j]);
      out[i] = static_cast<double>(best);
    }
    return out;
  };

  Verdict v;
  v.gaps.sta = set_accuracy(probs[0], ordered[0]->labels);
  v.gaps.vta = set_accuracy(probs[1], ordered[1]->labels);
  v.gaps.g = v.gaps.sta - v.gaps.vta;
  v.signature = {v.gaps.sta, v.gaps.vta};
  for (std::size_t i = 2; i < ordered.size(); ++i) {
    double tta = set_accuracy(probs[i], ordered[i]->labels);
    v.gaps.tta.push_back(tta);
    v.gaps.user_ids.push_back(ordered[i]->user_id);
    v.gaps.g_hat.push_back(v.gaps.sta - tta);
    v.signature.push_back(tta);
  }
  v.conf_standard = set_confidence(probs[0]);
  v.conf_verification = set_confidence(probs[1]);
  v.ks_standard_vs_verification =
      ks_two_sample(v.conf_standard, v.conf_verification);

  Retrieval r = retrieve(bank, v.signature);
  v.infringing = r.label.infringing;
  v.user_id = r.label.infringing ? r.label.user_id : -1;
  v.distance = r.distance;
  v.neighbor_index = r.index;
  return v;
}

double cvsr(const std::vector<bool>& predicted_infringing,
            const std::vector<bool>& true_infringing) {
  if (predicted_infringing.size() != true_infringing.size() ||
      predicted_infringing.empty()) {
    raise(ErrorCode::DimensionMismatch, "population vectors must align");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted_infringing.size(); ++i) {
    if (predicted_infringing[i] == true_infringing[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted_infringing.size());
}

double dltsr(const std::vector<int>& predicted_users,
             const std::vector<int>& true_users) {
  if (predicted_users.size() != true_users.size() || predicted_users.empty()) {
    raise(ErrorCode::DimensionMismatch, "population vectors must align");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted_users.size(); ++i) {
    if (predicted_users[i] == true_users[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted_users.size());
}

void save_bank(const ReferenceBank& bank, const std::filesystem::path& path) {
  Json root;
  root["signature_dim"] = bank.dim;
  Json entries = Json::array();
  for (const auto& entry : bank.entries) {
    Json label;
    label["infringing"] = entry.label.infringing;
    label["user_id"] = entry.label.user_id;
    label["arch"] = entry.label.arch;
    label["epochs"] = entry.label.epochs;
    label["seed"] = entry.label.seed;
    entries.push_back(Json{{"signature", entry.signature}, {"label", label}});
  }
  root["entries"] = entries;
  write_json_file(path, root);
}

ReferenceBank load_bank(const std::filesystem::path& path) {
  Json root = read_json_file(path);
  ReferenceBank bank;
  for (const auto& item : root.at("entries")) {
    BankEntry entry;
    entry.signature = item.at("signature").get<std::vector<double>>();
    const auto& label = item.at("label");
    entry.label.infringing = label.at("infringing").get<bool>();
    entry.label.user_id = label.at("user_id").get<int>();
    entry.label.arch = label.at("arch").get<std::string>();
    entry.label.epochs = label.at("epochs").get<int>();
    entry.label.seed = label.at("seed").get<std::uint64_t>();
    bank.append(std::move(entry));
  }
  if (bank.dim == 0 && root.contains("signature_dim")) {
    bank.dim = root.at("signature_dim").get<std::size_t>();
  }
  return bank;
}

}  // namespace distmark
