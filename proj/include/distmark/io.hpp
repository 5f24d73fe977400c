#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distmark/data.hpp"
#include "distmark/nn.hpp"
#include "distmark/tensor.hpp"

#include "json.hpp"

namespace distmark {

using Json = nlohmann::ordered_json;

// Every on-disk artifact is a directory with a manifest.json plus one raw
// little-endian file per named array (.f32 for float32, .i32 for int32).
// Round trips are bit-exact.

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& value);

void write_f32_array(const std::filesystem::path& path,
                     const std::vector<float>& values);
std::vector<float> read_f32_array(const std::filesystem::path& path,
                                  std::size_t expected_count);
void write_i32_array(const std::filesystem::path& path,
                     const std::vector<std::int32_t>& values);
std::vector<std::int32_t> read_i32_array(const std::filesystem::path& path,
                                         std::size_t expected_count);

void save_dataset(const DistilledDataset& dataset,
                  const std::filesystem::path& dir);
DistilledDataset load_dataset(const std::filesystem::path& dir);

void save_marker(const MarkerSet& marker, const std::filesystem::path& dir);
MarkerSet load_marker(const std::filesystem::path& dir);

void save_test_set(const TestSet& test, int num_classes,
                   const std::filesystem::path& dir);
TestSet load_test_set(const std::filesystem::path& dir, int* num_classes_out);

void save_partition(const SubsetPartition& partition, std::uint64_t seed,
                    const std::filesystem::path& path);
SubsetPartition load_partition(const std::filesystem::path& path);

// Trained classifier container: all parameters concatenated into params.f32,
// shapes and a checksum in the manifest. `provenance` is an arbitrary JSON
// object stored alongside (training seed, source dataset, user id).
void save_model(const Classifier& model, const std::filesystem::path& dir,
                const Json& provenance = Json::object());
Classifier load_model(const std::filesystem::path& dir,
                      Json* provenance_out = nullptr);

// Key file: JSON list of {user_id, secret_hex}.
std::vector<UserKey> load_keys(const std::filesystem::path& path);
void save_keys(const std::vector<UserKey>& keys,
               const std::filesystem::path& path);

}  // namespace distmark
