#include "distmark/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "distmark/errors.hpp"

namespace distmark {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormatTag = "distmark-container-v1";

static_assert(std::endian::native == std::endian::little,
              "raw array files are little-endian; big-endian hosts need swaps");

template <typename T>
void write_raw(const fs::path& path, const std::vector<T>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::IoError, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!out) raise(ErrorCode::IoError, "short write: " + path.string());
}

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::IoError, "cannot open for reading: " + path.string());
  std::vector<T> values(expected_count);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(expected_count * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(expected_count * sizeof(T))) {
    raise(ErrorCode::IoError, "array file shorter than manifest shape: " + path.string());
  }
  char extra = 0;
  if (in.read(&extra, 1) && in.gcount() > 0) {
    raise(ErrorCode::IoError, "array file longer than manifest shape: " + path.string());
  }
  return values;
}

Json shape_json(const std::vector<std::size_t>& shape) {
  Json arr = Json::array();
  for (std::size_t d : shape) arr.push_back(d);
  return arr;
}

std::vector<std::size_t> shape_from_json(const Json& arr) {
  std::vector<std::size_t> shape;
  for (const auto& d : arr) shape.push_back(d.get<std::size_t>());
  return shape;
}

void check_format(const Json& manifest, const std::string& kind,
                  const fs::path& dir) {
  if (manifest.value("format", "") != kFormatTag) {
    raise(ErrorCode::IoError, "unrecognized container format in " + dir.string());
  }
  if (manifest.value("kind", "") != kind) {
    raise(ErrorCode::IoError, "expected a '" + kind + "' container in " + dir.string());
  }
}

}  // namespace

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoError, "cannot open for reading: " + path.string());
  Json value;
  try {
    in >> value;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::IoError, "invalid JSON in " + path.string() + ": " + e.what());
  }
  return value;
}

void write_json_file(const fs::path& path, const Json& value) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorCode::IoError, "cannot open for writing: " + path.string());
  out << value.dump(2) << '\n';
  if (!out) raise(ErrorCode::IoError, "short write: " + path.string());
}

void write_f32_array(const fs::path& path, const std::vector<float>& values) {
  write_raw(path, values);
}

std::vector<float> read_f32_array(const fs::path& path, std::size_t expected_count) {
  return read_raw<float>(path, expected_count);
}

void write_i32_array(const fs::path& path, const std::vector<std::int32_t>& values) {
  write_raw(path, values);
}

std::vector<std::int32_t> read_i32_array(const fs::path& path,
                                         std::size_t expected_count) {
  return read_raw<std::int32_t>(path, expected_count);
}

void save_dataset(const DistilledDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  Json manifest;
  manifest["format"] = kFormatTag;
  manifest["kind"] = "dataset";
  manifest["dtype"] = "f32";
  manifest["num_classes"] = dataset.num_classes;
  manifest["images_per_class"] = dataset.images_per_class;
  manifest["balanced"] = dataset.balanced;
  manifest["arrays"] = Json::array({
      Json{{"name", "images"}, {"dtype", "f32"}, {"shape", shape_json(dataset.images.shape)}},
      Json{{"name", "labels"}, {"dtype", "i32"}, {"shape", Json::array({dataset.labels.size()})}},
  });
  write_json_file(dir / "manifest.json", manifest);
  write_f32_array(dir / "images.f32", dataset.images.data);
  write_i32_array(dir / "labels.i32", dataset.labels);
}

DistilledDataset load_dataset(const fs::path& dir) {
  Json manifest = read_json_file(dir / "manifest.json");
  check_format(manifest, "dataset", dir);

  DistilledDataset dataset;
  dataset.num_classes = manifest.at("num_classes").get<int>();
  dataset.images_per_class = manifest.at("images_per_class").get<int>();
  dataset.balanced = manifest.value("balanced", true);

  std::vector<std::size_t> image_shape;
  std::size_t label_count = 0;
  for (const auto& arr : manifest.at("arrays")) {
    if (arr.at("name") == "images") image_shape = shape_from_json(arr.at("shape"));
    if (arr.at("name") == "labels") label_count = arr.at("shape")[0].get<std::size_t>();
  }
  dataset.images = Tensor(image_shape,
                          read_f32_array(dir / "images.f32",
                                         Tensor::numel_of(image_shape)));
  dataset.labels = read_i32_array(dir / "labels.i32", label_count);
  dataset.validate();
  return dataset;
}

void save_marker(const MarkerSet& marker, const fs::path& dir) {
  fs::create_directories(dir);
  Json manifest;
  manifest["format"] = kFormatTag;
  manifest["kind"] = "marker";
  manifest["dtype"] = "f32";
  manifest["marker_kind"] = marker_kind_name(marker.kind);
  manifest["origin"] = marker_origin_name(marker.origin);
  manifest["key_fingerprint"] = marker.key_fingerprint;
  manifest["arrays"] = Json::array({
      Json{{"name", "deltas"}, {"dtype", "f32"}, {"shape", shape_json(marker.deltas.shape)}},
  });
  write_json_file(dir / "manifest.json", manifest);
  write_f32_array(dir / "deltas.f32", marker.deltas.data);
}

MarkerSet load_marker(const fs::path& dir) {
  Json manifest = read_json_file(dir / "manifest.json");
  check_format(manifest, "marker", dir);

  MarkerSet marker;
  marker.kind = marker_kind_from_name(manifest.at("marker_kind").get<std::string>());
  marker.origin = marker_origin_from_name(manifest.at("origin").get<std::string>());
  marker.key_fingerprint = manifest.value("key_fingerprint", "");
  auto shape = shape_from_json(manifest.at("arrays")[0].at("shape"));
  marker.deltas = Tensor(shape, read_f32_array(dir / "deltas.f32",
                                               Tensor::numel_of(shape)));
  return marker;
}

void save_test_set(const TestSet& test, int num_classes, const fs::path& dir) {
  fs::create_directories(dir);
  Json manifest;
  manifest["format"] = kFormatTag;
  manifest["kind"] = "test_set";
  manifest["dtype"] = "f32";
  manifest["test_kind"] = test_kind_name(test.kind);
  manifest["num_classes"] = num_classes;
  manifest["user_id"] = test.user_id;
  manifest["arrays"] = Json::array({
      Json{{"name", "images"}, {"dtype", "f32"}, {"shape", shape_json(test.images.shape)}},
      Json{{"name", "labels"}, {"dtype", "i32"}, {"shape", Json::array({test.labels.size()})}},
  });
  write_json_file(dir / "manifest.json", manifest);
  write_f32_array(dir / "images.f32", test.images.data);
  write_i32_array(dir / "labels.i32", test.labels);
}

TestSet load_test_set(const fs::path& dir, int* num_classes_out) {
  Json manifest = read_json_file(dir / "manifest.json");
  check_format(manifest, "test_set", dir);

  TestSet test;
  test.kind = test_kind_from_name(manifest.at("test_kind").get<std::string>());
  test.user_id = manifest.value("user_id", -1);
  if (num_classes_out != nullptr) {
    *num_classes_out = manifest.at("num_classes").get<int>();
  }
  std::vector<std::size_t> image_shape;
  std::size_t label_count = 0;
  for (const auto& arr : manifest.at("arrays")) {
    if (arr.at("name") == "images") image_shape = shape_from_json(arr.at("shape"));
    if (arr.at("name") == "labels") label_count = arr.at("shape")[0].get<std::size_t>();
  }
  test.images = Tensor(image_shape, read_f32_array(dir / "images.f32",
                                                   Tensor::numel_of(image_shape)));
  test.labels = read_i32_array(dir / "labels.i32", label_count);
  return test;
}

void save_partition(const SubsetPartition& partition, std::uint64_t seed,
                    const fs::path& path) {
  Json value;
  value["ratio"] = partition.ratio;
  value["seed"] = seed;
  value["manipulation_indices"] = partition.manipulation_indices;
  value["utility_indices"] = partition.utility_indices;
  write_json_file(path, value);
}

SubsetPartition load_partition(const fs::path& path) {
  Json value = read_json_file(path);
  SubsetPartition partition;
  partition.ratio = value.at("ratio").get<double>();
  partition.manipulation_indices =
      value.at("manipulation_indices").get<std::vector<std::size_t>>();
  partition.utility_indices =
      value.at("utility_indices").get<std::vector<std::size_t>>();
  return partition;
}

void save_model(const Classifier& model, const fs::path& dir,
                const Json& provenance) {
  fs::create_directories(dir);
  Json manifest;
  manifest["format"] = kFormatTag;
  manifest["kind"] = "classifier";
  manifest["dtype"] = "f32";
  manifest["arch"] = arch_name(model.arch);
  manifest["num_classes"] = model.num_classes;
  manifest["in_channels"] = model.in_channels;
  manifest["in_height"] = model.in_h;
  manifest["in_width"] = model.in_w;
  manifest["width"] = model.width;
  manifest["checksum"] = model.checksum();
  manifest["provenance"] = provenance;
  Json arrays = Json::array();
  std::vector<float> flat;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    arrays.push_back(Json{{"name", model.param_names[i]},
                          {"dtype", "f32"},
                          {"shape", shape_json(model.params[i].shape)}});
    flat.insert(flat.end(), model.params[i].data.begin(),
                model.params[i].data.end());
  }
  manifest["arrays"] = arrays;
  write_json_file(dir / "manifest.json", manifest);
  write_f32_array(dir / "params.f32", flat);
}

Classifier load_model(const fs::path& dir, Json* provenance_out) {
  Json manifest = read_json_file(dir / "manifest.json");
  check_format(manifest, "classifier", dir);

  Classifier model;
  model.arch = arch_from_name(manifest.at("arch").get<std::string>());
  model.num_classes = manifest.at("num_classes").get<int>();
  model.in_channels = manifest.at("in_channels").get<int>();
  model.in_h = manifest.at("in_height").get<int>();
  model.in_w = manifest.at("in_width").get<int>();
  model.width = manifest.at("width").get<int>();
  model.train_mode = false;
  if (provenance_out != nullptr) {
    *provenance_out = manifest.value("provenance", Json::object());
  }

  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> shapes;
  for (const auto& arr : manifest.at("arrays")) {
    model.param_names.push_back(arr.at("name").get<std::string>());
    shapes.push_back(shape_from_json(arr.at("shape")));
    total += Tensor::numel_of(shapes.back());
  }
  std::vector<float> flat = read_f32_array(dir / "params.f32", total);
  std::size_t offset = 0;
  for (const auto& shape : shapes) {
    std::size_t n = Tensor::numel_of(shape);
    model.params.emplace_back(
        shape, std::vector<float>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                  flat.begin() + static_cast<std::ptrdiff_t>(offset + n)));
    offset += n;
  }
  if (model.checksum() != manifest.at("checksum").get<std::string>()) {
    raise(ErrorCode::IoError, "parameter checksum mismatch in " + dir.string());
  }
  return model;
}

std::vector<UserKey> load_keys(const fs::path& path) {
  Json value = read_json_file(path);
  std::vector<UserKey> keys;
  for (const auto& entry : value) {
    keys.push_back(UserKey::from_secret(
        entry.at("user_id").get<int>(),
        bytes_from_hex(entry.at("secret_hex").get<std::string>())));
  }
  return keys;
}

void save_keys(const std::vector<UserKey>& keys, const fs::path& path) {
  Json value = Json::array();
  for (const auto& key : keys) {
    value.push_back(Json{{"user_id", key.user_id},
                         {"secret_hex", hex_from_bytes(key.secret)}});
  }
  write_json_file(path, value);
}

}  // namespace distmark
