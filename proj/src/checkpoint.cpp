#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>

#include "mixhop/errors.hpp"
#include "mixhop/json_io.hpp"
#include "mixhop/model.hpp"

namespace mixhop {

namespace fs = std::filesystem;

nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json doc;
  doc["input_width"] = spec.input_width;
  doc["num_classes"] = spec.num_classes;
  doc["shared_first_layer"] = spec.shared_first_layer;
  doc["layers"] = nlohmann::json::array();
  for (const LayerSpec& layer : spec.layers) {
    doc["layers"].push_back({{"powers", layer.powers},
                             {"widths", layer.widths},
                             {"activation", std::string(to_string(layer.activation))}});
  }
  return doc;
}

ModelSpec spec_from_json(const nlohmann::json& doc) {
  try {
    ModelSpec spec;
    spec.input_width = doc.at("input_width").get<std::size_t>();
    spec.num_classes = doc.at("num_classes").get<std::size_t>();
    spec.shared_first_layer = doc.value("shared_first_layer", false);
    for (const auto& layer_doc : doc.at("layers")) {
      LayerSpec layer;
      layer.powers = layer_doc.at("powers").get<std::vector<int>>();
      layer.widths = layer_doc.at("widths").get<std::vector<std::size_t>>();
      layer.activation = parse_activation(layer_doc.at("activation").get<std::string>());
      spec.layers.push_back(std::move(layer));
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model spec: ") + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  }
}

namespace {

void write_f64(const fs::path& path, const DenseMatrix& m) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (double v : m.values()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (char& b : bytes) {
      b = static_cast<char>(bits & 0xFFu);
      bits >>= 8;
    }
    out.write(bytes, 8);
  }
}

DenseMatrix read_f64(const fs::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (raw.size() != rows * cols * 8) {
    throw DataError(path.string() + " holds " + std::to_string(raw.size()) + " bytes, expected " +
                    std::to_string(rows * cols * 8));
  }
  std::vector<double> values(rows * cols);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b)
      bits = (bits << 8) | static_cast<unsigned char>(raw[i * 8 + static_cast<std::size_t>(b)]);
    values[i] = std::bit_cast<double>(bits);
  }
  return {rows, cols, std::move(values)};
}

std::string weight_key(std::size_t layer, int power) {
  return "layer" + std::to_string(layer) + "/power" + std::to_string(power);
}

}  // namespace

void save_checkpoint(const ModelSpec& spec, const ModelParams& params, const fs::path& dir) {
  params.check_shapes(spec);
  nlohmann::json manifest;
  manifest["format"] = "mixhop-checkpoint/1";
  manifest["spec"] = spec_to_json(spec);
  manifest["tensors"] = nlohmann::json::array();
  auto emit = [&](const std::string& key, const DenseMatrix& m) {
    const std::string file = key + ".f64";
    write_f64(dir / file, m);
    manifest["tensors"].push_back(
        {{"key", key}, {"rows", m.rows()}, {"cols", m.cols()}, {"file", file}});
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    for (std::size_t p = 0; p < params.weights[i].size(); ++p)
      emit(weight_key(i, spec.layers[i].powers[p]), params.weights[i][p]);
  emit("output/logits", params.output_logits);
  write_json(dir / "checkpoint.json", manifest);
}

ConstructedModel load_checkpoint(const fs::path& dir) {
  const nlohmann::json manifest = read_json(dir / "checkpoint.json");
  ConstructedModel m;
  m.spec = spec_from_json(manifest.at("spec"));

  std::map<std::string, DenseMatrix> tensors;
  for (const auto& t : manifest.at("tensors")) {
    tensors.emplace(t.at("key").get<std::string>(),
                    read_f64(dir / t.at("file").get<std::string>(), t.at("rows").get<std::size_t>(),
                             t.at("cols").get<std::size_t>()));
  }
  auto take = [&](const std::string& key) {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw DataError("checkpoint is missing tensor " + key);
    return it->second;
  };
  m.params.weights.resize(m.spec.layers.size());
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const std::size_t count =
        (i == 0 && m.spec.shared_first_layer) ? 1 : m.spec.layers[i].powers.size();
    for (std::size_t p = 0; p < count; ++p)
      m.params.weights[i].push_back(take(weight_key(i, m.spec.layers[i].powers[p])));
  }
  m.params.output_logits = take("output/logits");
  m.params.check_shapes(m.spec);
  return m;
}

}  // namespace mixhop
