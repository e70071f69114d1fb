#include "mixhop/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mixhop/errors.hpp"

namespace mixhop {

namespace fs = std::filesystem;

Dataset::Dataset(SparseAdjacency adjacency, DenseMatrix features, Labels labels,
                 std::size_t num_classes, Splits splits)
    : adjacency_(std::move(adjacency)),
      features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      splits_(std::move(splits)) {
  const std::size_t n = adjacency_.n();
  if (adjacency_.normalized()) throw DataError("dataset expects the binary adjacency");
  if (features_.rows() != n) {
    throw DataError("feature matrix has " + std::to_string(features_.rows()) +
                    " rows but the graph has " + std::to_string(n) + " nodes");
  }
  if (labels_.size() != n) {
    throw DataError("got " + std::to_string(labels_.size()) + " labels for " + std::to_string(n) +
                    " nodes");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels_[i] >= 0 && static_cast<std::size_t>(labels_[i]) >= num_classes_) {
      throw DataError("node " + std::to_string(i) + " has class " + std::to_string(labels_[i]) +
                      " outside [0, " + std::to_string(num_classes_) + ")");
    }
  }
  validate_splits(splits_, n);
  normalized_ = adjacency_.renormalize();
}

Dataset Dataset::with_splits(Splits splits) const {
  Dataset out = *this;
  validate_splits(splits, num_nodes());
  out.splits_ = std::move(splits);
  return out;
}

Dataset Dataset::with_features(DenseMatrix features) const {
  if (features.rows() != num_nodes()) {
    throw DataError("replacement features have " + std::to_string(features.rows()) + " rows, need " +
                    std::to_string(num_nodes()));
  }
  Dataset out = *this;
  out.features_ = std::move(features);
  return out;
}

void validate_splits(const Splits& splits, std::size_t n) {
  std::vector<char> seen(n, 0);
  auto check = [&](const std::vector<NodeId>& part, const char* name) {
    for (NodeId id : part) {
      if (id < 0 || static_cast<std::size_t>(id) >= n) {
        throw DataError(std::string(name) + " split references node " + std::to_string(id) +
                        " outside [0, " + std::to_string(n) + ")");
      }
      char& s = seen[static_cast<std::size_t>(id)];
      if (s != 0) {
        throw DataError("node " + std::to_string(id) + " appears twice across splits (in " + name +
                        ")");
      }
      s = 1;
    }
  };
  check(splits.train, "train");
  check(splits.valid, "valid");
  check(splits.test, "test");
}

namespace {

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Splits on tabs; an empty line yields no fields.
std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  if (line.empty()) return fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string_view strip_cr(const std::string& line) {
  std::string_view v = line;
  if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
  return v;
}

template <typename T>
T parse_number(std::string_view field, const fs::path& file, std::size_t line) {
  T value{};
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ParseError(file.string(), line, "cannot parse '" + std::string(field) + "' as a number");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

std::vector<NodeId> read_index_array(const nlohmann::json& doc, const char* key,
                                     const fs::path& file) {
  if (!doc.contains(key) || !doc[key].is_array()) {
    throw DataError(file.string() + ": missing integer array \"" + key + "\"");
  }
  std::vector<NodeId> out;
  out.reserve(doc[key].size());
  for (const auto& v : doc[key]) {
    if (!v.is_number_integer()) {
      throw DataError(file.string() + ": non-integer entry in \"" + key + "\"");
    }
    out.push_back(v.get<NodeId>());
  }
  return out;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  const fs::path features_path = dir / "features.tsv";
  const fs::path edges_path = dir / "edges.tsv";
  const fs::path labels_path = dir / "labels.tsv";
  const fs::path splits_path = dir / "splits.json";

  // Features define n.
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  {
    auto in = open_input(features_path);
    std::string raw;
    while (std::getline(in, raw)) {
      ++rows;
      const auto fields = split_tabs(strip_cr(raw));
      if (rows == 1) {
        cols = fields.size();
      } else if (fields.size() != cols) {
        throw ParseError(features_path.string(), rows,
                         "expected " + std::to_string(cols) + " columns, found " +
                             std::to_string(fields.size()));
      }
      for (auto f : fields) values.push_back(parse_number<double>(f, features_path, rows));
    }
  }
  if (rows == 0) throw DataError(features_path.string() + " is empty");
  DenseMatrix features(rows, cols, std::move(values));
  const auto n = static_cast<NodeId>(rows);

  std::vector<Edge> edges;
  {
    auto in = open_input(edges_path);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const auto fields = split_tabs(strip_cr(raw));
      if (fields.empty()) continue;
      if (fields.size() != 2) {
        throw ParseError(edges_path.string(), line, "expected 'src<TAB>dst'");
      }
      const auto src = parse_number<NodeId>(fields[0], edges_path, line);
      const auto dst = parse_number<NodeId>(fields[1], edges_path, line);
      if (src < 0 || src >= n || dst < 0 || dst >= n) {
        throw DataError(edges_path.string() + ":" + std::to_string(line) + ": node id out of [0, " +
                        std::to_string(n) + ")");
      }
      edges.emplace_back(src, dst);
    }
  }

  Labels labels(rows, -1);
  std::size_t num_classes = 0;
  {
    auto in = open_input(labels_path);
    std::string raw;
    std::size_t line = 0;
    std::vector<char> seen(rows, 0);
    while (std::getline(in, raw)) {
      ++line;
      const auto fields = split_tabs(strip_cr(raw));
      if (fields.empty()) continue;
      if (fields.size() != 2) {
        throw ParseError(labels_path.string(), line, "expected 'node_id<TAB>class_id'");
      }
      const auto node = parse_number<NodeId>(fields[0], labels_path, line);
      const auto cls = parse_number<int>(fields[1], labels_path, line);
      if (node < 0 || node >= n) {
        throw DataError(labels_path.string() + ":" + std::to_string(line) + ": node " +
                        std::to_string(node) + " out of range");
      }
      if (seen[static_cast<std::size_t>(node)] != 0) {
        throw DataError(labels_path.string() + ":" + std::to_string(line) + ": node " +
                        std::to_string(node) + " labelled twice");
      }
      seen[static_cast<std::size_t>(node)] = 1;
      labels[static_cast<std::size_t>(node)] = cls;
      if (cls >= 0) num_classes = std::max(num_classes, static_cast<std::size_t>(cls) + 1);
    }
    if (std::count(seen.begin(), seen.end(), 1) != static_cast<std::ptrdiff_t>(rows)) {
      throw DataError(labels_path.string() + " has " + std::to_string(line) + " rows for " +
                      std::to_string(rows) + " nodes");
    }
  }

  Splits splits;
  {
    auto in = open_input(splits_path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(splits_path.string(), 1, e.what());
    }
    splits.train = read_index_array(doc, "train", splits_path);
    splits.valid = read_index_array(doc, "valid", splits_path);
    splits.test = read_index_array(doc, "test", splits_path);
  }

  return Dataset(SparseAdjacency::from_edge_list(edges, n), std::move(features), std::move(labels),
                 num_classes, std::move(splits));
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  {
    auto out = open_output(dir / "edges.tsv");
    for (const auto& [src, dst] : dataset.adjacency().edge_list()) out << src << '\t' << dst << '\n';
  }
  {
    auto out = open_output(dir / "features.tsv");
    const DenseMatrix& x = dataset.features();
    std::string line;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      line.clear();
      for (std::size_t c = 0; c < x.cols(); ++c) {
        if (c > 0) line += '\t';
        line += format_double(x(r, c));
      }
      out << line << '\n';
    }
  }
  {
    auto out = open_output(dir / "labels.tsv");
    for (std::size_t i = 0; i < dataset.labels().size(); ++i)
      out << i << '\t' << dataset.labels()[i] << '\n';
  }
  {
    nlohmann::json doc;
    doc["train"] = dataset.splits().train;
    doc["valid"] = dataset.splits().valid;
    doc["test"] = dataset.splits().test;
    auto out = open_output(dir / "splits.json");
    out << doc.dump() << '\n';
  }
}

namespace {

// Partial Fisher-Yates: the first k entries become a uniform sample.
void shuffle_prefix(std::vector<NodeId>& items, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k && i + 1 < items.size(); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.index(items.size() - i));
    std::swap(items[i], items[j]);
  }
}

}  // namespace

Splits make_random_splits(const Dataset& dataset, std::size_t per_class, std::size_t valid_size,
                          Rng& rng) {
  const std::size_t n = dataset.num_nodes();
  std::vector<std::vector<NodeId>> by_class(dataset.num_classes());
  for (std::size_t i = 0; i < n; ++i) {
    const int label = dataset.labels()[i];
    if (label >= 0) by_class[static_cast<std::size_t>(label)].push_back(static_cast<NodeId>(i));
  }

  Splits out;
  std::vector<char> used(n, 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.size() < per_class) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                      " nodes, fewer than the " + std::to_string(per_class) + " requested");
    }
    shuffle_prefix(members, per_class, rng);
    for (std::size_t i = 0; i < per_class; ++i) {
      out.train.push_back(members[i]);
      used[static_cast<std::size_t>(members[i])] = 1;
    }
  }

  std::vector<NodeId> rest;
  for (std::size_t i = 0; i < n; ++i)
    if (used[i] == 0) rest.push_back(static_cast<NodeId>(i));
  if (rest.size() < valid_size) {
    throw DataError("only " + std::to_string(rest.size()) + " nodes left for a validation set of " +
                    std::to_string(valid_size));
  }
  shuffle_prefix(rest, valid_size, rng);
  out.valid.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(valid_size));
  out.test.assign(rest.begin() + static_cast<std::ptrdiff_t>(valid_size), rest.end());

  std::sort(out.train.begin(), out.train.end());
  std::sort(out.valid.begin(), out.valid.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Splits make_equal_splits(std::size_t n, Rng& rng) {
  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), NodeId{0});
  shuffle_prefix(order, n, rng);
  const std::size_t third = n / 3;
  Splits out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(third));
  out.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(third),
                   order.begin() + static_cast<std::ptrdiff_t>(2 * third));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(2 * third), order.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.valid.begin(), out.valid.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

double measure_homophily(const SparseAdjacency& adjacency, const Labels& labels) {
  std::size_t total = 0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < adjacency.n(); ++i) {
    for (std::size_t j : adjacency.neighbours(i)) {
      if (j <= i) continue;  // each undirected edge once
      ++total;
      if (labels[i] == labels[j]) ++same;
    }
  }
  if (total == 0) throw UndefinedStatistic("homophily is undefined on a graph without edges");
  return static_cast<double>(same) / static_cast<double>(total);
}

double measure_homophily(const Dataset& dataset) {
  return measure_homophily(dataset.adjacency(), dataset.labels());
}

FeatureNorm parse_feature_norm(std::string_view name) {
  if (name == "none") return FeatureNorm::none;
  if (name == "row") return FeatureNorm::row;
  if (name == "standardize") return FeatureNorm::standardize;
  throw ConfigError("unknown feature normalisation '" + std::string(name) + "'");
}

std::string_view to_string(FeatureNorm norm) noexcept {
  switch (norm) {
    case FeatureNorm::none:
      return "none";
    case FeatureNorm::row:
      return "row";
    case FeatureNorm::standardize:
      return "standardize";
  }
  return "none";
}

DenseMatrix normalize_features(const DenseMatrix& features, FeatureNorm norm) {
  DenseMatrix out = features;
  if (norm == FeatureNorm::row) {
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      double total = 0.0;
      for (double v : row) total += v;
      if (total != 0.0)
        for (double& v : row) v /= total;
    }
  } else if (norm == FeatureNorm::standardize && out.rows() > 0) {
    const auto n = static_cast<double>(out.rows());
    for (std::size_t c = 0; c < out.cols(); ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < out.rows(); ++r) mean += out(r, c);
      mean /= n;
      double var = 0.0;
      for (std::size_t r = 0; r < out.rows(); ++r) var += (out(r, c) - mean) * (out(r, c) - mean);
      const double sd = std::sqrt(var / n);
      for (std::size_t r = 0; r < out.rows(); ++r)
        out(r, c) = sd > 0.0 ? (out(r, c) - mean) / sd : 0.0;
    }
  }
  return out;
}

}  // namespace mixhop
