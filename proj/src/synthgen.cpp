#include "mixhop/synthgen.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "mixhop/errors.hpp"

namespace mixhop::synth {

void SynthConfig::validate() const {
  if (classes < 2) throw ConfigError("need at least 2 classes, got " + std::to_string(classes));
  if (nodes < classes) {
    throw ConfigError("node count " + std::to_string(nodes) + " is below the class count " +
                      std::to_string(classes));
  }
  if (edges_per_node < 1) throw ConfigError("edges per node must be at least 1");
  if (nodes <= edges_per_node) {
    throw ConfigError("node count must exceed edges per node (seed clique has m_a + 1 nodes)");
  }
  if (!(homophily >= 0.0 && homophily <= 1.0)) {
    throw ConfigError("homophily must lie in [0, 1], got " + std::to_string(homophily));
  }
}

std::size_t class_distance(std::size_t a, std::size_t b, std::size_t k) {
  const std::size_t diff = a > b ? a - b : b - a;
  return std::min(diff, k - diff);
}

DistanceWeights::DistanceWeights(std::size_t k) : k_(k) {
  if (k < 2) throw ConfigError("distance weights need k >= 2");
  const std::size_t d_max = k / 2;
  raw_.assign(d_max + 1, 0.0);
  for (std::size_t d = 1; d <= d_max; ++d) raw_[d] = std::ldexp(1.0, static_cast<int>(d_max - d));

  // Sum over the k-1 other classes of class 0, with multiplicity.
  double total = 0.0;
  for (std::size_t other = 1; other < k; ++other) total += raw_[class_distance(0, other, k)];
  normalized_.assign(d_max + 1, 0.0);
  for (std::size_t d = 1; d <= d_max; ++d) normalized_[d] = raw_[d] / total;
}

double DistanceWeights::between(std::size_t a, std::size_t b) const {
  return normalized_[class_distance(a, b, k_)];
}

GeneratedGraph generate_graph(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const DistanceWeights weights(cfg.classes);
  const std::size_t n = cfg.nodes;
  const std::size_t m = cfg.edges_per_node;
  const double h = cfg.homophily;

  GeneratedGraph out;
  out.labels.assign(n, 0);
  std::vector<double> degree(n, 0.0);
  std::vector<Edge> edges;
  edges.reserve(m * n);

  // Seed: complete graph on m + 1 nodes.
  const std::size_t seed_size = m + 1;
  for (std::size_t v = 0; v < seed_size; ++v)
    out.labels[v] = static_cast<int>(rng.index(cfg.classes));
  for (std::size_t a = 0; a < seed_size; ++a) {
    for (std::size_t b = a + 1; b < seed_size; ++b) {
      edges.emplace_back(static_cast<NodeId>(a), static_cast<NodeId>(b));
      degree[a] += 1.0;
      degree[b] += 1.0;
    }
  }

  // Per-class attachment factor for the arriving node, indexed by candidate class.
  std::vector<double> affinity(cfg.classes);
  std::vector<double> weight(n);
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> picks;
  for (std::size_t v = seed_size; v < n; ++v) {
    const auto cls = static_cast<std::size_t>(rng.index(cfg.classes));
    out.labels[v] = static_cast<int>(cls);
    for (std::size_t c = 0; c < cfg.classes; ++c)
      affinity[c] = c == cls ? h : (1.0 - h) * weights.between(cls, c);
    for (std::size_t u = 0; u < v; ++u)
      weight[u] = degree[u] * affinity[static_cast<std::size_t>(out.labels[u])];

    picks.clear();
    for (std::size_t draw = 0; draw < m; ++draw) {
      double total = 0.0;
      for (std::size_t u = 0; u < v; ++u)
        if (taken[u] == 0) total += weight[u];
      const bool fallback = !(total > 0.0);
      if (fallback) {
        ++out.fallback_draws;
        total = 0.0;
        for (std::size_t u = 0; u < v; ++u)
          if (taken[u] == 0) total += degree[u];
      }
      const double target = rng.uniform() * total;
      double running = 0.0;
      std::size_t chosen = v;
      for (std::size_t u = 0; u < v; ++u) {
        if (taken[u] != 0) continue;
        const double w = fallback ? degree[u] : weight[u];
        if (w <= 0.0) continue;
        chosen = u;  // last positive candidate absorbs rounding at the top end
        running += w;
        if (target < running) break;
      }
      taken[chosen] = 1;
      picks.push_back(chosen);
    }
    for (std::size_t u : picks) {
      taken[u] = 0;
      edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
      degree[u] += 1.0;
      degree[v] += 1.0;
    }
  }

  out.adjacency = SparseAdjacency::from_edge_list(edges, static_cast<NodeId>(n));
  return out;
}

ClassGaussian class_gaussian(std::size_t cls, std::size_t k, const FeatureParams& params) {
  const double theta = 2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(k);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double a = params.covariance_scale * params.covariance_diag[0];
  const double b = params.covariance_scale * params.covariance_diag[1];
  ClassGaussian g{};
  g.mean[0] = params.radius * c;
  g.mean[1] = params.radius * s;
  // R diag(a, b) R^T
  g.cov[0][0] = a * c * c + b * s * s;
  g.cov[0][1] = (a - b) * c * s;
  g.cov[1][0] = g.cov[0][1];
  g.cov[1][1] = a * s * s + b * c * c;
  return g;
}

DenseMatrix sample_features(const Labels& labels, std::size_t k, Rng& rng,
                            const FeatureParams& params) {
  DenseMatrix out(labels.size(), 2);
  const double sa = std::sqrt(params.covariance_scale * params.covariance_diag[0]);
  const double sb = std::sqrt(params.covariance_scale * params.covariance_diag[1]);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto cls = static_cast<std::size_t>(labels[i]);
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(k);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    // x = mu + R diag(sqrt(a), sqrt(b)) z
    const double z0 = sa * rng.normal();
    const double z1 = sb * rng.normal();
    out(i, 0) = params.radius * c + c * z0 - s * z1;
    out(i, 1) = params.radius * s + s * z0 + c * z1;
  }
  return out;
}

SyntheticDataset generate_dataset(const SynthConfig& cfg) {
  GeneratedGraph graph = generate_graph(cfg);
  // Separate streams so the graph does not depend on how features are drawn.
  Rng feature_rng(cfg.seed ^ 0xF3A7C0DE5EEDULL);
  Rng split_rng(cfg.seed ^ 0x5B117ULL);
  DenseMatrix features = sample_features(graph.labels, cfg.classes, feature_rng, cfg.features);
  Splits splits = make_equal_splits(cfg.nodes, split_rng);
  const double measured = measure_homophily(graph.adjacency, graph.labels);
  return SyntheticDataset{Dataset(std::move(graph.adjacency), std::move(features),
                                  std::move(graph.labels), cfg.classes, std::move(splits)),
                          graph.fallback_draws, measured};
}

void write_dataset(const SyntheticDataset& synthetic, const SynthConfig& cfg,
                   const std::filesystem::path& dir) {
  save_dataset(synthetic.dataset, dir);
  nlohmann::ordered_json meta;
  meta["homophily"] = cfg.homophily;
  meta["k"] = cfg.classes;
  meta["n"] = cfg.nodes;
  meta["m_a"] = cfg.edges_per_node;
  meta["seed"] = cfg.seed;
  meta["measured_homophily"] = synthetic.measured_homophily;
  meta["fallback_draw_count"] = synthetic.fallback_draws;
  meta["edges"] = synthetic.dataset.adjacency().undirected_edge_count();
  std::ofstream out(dir / "metadata.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "metadata.json").string());
  out << meta.dump(2) << '\n';
}

}  // namespace mixhop::synth
