#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mixhop/errors.hpp"
#include "mixhop/model.hpp"
#include "oracles.hpp"

using namespace mixhop;

namespace {

struct Graph {
  std::vector<Edge> edges;
  SparseAdjacency a;
  DenseMatrix dense;
};

Graph random_graph(std::size_t n, std::mt19937_64& gen, double p = 0.15) {
  Graph g;
  g.edges = oracle::random_edges(n, p, gen);
  g.a = SparseAdjacency::from_edge_list(g.edges, static_cast<NodeId>(n)).renormalize();
  g.dense = oracle::normalized_adjacency(g.edges, n);
  return g;
}

ModelParams random_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = init_params(spec, rng);
  std::mt19937_64 gen(seed);
  p.output_logits = oracle::random_matrix(1, spec.output_groups(), gen);
  return p;
}

// Mean cross-entropy over `mask` from the eval-mode probabilities.
double eval_loss(const ModelSpec& spec, const ModelParams& p, const SparseAdjacency& a,
                 const DenseMatrix& x, const Labels& labels, const std::vector<NodeId>& mask) {
  const DenseMatrix probs = model_forward(spec, p, a, x).probabilities;
  double sum = 0.0;
  for (NodeId i : mask) sum -= std::log(probs(i, static_cast<std::size_t>(labels[i])));
  return sum / static_cast<double>(mask.size());
}

DenseMatrix side_by_side(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

}  // namespace

TEST_CASE("split_width gives the remainder to the lowest powers") {
  CHECK(split_width(60, 3) == std::vector<std::size_t>{20, 20, 20});
  CHECK(split_width(61, 3) == std::vector<std::size_t>{21, 20, 20});
  CHECK(split_width(62, 3) == std::vector<std::size_t>{21, 21, 20});
  CHECK(split_width(5, 1) == std::vector<std::size_t>{5});
}

TEST_CASE("default spec shape") {
  const std::vector<int> powers{0, 1, 2};
  const ModelSpec spec = make_mixhop_spec(1433, 7, powers, 60, 2);
  REQUIRE(spec.layers.size() == 2);
  CHECK(spec.layers[0].widths == std::vector<std::size_t>{20, 20, 20});
  CHECK(spec.layers[0].activation == Activation::relu);
  CHECK(spec.layers[1].widths == std::vector<std::size_t>{7, 7, 7});
  CHECK(spec.layers[1].activation == Activation::identity);
  CHECK(spec.layer_input_width(1) == 60);
  CHECK(spec.output_groups() == 3);
  CHECK(spec.weight_count() == 1433 * 60 + 3 * 60 * 7);
}

TEST_CASE("spec validation") {
  const std::vector<int> powers{0, 1};
  ModelSpec spec = make_mixhop_spec(4, 3, powers, 10, 2);
  CHECK_NOTHROW(spec.validate());
  spec.layers[1].widths = {3, 2};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = make_mixhop_spec(4, 3, powers, 10, 2);
  spec.layers[0].powers = {1, 0};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = make_mixhop_spec(4, 3, powers, 10, 2);
  spec.layers[0].powers = {-1, 0};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = make_mixhop_spec(4, 3, powers, 10, 2);
  spec.layers.clear();
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("parameter count parity with a vanilla layer") {
  for (std::size_t s0 : {2, 50, 1433}) {
    LayerSpec mix;
    mix.powers = {0, 1, 2};
    mix.widths = {20, 20, 20};
    LayerSpec vanilla;
    vanilla.powers = {1};
    vanilla.widths = {60};
    ModelSpec a{s0, 3, {mix}, false};
    ModelSpec b{s0, 3, {vanilla}, false};
    CHECK(a.weight_count() == b.weight_count());
    CHECK(mix.width() == vanilla.width());
  }
}

TEST_CASE("init bound, zero-width powers and determinism") {
  LayerSpec l1;
  l1.powers = {0, 1, 2};
  l1.widths = {60, 0, 60};
  LayerSpec l2 = uniform_layer(std::vector<int>{0, 1}, 2, Activation::identity);
  const ModelSpec spec{60, 2, {l1, l2}, false};
  spec.validate();
  Rng r1(5), r2(5);
  const ModelParams a = init_params(spec, r1);
  const ModelParams b = init_params(spec, r2);
  CHECK(a == b);
  CHECK(a.weight(0, 1).rows() == 60);
  CHECK(a.weight(0, 1).cols() == 0);
  const double bound = std::sqrt(6.0 / 120.0);
  double max_abs = 0.0;
  for (double v : a.weight(0, 0).values()) max_abs = std::max(max_abs, std::abs(v));
  CHECK(max_abs <= bound);
  CHECK(max_abs > 0.9 * bound);
  CHECK(a.output_logits.rows() == 1);
  CHECK(a.output_logits.cols() == 2);
  for (double v : a.output_logits.values()) CHECK(v == 0.0);
  CHECK_NOTHROW(a.check_shapes(spec));
  ModelParams bad = a;
  bad.weights[1][0] = DenseMatrix(3, 2);
  CHECK_THROWS_AS(bad.check_shapes(spec), DimensionError);
}

TEST_CASE("vanilla layer examples") {
  const auto eye = SparseAdjacency::from_edge_list({}, 3).renormalize();
  std::mt19937_64 gen(1);
  const DenseMatrix h = oracle::random_matrix(3, 2, gen);
  CHECK(vanilla_gc_forward(h, eye, DenseMatrix::identity(2), Activation::identity) == h);

  const std::vector<Edge> pair{{0, 1}};
  const auto a = SparseAdjacency::from_edge_list(pair, 2).renormalize();
  const DenseMatrix x = DenseMatrix::from_rows({{3.0}, {-1.0}});
  const DenseMatrix out = vanilla_gc_forward(x, a, DenseMatrix::from_rows({{1.0}}),
                                             Activation::identity);
  CHECK(out(0, 0) == doctest::Approx(1.0));
  CHECK(out(1, 0) == doctest::Approx(1.0));

  CHECK_THROWS_AS(vanilla_gc_forward(x, a, DenseMatrix(2, 1), Activation::identity),
                  DimensionError);
}

TEST_CASE("vanilla layer equals the single-power MixHop layer exactly") {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Graph g = random_graph(25, gen);
    const DenseMatrix h = oracle::random_matrix(25, 4, gen);
    const DenseMatrix w = oracle::random_matrix(4, 6, gen);
    LayerSpec spec;
    spec.powers = {1};
    spec.widths = {6};
    for (Activation act : {Activation::relu, Activation::identity}) {
      spec.activation = act;
      const std::vector<DenseMatrix> ws{w};
      CHECK(vanilla_gc_forward(h, g.a, w, act) == mixhop_gc_forward(h, g.a, spec, ws));
    }
  }
}

TEST_CASE("MixHop layer matches a per-block dense oracle") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Graph g = random_graph(30, gen);
    const DenseMatrix h = oracle::random_matrix(30, 5, gen);
    LayerSpec spec;
    spec.powers = {0, 1, 3};
    spec.widths = {2, 0, 4};
    spec.activation = Activation::relu;
    const std::vector<DenseMatrix> ws{oracle::random_matrix(5, 2, gen), DenseMatrix(5, 0),
                                      oracle::random_matrix(5, 4, gen)};
    const DenseMatrix out = mixhop_gc_forward(h, g.a, spec, ws);
    REQUIRE(out.cols() == 6);
    const DenseMatrix b0 = oracle::relu(oracle::matmul(h, ws[0]));
    const DenseMatrix b3 = oracle::relu(oracle::matmul(oracle::power_times(g.dense, h, 3), ws[2]));
    CHECK(max_abs_diff(out.slice_columns(0, 2), b0) < 1e-12);
    CHECK(max_abs_diff(out.slice_columns(2, 6), b3) < 1e-12);
  }
}

TEST_CASE("MixHop layer examples") {
  std::mt19937_64 gen(4);
  const Graph g = random_graph(12, gen);
  const DenseMatrix x = oracle::random_matrix(12, 3, gen);
  LayerSpec zero;
  zero.powers = {0};
  zero.widths = {3};
  zero.activation = Activation::identity;
  const std::vector<DenseMatrix> id{DenseMatrix::identity(3)};
  CHECK(mixhop_gc_forward(x, g.a, zero, id) == x);

  // First layer of the delta construction.
  LayerSpec l = uniform_layer(std::vector<int>{0, 1, 2}, 3, Activation::relu);
  const std::vector<DenseMatrix> ws{DenseMatrix(3, 3), DenseMatrix::identity(3),
                                    DenseMatrix::identity(3)};
  const DenseMatrix out = mixhop_gc_forward(x, g.a, l, ws);
  CHECK(max_abs_diff(out.slice_columns(0, 3), DenseMatrix(12, 3)) == 0.0);
  CHECK(max_abs_diff(out.slice_columns(3, 6), oracle::relu(oracle::matmul(g.dense, x))) < 1e-12);
  CHECK(max_abs_diff(out.slice_columns(6, 9), oracle::relu(oracle::power_times(g.dense, x, 2))) <
        1e-12);

  const std::vector<DenseMatrix> wrong{DenseMatrix(3, 3), DenseMatrix(2, 3), DenseMatrix(3, 3)};
  CHECK_THROWS_AS(mixhop_gc_forward(x, g.a, l, wrong), DimensionError);
}

TEST_CASE("output layer examples") {
  std::mt19937_64 gen(5);
  const DenseMatrix h = oracle::random_matrix(6, 3, gen);
  CHECK(max_abs_diff(output_layer_forward(h, DenseMatrix::from_rows({{4.2}}), 3),
                     oracle::softmax_rows(h)) < 1e-15);

  const DenseMatrix twin = side_by_side(h, h);
  const DenseMatrix a = output_layer_forward(twin, DenseMatrix::from_rows({{0.3, -2.0}}), 3);
  const DenseMatrix b = output_layer_forward(twin, DenseMatrix::from_rows({{5.0, 1.0}}), 3);
  CHECK(max_abs_diff(a, b) < 1e-15);

  const DenseMatrix other = oracle::random_matrix(6, 3, gen);
  const DenseMatrix pair = side_by_side(h, other);
  const DenseMatrix sat = output_layer_forward(pair, DenseMatrix::from_rows({{1000.0, -1000.0}}), 3);
  CHECK(max_abs_diff(sat, oracle::softmax_rows(h)) < 1e-6);

  // Oracle for a generic mix.
  const DenseMatrix logits = DenseMatrix::from_rows({{0.5, -0.25}});
  const double e0 = std::exp(0.5), e1 = std::exp(-0.25);
  const DenseMatrix mixed = (e0 / (e0 + e1)) * h + (e1 / (e0 + e1)) * other;
  CHECK(max_abs_diff(output_layer_forward(pair, logits, 3), oracle::softmax_rows(mixed)) < 1e-14);

  CHECK_THROWS_AS(output_layer_forward(oracle::random_matrix(6, 4, gen),
                                       DenseMatrix::from_rows({{0.0}}), 3),
                  ConfigError);
}

TEST_CASE("model output rows sum to one and eval is deterministic") {
  std::mt19937_64 gen(6);
  const Graph g = random_graph(40, gen);
  const DenseMatrix x = oracle::random_matrix(40, 7, gen);
  const ModelSpec spec = make_mixhop_spec(7, 4, std::vector<int>{0, 1, 2}, 12, 2);
  const ModelParams p = random_params(spec, 7);
  const DenseMatrix y = model_forward(spec, p, g.a, x).probabilities;
  REQUIRE(y.rows() == 40);
  REQUIRE(y.cols() == 4);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double s = 0.0;
    for (double v : y.row(i)) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK(model_forward(spec, p, g.a, x).probabilities == y);
}

TEST_CASE("single-power model equals a vanilla GCN composition") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Graph g = random_graph(30, gen);
    const DenseMatrix x = oracle::random_matrix(30, 6, gen);
    const ModelSpec spec = make_mixhop_spec(6, 3, std::vector<int>{1}, 8, 2);
    const ModelParams p = random_params(spec, 11 + static_cast<std::uint64_t>(trial));
    const DenseMatrix h1 = oracle::relu(oracle::matmul(oracle::matmul(g.dense, x), p.weight(0, 0)));
    const DenseMatrix h2 = oracle::matmul(oracle::matmul(g.dense, h1), p.weight(1, 0));
    const DenseMatrix y = model_forward(spec, p, g.a, x).probabilities;
    CHECK(max_abs_diff(y, oracle::softmax_rows(h2)) < 1e-12);
  }
}

TEST_CASE("propagation orders agree") {
  std::mt19937_64 gen(8);
  const Graph g = random_graph(35, gen);
  const DenseMatrix x = oracle::random_matrix(35, 9, gen);
  const ModelSpec spec = make_mixhop_spec(9, 3, std::vector<int>{0, 1, 2, 3}, 8, 3);
  const ModelParams p = random_params(spec, 3);
  const auto ref = model_forward(spec, p, g.a, x, PropagationOrder::automatic);
  for (auto order : {PropagationOrder::propagate_first, PropagationOrder::project_first}) {
    const auto out = model_forward(spec, p, g.a, x, order);
    CHECK(max_abs_diff(out.probabilities, ref.probabilities) < 1e-12);
    for (std::size_t l = 0; l < ref.layer_outputs.size(); ++l)
      CHECK(max_abs_diff(out.layer_outputs[l], ref.layer_outputs[l]) < 1e-12);
  }
}

TEST_CASE("shared first layer reuses one matrix") {
  std::mt19937_64 gen(9);
  const Graph g = random_graph(20, gen);
  const DenseMatrix x = oracle::random_matrix(20, 4, gen);
  ModelSpec spec = make_mixhop_spec(4, 2, std::vector<int>{0, 1, 2}, 15, 2);
  spec.shared_first_layer = true;
  spec.validate();
  Rng rng(1);
  const ModelParams p = init_params(spec, rng);
  REQUIRE(p.weights[0].size() == 1);
  const DenseMatrix w = p.weight(0, 0);
  const DenseMatrix h1 = model_forward(spec, p, g.a, x).layer_outputs.front();
  REQUIRE(h1.cols() == 15);
  for (int j = 0; j < 3; ++j)
    CHECK(max_abs_diff(h1.slice_columns(5 * j, 5 * j + 5),
                       oracle::relu(oracle::matmul(oracle::power_times(g.dense, x, j), w))) <
          1e-12);
  LayerSpec uneven;
  uneven.powers = {0, 1};
  uneven.widths = {3, 2};
  spec.layers[0] = uneven;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("delta construction") {
  std::mt19937_64 gen(10);
  for (Activation act : {Activation::relu, Activation::identity}) {
    const ConstructedModel m = construct_delta_weights(5, act);
    const Graph g = random_graph(30, gen);
    const DenseMatrix x = oracle::random_matrix(30, 5, gen);
    const DenseMatrix pre = model_forward(m.spec, m.params, g.a, x).layer_outputs.back();
    const DenseMatrix expect = oracle::apply(oracle::matmul(g.dense, x), act) -
                               oracle::apply(oracle::power_times(g.dense, x, 2), act);
    CHECK(max_abs_diff(pre.slice_columns(0, 5), expect) < 1e-12);

    const auto eye = SparseAdjacency::from_edge_list({}, 30).renormalize();
    const DenseMatrix id_pre = model_forward(m.spec, m.params, eye, x).layer_outputs.back();
    CHECK(max_abs_diff(id_pre.slice_columns(0, 5), DenseMatrix(30, 5)) == 0.0);

    const DenseMatrix zero_pre =
        model_forward(m.spec, m.params, g.a, DenseMatrix(30, 5)).layer_outputs.back();
    CHECK(max_abs_diff(zero_pre.slice_columns(0, 5), DenseMatrix(30, 5)) == 0.0);
  }
}

TEST_CASE("mixing construction") {
  std::mt19937_64 gen(11);
  const Graph g = random_graph(25, gen);
  const DenseMatrix x = oracle::random_matrix(25, 3, gen);

  const std::vector<double> delta{1.0, -1.0};
  const auto m1 = construct_mixing_weights(delta, 3, Activation::identity);
  const DenseMatrix pre1 = model_forward(m1.spec, m1.params, g.a, x).layer_outputs.back();
  CHECK(max_abs_diff(pre1.slice_columns(0, 3), x - oracle::matmul(g.dense, x)) < 1e-12);

  const std::vector<double> zeros{0.0, 0.0, 0.0};
  const auto m0 = construct_mixing_weights(zeros, 3);
  const DenseMatrix pre0 = model_forward(m0.spec, m0.params, g.a, x).layer_outputs.back();
  CHECK(max_abs_diff(pre0.slice_columns(0, 3), DenseMatrix(25, 3)) == 0.0);

  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 5; ++trial) {
    const std::vector<double> alphas{u(gen), u(gen), u(gen), u(gen)};
    const auto m = construct_mixing_weights(alphas, 3, Activation::relu);
    const DenseMatrix pre = model_forward(m.spec, m.params, g.a, x).layer_outputs.back();
    DenseMatrix expect(25, 3);
    for (int j = 0; j < 4; ++j)
      expect += alphas[static_cast<std::size_t>(j)] *
                oracle::relu(oracle::power_times(g.dense, x, j));
    CHECK(max_abs_diff(pre.slice_columns(0, 3), expect) < 1e-12);
  }
  CHECK_THROWS_AS(construct_mixing_weights(std::vector<double>{}, 3), ConfigError);
}

TEST_CASE("full-model gradients match finite differences") {
  std::mt19937_64 gen(12);
  const std::size_t n = 20;
  const Graph g = random_graph(n, gen, 0.2);
  const DenseMatrix x = oracle::random_matrix(n, 4, gen);
  Labels labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 3);
  const std::vector<NodeId> mask{0, 2, 3, 5, 8, 11, 13, 17, 19};
  const ModelSpec spec = make_mixhop_spec(4, 3, std::vector<int>{0, 1, 2}, 6, 2);
  ModelParams p = random_params(spec, 21);
  for (auto& layer : p.weights)
    for (auto& w : layer) oracle::nudge_from_zero(w);

  Tape tape;
  Rng rng(0);
  const ForwardVars fv = record_forward(tape, spec, p, g.a, x, rng);
  const Var loss = tape.softmax_xent(fv.mixed, labels, mask);
  tape.backward(loss);
  CHECK(tape.value(loss)(0, 0) == doctest::Approx(eval_loss(spec, p, g.a, x, labels, mask)));

  for (std::size_t l = 0; l < p.weights.size(); ++l)
    for (std::size_t j = 0; j < p.weights[l].size(); ++j) {
      const auto f = [&](const DenseMatrix& w) {
        ModelParams q = p;
        q.weights[l][j] = w;
        return eval_loss(spec, q, g.a, x, labels, mask);
      };
      const DenseMatrix numeric = oracle::numeric_gradient(f, p.weights[l][j]);
      CAPTURE(l);
      CAPTURE(j);
      CHECK(oracle::relative_error(tape.grad(fv.weights[l][j]), numeric) < 1e-4);
    }
  const auto f = [&](const DenseMatrix& logits) {
    ModelParams q = p;
    q.output_logits = logits;
    return eval_loss(spec, q, g.a, x, labels, mask);
  };
  const DenseMatrix numeric = oracle::numeric_gradient(f, p.output_logits);
  CHECK(oracle::norm(numeric) > 0.0);
  CHECK(oracle::relative_error(tape.grad(fv.output_logits), numeric) < 1e-4);
}

TEST_CASE("dropout in training mode only") {
  std::mt19937_64 gen(13);
  const Graph g = random_graph(15, gen);
  const DenseMatrix x = oracle::random_matrix(15, 4, gen);
  const ModelSpec spec = make_mixhop_spec(4, 2, std::vector<int>{0, 1}, 6, 2);
  const ModelParams p = random_params(spec, 2);
  const DenseMatrix ref = model_forward(spec, p, g.a, x).layer_outputs.back();
  {
    Tape tape;
    Rng rng(1);
    const auto fv = record_forward(tape, spec, p, g.a, x, rng, {false, 0.5});
    CHECK(tape.value(fv.layer_outputs.back()) == ref);
  }
  Tape t1, t2;
  Rng r1(1), r2(1);
  const auto a = record_forward(t1, spec, p, g.a, x, r1, {true, 0.5});
  const auto b = record_forward(t2, spec, p, g.a, x, r2, {true, 0.5});
  CHECK(t1.value(a.layer_outputs.back()) == t2.value(b.layer_outputs.back()));
  CHECK(t1.value(a.layer_outputs.back()) != ref);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto dir = oracle::temp_dir("checkpoint");
  ModelSpec spec = make_mixhop_spec(5, 3, std::vector<int>{0, 2}, 7, 2);
  spec.layers[0].widths = {7, 0};
  spec.validate();
  const ModelParams p = random_params(spec, 99);
  save_checkpoint(spec, p, dir);
  CHECK(std::filesystem::exists(dir / "checkpoint.json"));
  CHECK(std::filesystem::exists(dir / "layer0" / "power0.f64"));
  CHECK(std::filesystem::exists(dir / "output" / "logits.f64"));
  CHECK(std::filesystem::file_size(dir / "layer0" / "power0.f64") == 5 * 7 * 8);
  const ConstructedModel back = load_checkpoint(dir);
  CHECK(back.spec == spec);
  CHECK(back.params == p);

  std::filesystem::resize_file(dir / "layer1" / "power2.f64", 8);
  CHECK_THROWS(load_checkpoint(dir));
}
