// mixhop: generate | train | archsearch | deltas | eval
//
// Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "content_hash.hpp"
#include "mixhop/dataset.hpp"
#include "mixhop/errors.hpp"
#include "mixhop/introspect.hpp"
#include "mixhop/json_io.hpp"
#include "mixhop/kernels.hpp"
#include "mixhop/model.hpp"
#include "mixhop/runtime.hpp"
#include "mixhop/synthgen.hpp"
#include "mixhop/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace mixhop;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    if (ch == sep) {
      out.push_back(current);
      current.clear();
    } else if (ch != ' ') {
      current += ch;
    }
  }
  out.push_back(current);
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw UsageError("invalid " + what + ": '" + text + "'");
  }
  return value;
}

std::vector<int> parse_powers(const std::string& text) {
  std::vector<int> powers;
  for (const auto& item : split_list(text, ',')) {
    const int p = parse_number<int>(item, "power");
    if (p < 0) throw UsageError("powers must be non-negative");
    powers.push_back(p);
  }
  return powers;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

// Options shared by every command that trains.
struct TrainFlags {
  std::string data;
  std::string split = "planetoid";
  std::string feature_norm = "auto";
  std::string order = "automatic";
  std::uint64_t seed = 0;
  double lr = 0.05;
  double lr_decay = 0.0005;
  std::size_t decay_interval = 40;
  std::size_t max_steps = 2000;
  std::size_t patience = 40;
  double l2 = 5e-4;
  double dropout = 0.5;
  std::size_t runs = 100;
  double keep = 0.5;
  std::size_t parallel = 1;
  std::string out;

  void add_to(CLI::App& cmd, bool multi_run) {
    cmd.add_option("--split", split, "planetoid (splits.json as shipped) | equal | random:<per_class>")
        ->capture_default_str();
    cmd.add_option("--feature-norm", feature_norm,
                   "auto | none | row | standardize; auto picks row for non-negative features")
        ->capture_default_str();
    cmd.add_option("--order", order, "automatic | propagate_first | project_first")
        ->capture_default_str();
    cmd.add_option("--seed", seed, "Base seed")->capture_default_str();
    cmd.add_option("--lr", lr, "Initial learning rate")->capture_default_str();
    cmd.add_option("--lr-decay", lr_decay, "Amount subtracted every decay interval")
        ->capture_default_str();
    cmd.add_option("--decay-interval", decay_interval)->capture_default_str();
    cmd.add_option("--max-steps", max_steps)->capture_default_str();
    cmd.add_option("--patience", patience)->capture_default_str();
    cmd.add_option("--l2", l2, "L2 strength")->capture_default_str();
    cmd.add_option("--dropout", dropout)->capture_default_str()->check(CLI::Range(0.0, 0.999));
    if (multi_run) {
      cmd.add_option("--runs", runs, "Independent trainings (seeds seed..seed+runs-1)")
          ->capture_default_str()
          ->check(CLI::PositiveNumber);
      cmd.add_option("--keep", keep, "Fraction of runs kept, best validation first")
          ->capture_default_str()
          ->check(CLI::Range(0.0, 1.0));
      cmd.add_option("--parallel", parallel, "Worker threads for the runs")
          ->capture_default_str()
          ->check(CLI::PositiveNumber);
    }
    cmd.add_option("--out", out, "Output directory")->required();
  }

  TrainConfig config() const {
    TrainConfig cfg;
    cfg.lr_init = lr;
    cfg.lr_decay = lr_decay;
    cfg.decay_interval = decay_interval;
    cfg.max_steps = max_steps;
    cfg.patience = patience;
    cfg.l2_lambda = l2;
    cfg.dropout_rate = dropout;
    cfg.seed = seed;
    if (order == "automatic") {
      cfg.order = PropagationOrder::automatic;
    } else if (order == "propagate_first") {
      cfg.order = PropagationOrder::propagate_first;
    } else if (order == "project_first") {
      cfg.order = PropagationOrder::project_first;
    } else {
      throw UsageError("unknown propagation order '" + order + "'");
    }
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }

  json echo() const {
    return {{"split", split},     {"feature_norm", feature_norm}, {"order", order},
            {"runs", runs},       {"keep", keep}};
  }
};

struct Prepared {
  Dataset dataset;
  std::string feature_norm;
};

Prepared prepare_dataset(const fs::path& dir, const std::string& split,
                         const std::string& feature_norm, std::uint64_t seed) {
  Dataset ds = load_dataset(dir);

  FeatureNorm norm = FeatureNorm::none;
  if (feature_norm == "auto") {
    const auto values = ds.features().values();
    const bool nonneg = std::all_of(values.begin(), values.end(), [](double v) { return v >= 0.0; });
    norm = nonneg ? FeatureNorm::row : FeatureNorm::standardize;
  } else {
    try {
      norm = parse_feature_norm(feature_norm);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  ds = ds.with_features(normalize_features(ds.features(), norm));

  if (split == "planetoid") {
  } else if (split == "equal") {
    Rng rng(seed ^ 0x5B117ULL);
    ds = ds.with_splits(make_equal_splits(ds.num_nodes(), rng));
  } else if (split.rfind("random:", 0) == 0) {
    const auto per_class = parse_number<std::size_t>(split.substr(7), "per-class count");
    Rng rng(seed ^ 0x5B117ULL);
    ds = ds.with_splits(make_random_splits(ds, per_class, 500, rng));
  } else {
    throw UsageError("unknown split '" + split + "'");
  }
  return {std::move(ds), std::string(to_string(norm))};
}

void write_log_csv(const fs::path& path, const TrainResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,lr,train_loss,valid_acc\n";
  for (const StepLog& s : result.log) {
    out << s.step << ',' << format_double(s.lr) << ',' << format_double(s.train_loss) << ','
        << format_double(s.valid_accuracy) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_manifest(const fs::path& out, const std::string& command, const json& config,
                    std::uint64_t seed, const std::vector<fs::path>& inputs,
                    const std::vector<std::string>& outputs) {
  json input_names = json::array();
  for (const auto& p : inputs) input_names.push_back(p.generic_string());
  write_json(out / "manifest.json", {{"command", command},
                                     {"config", config},
                                     {"seed", seed},
                                     {"inputs", input_names},
                                     {"input_hash", cli::content_hash(inputs)},
                                     {"outputs", outputs}});
}

void save_runs(const fs::path& out, const std::vector<TrainResult>& results, const TrainConfig& cfg) {
  fs::create_directories(out / "runs");
  for (const TrainResult& r : results) {
    const std::string stem = "seed_" + std::to_string(r.seed);
    write_log_csv(out / "runs" / (stem + ".csv"), r);
    json doc = r.summary_json();
    TrainConfig echo = cfg;
    echo.seed = r.seed;
    doc["config"] = echo.to_json();
    write_json(out / "runs" / (stem + ".json"), doc);
  }
}

const TrainResult& find_seed(const std::vector<TrainResult>& results, std::uint64_t seed) {
  for (const TrainResult& r : results)
    if (r.seed == seed) return r;
  throw Error("missing result for seed " + std::to_string(seed));
}

// ---------------------------------------------------------------- generate

struct GenerateCmd {
  synth::SynthConfig cfg;
  std::string out;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("generate", "Write a homophily-controlled synthetic dataset");
    cmd->add_option("--nodes", cfg.nodes)->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--classes", cfg.classes)->capture_default_str()->check(CLI::Range(2, 1 << 20));
    cmd->add_option("--homophily", cfg.homophily)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--edges-per-node", cfg.edges_per_node)
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seed", cfg.seed)->capture_default_str();
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->callback([this] { run(); });
  }

  void run() {
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    const fs::path dir(out);
    const synth::SyntheticDataset data = synth::generate_dataset(cfg);
    synth::write_dataset(data, cfg, dir);
    const json config{{"nodes", cfg.nodes},
                      {"classes", cfg.classes},
                      {"homophily", cfg.homophily},
                      {"edges_per_node", cfg.edges_per_node}};
    write_manifest(dir, "generate", config, cfg.seed, {},
                   {"edges.tsv", "features.tsv", "labels.tsv", "splits.json", "metadata.json"});
    std::cout << "wrote " << data.dataset.num_nodes() << " nodes, "
              << data.dataset.adjacency().undirected_edge_count() << " edges, homophily "
              << data.measured_homophily << " to " << dir.string() << "\n";
  }
};

// ---------------------------------------------------------------- train

struct TrainCmd {
  TrainFlags flags;
  std::string powers = "0,1,2";
  std::size_t hidden = 60;
  std::size_t layers = 2;
  bool shared = false;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "train",
        "Multi-seed training. A hidden width not divisible by the number of powers is split "
        "with the remainder going to the lowest powers (61 over 3 gives 21/20/20).");
    cmd->add_option("--data", flags.data, "Dataset directory")->required();
    cmd->add_option("--powers", powers, "Adjacency powers, comma separated")->capture_default_str();
    cmd->add_option("--hidden", hidden, "Total hidden width per layer")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--layers", layers, "Number of MixHop layers")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--shared-first-layer", shared, "Tie first-layer weights across powers");
    flags.add_to(*cmd, true);
    cmd->callback([this] { run(); });
  }

  void run() {
    const TrainConfig cfg = flags.config();
    const std::vector<int> power_list = parse_powers(powers);
    const fs::path data(flags.data), out(flags.out);
    const Prepared prep = prepare_dataset(data, flags.split, flags.feature_norm, flags.seed);
    ModelSpec spec;
    try {
      spec = make_mixhop_spec(prep.dataset.features().cols(), prep.dataset.num_classes(),
                              power_list, hidden, layers);
      spec.shared_first_layer = shared;
      spec.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }

    std::vector<TrainResult> results;
    const MultiSeedSummary summary =
        multi_seed(spec, prep.dataset, cfg, {flags.runs, flags.keep, flags.parallel}, &results);

    fs::create_directories(out);
    save_runs(out, results, cfg);
    const TrainResult& best = find_seed(results, summary.runs.front().seed);
    save_checkpoint(spec, best.best_params, out / "checkpoint");

    json config = flags.echo();
    config["data"] = data.generic_string();
    config["powers"] = power_list;
    config["hidden"] = hidden;
    config["layers"] = layers;
    config["shared_first_layer"] = shared;
    config["train"] = cfg.to_json();
    config["resolved_feature_norm"] = prep.feature_norm;

    json doc{{"spec", spec_to_json(spec)},
             {"weight_count", spec.weight_count()},
             {"config", config},
             {"summary", summary.to_json()}};
    write_json(out / "summary.json", doc);
    write_manifest(out, "train", config, flags.seed, {data},
                   {"summary.json", "runs/", "checkpoint/"});
    std::cout << "mean test accuracy " << summary.mean_test_accuracy << " +- "
              << summary.stddev_test_accuracy << " over " << summary.kept << " of "
              << summary.runs.size() << " runs\n";
  }
};

// ---------------------------------------------------------------- archsearch

std::size_t budget_from_model(const std::string& text, std::size_t input_width,
                              std::size_t classes, std::size_t layers) {
  std::string powers = "1";
  std::size_t hidden = 60;
  std::string key;
  for (const auto& token : split_list(text, ',')) {
    const auto eq = token.find('=');
    if (eq != std::string::npos) {
      key = token.substr(0, eq);
      const std::string value = token.substr(eq + 1);
      if (key == "powers") {
        powers = value;
      } else if (key == "hidden") {
        hidden = parse_number<std::size_t>(value, "hidden width");
      } else if (key == "layers") {
        layers = parse_number<std::size_t>(value, "layer count");
      } else {
        throw UsageError("unknown budget-model key '" + key + "'");
      }
    } else if (key == "powers") {
      powers += "," + token;
    } else {
      throw UsageError("malformed --budget-model '" + text + "'");
    }
  }
  try {
    return make_mixhop_spec(input_width, classes, parse_powers(powers), hidden, layers)
        .weight_count();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

struct ArchsearchCmd {
  TrainFlags flags;
  std::string powers = "0,1,2";
  std::size_t wide = 200;
  std::size_t layers = 2;
  std::string budget_model = "powers=1,hidden=60";
  std::size_t budget = 0;
  double lambda = ArchSearchConfig{}.group_lasso_lambda;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "archsearch", "Wide group-lasso training, column pruning to a budget, and retraining");
    cmd->add_option("--data", flags.data, "Dataset directory")->required();
    cmd->add_option("--powers", powers)->capture_default_str();
    cmd->add_option("--wide", wide, "Starting width per power")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--layers", layers)->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--budget-model", budget_model,
                    "Model whose weight count is the budget, e.g. \"powers=1,hidden=60\"")
        ->capture_default_str();
    cmd->add_option("--budget", budget, "Explicit weight budget (overrides --budget-model)");
    cmd->add_option("--lambda", lambda, "Group-lasso strength")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    flags.runs = 1;
    flags.add_to(*cmd, true);
    cmd->callback([this] { run(); });
  }

  void run() {
    const TrainConfig cfg = flags.config();
    const fs::path data(flags.data), out(flags.out);
    const Prepared prep = prepare_dataset(data, flags.split, flags.feature_norm, flags.seed);
    const std::size_t s0 = prep.dataset.features().cols();
    const std::size_t c = prep.dataset.num_classes();

    ArchSearchConfig search;
    search.powers = parse_powers(powers);
    search.wide_width = wide;
    search.depth = layers;
    search.budget = budget > 0 ? budget : budget_from_model(budget_model, s0, c, layers);
    search.group_lasso_lambda = lambda;
    search.train = cfg;
    const ArchSearchResult result = learn_architecture(prep.dataset, search);

    std::vector<TrainResult> results;
    const MultiSeedSummary summary = multi_seed(result.final_spec, prep.dataset, cfg,
                                                {flags.runs, flags.keep, flags.parallel}, &results);

    fs::create_directories(out);
    export_report(out, result.wide, result.norms, &result.plan);
    save_runs(out, results, cfg);
    const TrainResult& best = find_seed(results, summary.runs.front().seed);
    save_checkpoint(result.final_spec, best.best_params, out / "checkpoint");

    json config = flags.echo();
    config["data"] = data.generic_string();
    config["powers"] = search.powers;
    config["wide"] = wide;
    config["layers"] = layers;
    config["budget"] = search.budget;
    config["lambda"] = lambda;
    config["train"] = cfg.to_json();
    config["resolved_feature_norm"] = prep.feature_norm;

    json doc{{"final_spec", spec_to_json(result.final_spec)},
             {"final_weight_count", result.final_spec.weight_count()},
             {"budget", search.budget},
             {"threshold", result.plan.threshold},
             {"wide_run", result.wide_result.summary_json()},
             {"config", config},
             {"summary", summary.to_json()}};
    write_json(out / "summary.json", doc);
    write_manifest(out, "archsearch", config, flags.seed, {data},
                   {"architecture_report.json", "column_norms.csv", "summary.json", "runs/",
                    "checkpoint/"});
    std::cout << "learned " << result.final_spec.weight_count() << " weights (budget "
              << search.budget << "), mean test accuracy " << summary.mean_test_accuracy << "\n";
  }
};

// ---------------------------------------------------------------- deltas

struct DeltasCmd {
  TrainFlags flags;
  std::vector<std::string> datasets;
  std::string powers = "0,1,2";
  std::size_t hidden = 60;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "deltas", "Train with shared first-layer weights and count delta operators per dataset");
    cmd->add_option("datasets", datasets, "Dataset directories")->required();
    cmd->add_option("--powers", powers)->capture_default_str();
    cmd->add_option("--hidden", hidden, "First-layer width, split evenly over the powers")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    flags.runs = 1;
    flags.add_to(*cmd, true);
    cmd->callback([this] { run(); });
  }

  void run() {
    const TrainConfig cfg = flags.config();
    const std::vector<int> power_list = parse_powers(powers);
    const fs::path out(flags.out);
    fs::create_directories(out);

    json rows = json::array();
    std::string csv = "h,count\n";
    std::vector<fs::path> inputs;
    for (const auto& name : datasets) {
      const fs::path dir(name);
      inputs.push_back(dir);
      const Prepared prep = prepare_dataset(dir, flags.split, flags.feature_norm, flags.seed);
      ModelSpec spec;
      try {
        spec = make_mixhop_spec(prep.dataset.features().cols(), prep.dataset.num_classes(),
                                power_list, hidden, 2);
        spec.shared_first_layer = true;
        spec.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      std::vector<TrainResult> results;
      const MultiSeedSummary summary =
          multi_seed(spec, prep.dataset, cfg, {flags.runs, 1.0, flags.parallel}, &results);
      json counts = json::array();
      double total = 0.0;
      for (const TrainResult& r : results) {
        const std::size_t n = count_delta_operators(spec, r.best_params);
        counts.push_back(n);
        total += static_cast<double>(n);
      }
      const double mean = total / static_cast<double>(results.size());

      std::optional<double> h;
      if (fs::exists(dir / "metadata.json")) {
        const json meta = read_json(dir / "metadata.json");
        if (meta.contains("homophily")) h = meta["homophily"].get<double>();
      }
      rows.push_back({{"dataset", dir.generic_string()},
                      {"homophily", h ? json(*h) : json(nullptr)},
                      {"counts", counts},
                      {"mean_count", mean},
                      {"mean_test_accuracy", summary.mean_test_accuracy}});
      csv += (h ? format_double(*h) : std::string()) + "," + format_double(mean) + "\n";
      std::cout << dir.generic_string() << ": " << mean << " delta operators\n";
    }

    std::ofstream file(out / "deltas.csv", std::ios::binary);
    file << csv;
    if (!file) throw IoError("cannot write " + (out / "deltas.csv").string());
    json config = flags.echo();
    config["datasets"] = datasets;
    config["powers"] = power_list;
    config["hidden"] = hidden;
    config["train"] = cfg.to_json();
    write_json(out / "deltas.json", {{"config", config}, {"datasets", rows}});
    write_manifest(out, "deltas", config, flags.seed, inputs, {"deltas.csv", "deltas.json"});
  }
};

// ---------------------------------------------------------------- eval

struct EvalCmd {
  std::string checkpoint;
  std::string data;
  std::string split = "planetoid";
  std::string feature_norm = "auto";
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "Accuracy of a saved checkpoint on a dataset");
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    cmd->add_option("--data", data, "Dataset directory")->required();
    cmd->add_option("--split", split)->capture_default_str();
    cmd->add_option("--feature-norm", feature_norm)->capture_default_str();
    cmd->add_option("--seed", seed, "Seed for random splits")->capture_default_str();
    cmd->add_option("--out", out, "Result JSON file (stdout when absent)");
    cmd->callback([this] { run(); });
  }

  void run() {
    const Prepared prep = prepare_dataset(data, split, feature_norm, seed);
    const ConstructedModel model = load_checkpoint(checkpoint);
    if (model.spec.input_width != prep.dataset.features().cols() ||
        model.spec.num_classes != prep.dataset.num_classes()) {
      throw DataError("checkpoint expects " + std::to_string(model.spec.input_width) +
                      " features and " + std::to_string(model.spec.num_classes) +
                      " classes; dataset has " + std::to_string(prep.dataset.features().cols()) +
                      " and " + std::to_string(prep.dataset.num_classes()));
    }
    const DenseMatrix probs = model_forward(model.spec, model.params,
                                            prep.dataset.normalized_adjacency(),
                                            prep.dataset.features())
                                  .probabilities;
    json doc{{"checkpoint", checkpoint}, {"data", data}, {"split", split},
             {"feature_norm", prep.feature_norm}};
    const Splits& s = prep.dataset.splits();
    const auto acc = [&](const std::vector<NodeId>& nodes) {
      return nodes.empty() ? json(nullptr) : json(accuracy(probs, prep.dataset.labels(), nodes));
    };
    doc["train_accuracy"] = acc(s.train);
    doc["valid_accuracy"] = acc(s.valid);
    doc["test_accuracy"] = acc(s.test);
    if (out.empty()) {
      std::cout << doc.dump(2) << "\n";
    } else {
      write_json(out, doc);
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  mixhop::configure_allocator();
  CLI::App app{"MixHop graph convolution: data generation, training and analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mixhop 1.0");
  GenerateCmd generate;
  TrainCmd train;
  ArchsearchCmd archsearch;
  DeltasCmd deltas;
  EvalCmd eval;
  generate.add(app);
  train.add(app);
  archsearch.add(app);
  deltas.add(app);
  eval.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const mixhop::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
