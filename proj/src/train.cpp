#include "mixhop/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "mixhop/errors.hpp"

namespace mixhop {

std::string_view to_string(PenaltyKind kind) noexcept {
  return kind == PenaltyKind::l2 ? "l2" : "group_lasso";
}

void TrainConfig::validate() const {
  if (!(lr_init > 0.0)) throw ConfigError("initial learning rate must be positive");
  if (lr_decay < 0.0) throw ConfigError("learning-rate decay must be non-negative");
  if (decay_interval == 0) throw ConfigError("decay interval must be positive");
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(dropout_rate));
  }
  if (l2_lambda < 0.0 || group_lasso_lambda < 0.0) {
    throw ConfigError("regularisation strengths must be non-negative");
  }
  const double floor = lr_at(max_steps - 1, *this);
  if (!(floor > 0.0)) {
    throw ConfigError("learning-rate schedule reaches " + std::to_string(floor) + " by step " +
                      std::to_string(max_steps - 1));
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr_init", lr_init},
          {"lr_decay", lr_decay},
          {"decay_interval", decay_interval},
          {"max_steps", max_steps},
          {"patience", patience},
          {"penalty", std::string(to_string(penalty))},
          {"l2_lambda", l2_lambda},
          {"group_lasso_lambda", group_lasso_lambda},
          {"group_lasso_update",
           group_lasso_update == GroupLassoUpdate::proximal ? "proximal" : "subgradient"},
          {"dropout_rate", dropout_rate},
          {"seed", seed}};
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  return cfg.lr_init - cfg.lr_decay * static_cast<double>(step / cfg.decay_interval);
}

namespace {

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out;
  out.weights.resize(params.weights.size());
  for (std::size_t i = 0; i < params.weights.size(); ++i)
    for (const DenseMatrix& w : params.weights[i]) out.weights[i].emplace_back(w.rows(), w.cols());
  out.output_logits = DenseMatrix(params.output_logits.rows(), params.output_logits.cols());
  return out;
}

PenaltyValue penalty_impl(const ModelParams& params, const TrainConfig& cfg,
                          bool group_lasso_gradient) {
  PenaltyValue out{0.0, zeros_like(params)};
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    for (std::size_t p = 0; p < params.weights[i].size(); ++p) {
      const DenseMatrix& w = params.weights[i][p];
      DenseMatrix& g = out.gradient.weights[i][p];
      if (cfg.penalty == PenaltyKind::l2) {
        for (std::size_t k = 0; k < w.size(); ++k) {
          const double v = w.values()[k];
          out.value += cfg.l2_lambda * v * v;
          g.values()[k] = 2.0 * cfg.l2_lambda * v;
        }
        continue;
      }
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double sq = 0.0;
        for (std::size_t r = 0; r < w.rows(); ++r) sq += w(r, c) * w(r, c);
        const double norm = std::sqrt(sq);
        out.value += cfg.group_lasso_lambda * norm;
        // Subgradient 0 at a zero column.
        if (group_lasso_gradient && norm > 0.0)
          for (std::size_t r = 0; r < w.rows(); ++r)
            g(r, c) = cfg.group_lasso_lambda * w(r, c) / norm;
      }
    }
  }
  const auto logits = params.output_logits.values();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out.value += cfg.l2_lambda * logits[k] * logits[k];
    out.gradient.output_logits.values()[k] = 2.0 * cfg.l2_lambda * logits[k];
  }
  return out;
}

struct DataLoss {
  double loss = 0.0;
  ModelParams gradient;
};

DataLoss data_loss(const ModelSpec& spec, const ModelParams& params, const Dataset& dataset,
                   const TrainConfig& cfg, Rng& dropout_rng, bool training) {
  if (dataset.splits().train.empty()) throw ConfigError("training split is empty");
  Tape tape;
  const ForwardVars vars =
      record_forward(tape, spec, params, dataset.normalized_adjacency(), dataset.features(),
                     dropout_rng, {training, cfg.dropout_rate, cfg.order});
  const Var loss = tape.softmax_xent(vars.mixed, dataset.labels(), dataset.splits().train);
  tape.backward(loss);

  DataLoss out;
  out.loss = tape.value(loss)(0, 0);
  out.gradient.weights.resize(vars.weights.size());
  for (std::size_t i = 0; i < vars.weights.size(); ++i)
    for (Var w : vars.weights[i]) out.gradient.weights[i].push_back(tape.grad(w));
  out.gradient.output_logits = tape.grad(vars.output_logits);
  return out;
}

void add_into(ModelParams& acc, const ModelParams& other) {
  for (std::size_t i = 0; i < acc.weights.size(); ++i)
    for (std::size_t p = 0; p < acc.weights[i].size(); ++p) acc.weights[i][p] += other.weights[i][p];
  acc.output_logits += other.output_logits;
}

void descend(ModelParams& params, const ModelParams& gradient, double lr) {
  auto step = [lr](DenseMatrix& w, const DenseMatrix& g) {
    auto wv = w.values();
    const auto gv = g.values();
    for (std::size_t k = 0; k < wv.size(); ++k) wv[k] -= lr * gv[k];
  };
  for (std::size_t i = 0; i < params.weights.size(); ++i)
    for (std::size_t p = 0; p < params.weights[i].size(); ++p)
      step(params.weights[i][p], gradient.weights[i][p]);
  step(params.output_logits, gradient.output_logits);
}

// Block soft-threshold: the proximal map of threshold * ||column||.
void shrink_columns(ModelParams& params, double threshold) {
  for (auto& layer : params.weights) {
    for (DenseMatrix& w : layer) {
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double sq = 0.0;
        for (std::size_t r = 0; r < w.rows(); ++r) sq += w(r, c) * w(r, c);
        const double norm = std::sqrt(sq);
        const double factor = norm > threshold ? 1.0 - threshold / norm : 0.0;
        for (std::size_t r = 0; r < w.rows(); ++r) w(r, c) *= factor;
      }
    }
  }
}

bool finite(const ModelParams& p) {
  for (const auto& layer : p.weights)
    for (const DenseMatrix& w : layer)
      if (!w.all_finite()) return false;
  return p.output_logits.all_finite();
}

}  // namespace

PenaltyValue weight_penalty(const ModelParams& params, const TrainConfig& cfg) {
  return penalty_impl(params, cfg, true);
}

LossEvaluation total_loss(const ModelSpec& spec, const ModelParams& params, const Dataset& dataset,
                          const TrainConfig& cfg, Rng& dropout_rng, bool training) {
  DataLoss data = data_loss(spec, params, dataset, cfg, dropout_rng, training);
  PenaltyValue penalty = weight_penalty(params, cfg);
  LossEvaluation out;
  out.data_loss = data.loss;
  out.penalty = penalty.value;
  out.total = data.loss + penalty.value;
  out.gradient = std::move(data.gradient);
  add_into(out.gradient, penalty.gradient);
  return out;
}

double accuracy(const DenseMatrix& predictions, const Labels& labels,
                std::span<const NodeId> nodes) {
  if (nodes.empty()) throw UndefinedStatistic("accuracy over an empty node set");
  std::size_t correct = 0;
  for (NodeId node : nodes) {
    const auto row = predictions.row(static_cast<std::size_t>(node));
    // max_element returns the first maximum, i.e. the lowest class id.
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[static_cast<std::size_t>(node)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

nlohmann::json TrainResult::summary_json() const {
  return {{"seed", seed},
          {"best_step", best_step},
          {"best_valid_accuracy", best_valid_accuracy},
          {"test_accuracy", test_accuracy},
          {"steps_run", steps_run}};
}

TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg) {
  Rng init_rng(cfg.seed);
  ModelParams params = init_params(spec, init_rng);
  return train_from(spec, std::move(params), dataset, cfg);
}

TrainResult train_from(const ModelSpec& spec, ModelParams params, const Dataset& dataset,
                       const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  params.check_shapes(spec);
  if (dataset.splits().train.empty()) throw ConfigError("training split is empty");
  if (dataset.splits().valid.empty()) throw ConfigError("validation split is empty");

  const bool proximal =
      cfg.penalty == PenaltyKind::group_lasso && cfg.group_lasso_update == GroupLassoUpdate::proximal;
  Rng dropout_rng(cfg.seed ^ 0xD50F0D50F0ULL);
  const auto& labels = dataset.labels();
  const auto& splits = dataset.splits();

  TrainResult result;
  result.seed = cfg.seed;
  double best = -1.0;
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const DenseMatrix probs = model_forward(spec, params, dataset.normalized_adjacency(),
                                            dataset.features(), cfg.order)
                                  .probabilities;
    const double valid = accuracy(probs, labels, splits.valid);
    if (valid > best) {
      best = valid;
      result.best_step = step;
      result.best_valid_accuracy = valid;
      result.best_params = params;
      result.test_accuracy = splits.test.empty() ? 0.0 : accuracy(probs, labels, splits.test);
    } else if (step - result.best_step >= cfg.patience) {
      break;
    }

    DataLoss data = data_loss(spec, params, dataset, cfg, dropout_rng, true);
    PenaltyValue penalty = penalty_impl(params, cfg, !proximal);
    const double total = data.loss + penalty.value;
    if (!std::isfinite(total)) throw DivergenceError(step, "training loss is " + std::to_string(total));

    const double lr = lr_at(step, cfg);
    result.log.push_back({step, lr, total, valid});
    add_into(data.gradient, penalty.gradient);
    descend(params, data.gradient, lr);
    if (proximal) shrink_columns(params, lr * cfg.group_lasso_lambda);
    if (!finite(params)) throw DivergenceError(step, "parameters became non-finite");
    result.steps_run = step + 1;
  }
  result.best_column_norms = weight_column_norms(result.best_params);
  return result;
}

MultiSeedSummary summarize_runs(std::vector<RunOutcome> runs, double keep_fraction) {
  if (runs.empty()) throw ConfigError("no runs to summarise");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ConfigError("keep fraction must lie in (0, 1]");
  }
  std::sort(runs.begin(), runs.end(), [](const RunOutcome& a, const RunOutcome& b) {
    if (a.valid_accuracy != b.valid_accuracy) return a.valid_accuracy > b.valid_accuracy;
    return a.seed < b.seed;
  });
  MultiSeedSummary out;
  out.kept = static_cast<std::size_t>(
      std::ceil(keep_fraction * static_cast<double>(runs.size()) - 1e-9));
  out.kept = std::clamp<std::size_t>(out.kept, 1, runs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < out.kept; ++i) sum += runs[i].test_accuracy;
  out.mean_test_accuracy = sum / static_cast<double>(out.kept);
  double sq = 0.0;
  for (std::size_t i = 0; i < out.kept; ++i) {
    const double d = runs[i].test_accuracy - out.mean_test_accuracy;
    sq += d * d;
  }
  out.stddev_test_accuracy = std::sqrt(sq / static_cast<double>(out.kept));
  out.runs = std::move(runs);
  return out;
}

nlohmann::json MultiSeedSummary::to_json() const {
  nlohmann::json doc;
  doc["kept"] = kept;
  doc["mean_test_accuracy"] = mean_test_accuracy;
  doc["stddev_test_accuracy"] = stddev_test_accuracy;
  doc["runs"] = nlohmann::json::array();
  for (const RunOutcome& r : runs) {
    doc["runs"].push_back({{"seed", r.seed},
                           {"best_step", r.best_step},
                           {"valid_accuracy", r.valid_accuracy},
                           {"test_accuracy", r.test_accuracy}});
  }
  return doc;
}

MultiSeedSummary multi_seed(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg,
                            const MultiSeedOptions& options, std::vector<TrainResult>* results) {
  if (options.runs == 0) throw ConfigError("multi_seed needs at least one run");
  std::vector<TrainResult> all(options.runs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= options.runs) return;
      try {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = cfg.seed + i;
        all[i] = train(spec, dataset, run_cfg);
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, options.runs);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<RunOutcome> outcomes;
  outcomes.reserve(all.size());
  for (const TrainResult& r : all)
    outcomes.push_back({r.seed, r.best_step, r.best_valid_accuracy, r.test_accuracy});
  if (results != nullptr) *results = std::move(all);
  return summarize_runs(std::move(outcomes), options.keep_fraction);
}

}  // namespace mixhop
