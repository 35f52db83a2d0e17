#include "protoshot/train.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>

#include "protoshot/errors.hpp"

namespace protoshot {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train." + what); };
  if (ways < 2) fail("ways must be >= 2");
  if (shots < 1) fail("shots must be >= 1");
  if (query < 0) fail("query must be >= 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (episodes_per_epoch < 1) fail("episodes_per_epoch must be >= 1");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) fail("lr0 must be a positive number");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) fail("plateau_factor must lie in (0,1)");
  if (plateau_patience < 1) fail("plateau_patience must be >= 1");
  if (early_stop_patience < 1) fail("early_stop_patience must be >= 1");
  if (!(min_delta >= 0.0)) fail("min_delta must be >= 0");
}

bool adam_step(ParamSet& params, AdamState& state, double lr) {
  auto entries = params.entries();
  for (const auto& p : entries) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    for (const float g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        ++state.aborted_steps;
        std::cerr << "adam: step skipped, non-finite gradient in '" << p.name << "'\n";
        return false;
      }
    }
  }
  if (state.m.size() != entries.size()) {
    state.m.assign(entries.size(), {});
    state.v.assign(entries.size(), {});
    for (std::size_t i = 0; i < entries.size(); ++i) {
      state.m[i].assign(entries[i].tensor.size(), 0.0);
      state.v[i].assign(entries[i].tensor.size(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    const auto grad = p.tensor.grad();
    auto values = p.tensor.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double update = lr * (m[j] / correction1) / (std::sqrt(v[j] / correction2) + state.epsilon);
      if (update != 0.0) values[j] = static_cast<float>(values[j] - update);
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

PlateauControl::PlateauControl(const TrainConfig& config)
    : lr0_(config.lr0),
      factor_(config.plateau_factor),
      min_delta_(config.min_delta),
      plateau_patience_(config.plateau_patience),
      stop_patience_(config.early_stop_patience),
      lr_(config.lr0),
      best_(std::numeric_limits<double>::infinity()) {}

PlateauDecision PlateauControl::observe(double loss) {
  PlateauDecision decision;
  if (loss < best_ - min_delta_) {
    best_ = loss;
    plateau_bad_ = 0;
    stop_bad_ = 0;
    decision.improved = true;
    return decision;
  }
  ++plateau_bad_;
  ++stop_bad_;
  if (plateau_bad_ >= plateau_patience_) {
    ++reductions_;
    lr_ = lr0_ * std::pow(factor_, reductions_);
    plateau_bad_ = 0;
    decision.lr_reduced = true;
  }
  decision.stop = stop_bad_ >= stop_patience_;
  return decision;
}

TrainHistory fit_loop(const TrainConfig& config,
                      const std::function<double(int epoch, double lr)>& run_epoch,
                      const std::function<void(int epoch)>& on_improved,
                      const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  PlateauControl control(config);
  TrainHistory history;
  history.stop_reason = "completed";
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.lr = control.lr();
    const auto start = std::chrono::steady_clock::now();
    record.mean_loss = run_epoch(epoch, record.lr);
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(record.mean_loss)) {
      throw NumericalError("training: epoch " + std::to_string(epoch) + " produced a non-finite loss");
    }
    const PlateauDecision decision = control.observe(record.mean_loss);
    record.improved = decision.improved;
    record.lr_reduced = decision.lr_reduced;
    history.epochs.push_back(record);
    if (decision.improved) {
      history.best_epoch = epoch;
      history.best_loss = record.mean_loss;
      if (on_improved) on_improved(epoch);
    }
    if (on_epoch) on_epoch(record);
    if (decision.stop) {
      history.stop_reason = "early-stop";
      break;
    }
  }
  return history;
}

// ---------------------------------------------------------------------------

namespace {

struct EpisodeGraph {
  Tensor loss;
  std::size_t clamped = 0;
};

EpisodeGraph episode_graph(const Encoder& encoder, const Episode& episode, DistanceKind distance) {
  const Tensor embeddings = encoder.embed(episode_batch(episode));
  const std::size_t n_support = episode.support.size();
  std::vector<std::size_t> support_rows(n_support), query_rows(episode.query.size());
  std::vector<int> support_labels(n_support), query_labels(episode.query.size());
  for (std::size_t i = 0; i < n_support; ++i) {
    support_rows[i] = i;
    support_labels[i] = episode.support[i].class_id;
  }
  for (std::size_t i = 0; i < episode.query.size(); ++i) {
    query_rows[i] = n_support + i;
    query_labels[i] = episode.query[i].class_id;
  }
  const Tensor protos =
      prototype_tensor(select_rows(embeddings, support_rows), support_labels, episode.way);
  const Tensor log_probs =
      class_log_probabilities(select_rows(embeddings, query_rows), protos, distance);
  EpisodeGraph graph;
  graph.loss = episode_loss(log_probs, query_labels, &graph.clamped);
  return graph;
}

}  // namespace

EpisodeStats train_episode(Encoder& encoder, AdamState& state, const Episode& episode, double lr,
                           DistanceKind distance) {
  encoder.params.zero_grad();
  const EpisodeGraph graph = episode_graph(encoder, episode, distance);
  backward(graph.loss);
  EpisodeStats stats;
  stats.loss = graph.loss.item();
  stats.clamped = graph.clamped;
  stats.stepped = adam_step(encoder.params, state, lr);
  encoder.params.zero_grad();
  return stats;
}

double episode_loss_value(const Encoder& encoder, const Episode& episode, DistanceKind distance) {
  NoGradGuard no_grad;
  return episode_graph(encoder, episode, distance).loss.item();
}

EpochStats run_epoch(Encoder& encoder, AdamState& state, const EpisodeSampler& sampler,
                     const TrainConfig& config, int epoch, double lr) {
  if (epoch < 1) throw std::invalid_argument("run_epoch: epochs are numbered from 1");
  EpochStats stats;
  double total = 0.0;
  const auto per_epoch = static_cast<std::uint64_t>(config.episodes_per_epoch);
  const std::uint64_t first = static_cast<std::uint64_t>(epoch - 1) * per_epoch;
  for (std::uint64_t j = 0; j < per_epoch; ++j) {
    Episode episode;
    try {
      episode = sampler.episode(first + j);
    } catch (const DataError& e) {
      throw DataError("epoch " + std::to_string(epoch) + " aborted: " + e.what());
    }
    const EpisodeStats step = train_episode(encoder, state, episode, lr, config.distance);
    total += step.loss;
    stats.clamped += step.clamped;
    if (step.stepped) {
      ++stats.steps;
    } else {
      ++stats.aborted;
    }
  }
  stats.mean_loss = total / static_cast<double>(per_epoch);
  return stats;
}

namespace {

std::vector<std::vector<float>> snapshot(const ParamSet& params) {
  std::vector<std::vector<float>> values;
  for (const auto& p : params.entries()) {
    values.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  }
  return values;
}

void restore(ParamSet& params, const std::vector<std::vector<float>>& values) {
  auto entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto target = entries[i].tensor.mutable_values();
    std::copy(values[i].begin(), values[i].end(), target.begin());
  }
}

}  // namespace

FitResult fit(Encoder& encoder, const EpisodeSampler& sampler, const TrainConfig& config,
              const std::function<void(const Encoder&, int epoch)>& on_best,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (sampler.way() != config.ways || sampler.shot() != config.shots ||
      sampler.query() != config.effective_query()) {
    throw std::invalid_argument("fit: sampler episode shape differs from the train config");
  }
  FitResult result;
  std::vector<std::vector<float>> best = snapshot(encoder.params);
  result.history = fit_loop(
      config,
      [&](int epoch, double lr) {
        return run_epoch(encoder, result.optimizer, sampler, config, epoch, lr).mean_loss;
      },
      [&](int epoch) {
        best = snapshot(encoder.params);
        if (on_best) on_best(encoder, epoch);
      },
      on_epoch);
  restore(encoder.params, best);
  return result;
}

}  // namespace protoshot
