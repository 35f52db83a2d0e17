#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "protoshot/data.hpp"
#include "protoshot/encoders.hpp"
#include "protoshot/proto_head.hpp"

namespace protoshot {

struct TrainConfig {
  int ways = 2;
  int shots = 5;
  /// Queries per class; 0 means the same as shots.
  int query = 0;
  int epochs = 10;
  int episodes_per_epoch = 200;
  double lr0 = 1e-3;
  int plateau_patience = 3;
  double plateau_factor = 0.1;
  int early_stop_patience = 5;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
  DistanceKind distance = DistanceKind::SquaredEuclidean;

  int effective_query() const { return query > 0 ? query : shots; }
  /// Throws ConfigError naming the violated field.
  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  /// Moments, one array per parameter entry (empty until the first step).
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t aborted_steps = 0;
};

/// One bias-corrected Adam update of every trainable entry that holds a
/// gradient. Returns false, leaving parameters and state untouched, when any
/// gradient is non-finite; the event is counted in state.aborted_steps and
/// reported on stderr.
bool adam_step(ParamSet& params, AdamState& state, double lr);

struct PlateauDecision {
  bool improved = false;
  bool lr_reduced = false;
  bool stop = false;
};

/// Reduce-on-plateau and early-stop bookkeeping over epoch losses. An epoch
/// improves when its loss is below best - min_delta. After plateau_patience
/// consecutive non-improving epochs the rate is multiplied by plateau_factor
/// and the plateau counter restarts; the early-stop counter keeps running.
class PlateauControl {
 public:
  explicit PlateauControl(const TrainConfig& config);

  PlateauDecision observe(double loss);

  double lr() const { return lr_; }
  int reductions() const { return reductions_; }
  double best() const { return best_; }

 private:
  double lr0_, factor_, min_delta_;
  int plateau_patience_, stop_patience_;
  double lr_;
  double best_;
  int reductions_ = 0;
  int plateau_bad_ = 0;
  int stop_bad_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  bool improved = false;
  bool lr_reduced = false;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  /// "completed" or "early-stop".
  std::string stop_reason;
  int best_epoch = 0;
  double best_loss = 0.0;
};

/// Epoch driver shared by fit() and scripted tests. Epochs are numbered from
/// 1; run_epoch(epoch, lr) returns the epoch's mean loss and on_improved(epoch)
/// fires after every improving epoch.
TrainHistory fit_loop(const TrainConfig& config,
                      const std::function<double(int epoch, double lr)>& run_epoch,
                      const std::function<void(int epoch)>& on_improved = {},
                      const std::function<void(const EpochRecord&)>& on_epoch = {});

struct EpisodeStats {
  double loss = 0.0;
  bool stepped = false;
  std::size_t clamped = 0;
};

/// Forward, backward and one optimizer step on a single episode.
EpisodeStats train_episode(Encoder& encoder, AdamState& state, const Episode& episode,
                           double lr, DistanceKind distance);

/// Forward pass only: the mean query loss of an episode.
double episode_loss_value(const Encoder& encoder, const Episode& episode, DistanceKind distance);

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t steps = 0;
  std::size_t aborted = 0;
  std::size_t clamped = 0;
};

/// Sampler episodes (epoch-1)*E .. epoch*E - 1, one optimizer step each.
EpochStats run_epoch(Encoder& encoder, AdamState& state, const EpisodeSampler& sampler,
                     const TrainConfig& config, int epoch, double lr);

struct FitResult {
  TrainHistory history;
  AdamState optimizer;
};

/// Trains up to config.epochs epochs and leaves the best-loss parameters in
/// encoder. on_best(encoder, epoch) runs after each improving epoch, e.g. to
/// write a checkpoint; on_epoch sees every finished epoch.
FitResult fit(Encoder& encoder, const EpisodeSampler& sampler, const TrainConfig& config,
              const std::function<void(const Encoder&, int epoch)>& on_best = {},
              const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace protoshot
