#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoshot/data.hpp"
#include "protoshot/encoders.hpp"
#include "protoshot/proto_head.hpp"

namespace protoshot {

/// K x K counts; rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  /// Throws std::invalid_argument on an id outside [0,K).
  void accumulate(int truth, int predicted);
  void merge(const ConfusionMatrix& other);

  int classes() const { return classes_; }
  std::size_t at(int truth, int predicted) const;
  std::size_t total() const { return total_; }
  std::size_t trace() const;
  std::size_t row_sum(int truth) const;
  std::size_t column_sum(int predicted) const;

 private:
  int classes_;
  std::size_t total_ = 0;
  std::vector<std::size_t> counts_;
};

/// Precision or recall is empty when its denominator is zero.
struct Metrics {
  double accuracy = 0.0;
  std::vector<std::optional<double>> precision;
  std::vector<std::optional<double>> recall;
};

/// Throws std::invalid_argument on an empty matrix.
Metrics metrics_from_cm(const ConfusionMatrix& cm);

struct EvalReport {
  int way = 0;
  int shots = 0;
  std::string model;
  std::size_t episodes = 0;
  double accuracy = 0.0;
  std::vector<std::optional<double>> precision;
  std::vector<std::optional<double>> recall;
  std::vector<std::string> class_names;
  /// Class whose precision and recall appear in the text table.
  int focus_class = 0;
  std::vector<std::vector<std::size_t>> confusion;
  /// Per-episode query accuracy, in episode order.
  std::vector<double> episode_accuracy;
};

/// One classified query of an evaluation episode.
struct QueryOutcome {
  std::uint64_t episode = 0;
  std::size_t query_index = 0;
  int truth = 0;
  int predicted = 0;
  std::vector<double> probabilities;
  std::size_t source = 0;

  double confidence() const { return probabilities[static_cast<std::size_t>(predicted)]; }
};

struct EvalOptions {
  std::size_t episodes = 200;
  /// First sampler index; training and evaluation streams stay apart when
  /// they share a seed.
  std::uint64_t first_episode = 0;
  DistanceKind distance = DistanceKind::SquaredEuclidean;
  std::string model;
  std::vector<std::string> class_names;
  int focus_class = 0;
};

/// Runs episodes first_episode .. first_episode + episodes - 1: support
/// embeddings build prototypes, every query is classified, and all queries are
/// pooled into one confusion matrix. No gradient is recorded and parameters
/// are never written. Throws std::invalid_argument when episodes is zero.
EvalReport evaluate(const Encoder& encoder, const EpisodeSampler& sampler, const EvalOptions& options,
                    std::vector<QueryOutcome>* outcomes = nullptr);

/// Rounds half-up at the fourth decimal of the shortest decimal form of value.
std::string format_fixed4(double value);

/// Header plus one `scenario | shots | model | accuracy | precision | recall`
/// line per report, precision and recall taken from the focus class.
std::string format_report(std::span<const EvalReport> reports);

nlohmann::json report_to_json(const EvalReport& report);
/// One JSON object per line.
void write_report_jsonl(const std::filesystem::path& path, std::span<const EvalReport> reports);

}  // namespace protoshot
