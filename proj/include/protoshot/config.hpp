#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoshot/encoders.hpp"
#include "protoshot/train.hpp"

namespace protoshot {

struct LussFilterConfig {
  bool enabled = false;
  std::string normal_class = "normal";
  std::string covid_class = "covid";
  std::set<int> normal_scores = {0};
  std::set<int> covid_scores = {2, 3};
};

struct DataConfig {
  /// Source manifest read by prepare.
  std::string manifest;
  /// Split manifests; empty means <out>/train.csv and <out>/test.csv.
  std::string train_manifest;
  std::string test_manifest;
  double train_fraction = 0.9;
  bool convex_only = true;
  LussFilterConfig luss;
  /// Cropping needs an explicit fraction once enabled.
  bool crop = false;
  std::optional<double> crop_top_fraction;
  bool augment = true;
  bool augment_test = false;
  int image_size = 64;
  int channels = 1;

  double effective_crop() const { return crop ? crop_top_fraction.value_or(0.0) : 0.0; }
};

/// Dataset-to-scenario class grouping. Presets: "identity", "2-way" (covid
/// against a merged negative class), "3-way" (covid, normal, pneumonia; other
/// dropped), "4-way" (covid, normal, pneumonia, other) and "custom", which
/// uses groups verbatim (an empty target drops the class).
struct ScenarioConfig {
  std::string name = "identity";
  std::map<std::string, std::string> groups;
  /// Class whose precision and recall fill the text report.
  std::string focus_class = "covid";
};

struct EvalConfig {
  std::size_t episodes = 200;
  /// Shot counts to sweep; empty means the training shot count.
  std::vector<int> shots;
  /// Name in the model column; empty means the encoder archetype.
  std::string model_name;
};

struct ExplainConfig {
  double threshold = 0.999;
  double alpha = 0.5;
  std::size_t episodes = 20;
  std::size_t max_images = 32;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";
  DataConfig data;
  ScenarioConfig scenario;
  EncoderConfig encoder;
  /// Whether encoder.embed_dim was given; frozen-embed otherwise uses K.
  bool embed_dim_given = false;
  /// Whether encoder.frozen_dim was given; otherwise it follows the data.
  bool frozen_dim_given = false;
  TrainConfig train;
  EvalConfig eval;
  ExplainConfig explain;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Unknown keys and ill-typed values throw ConfigError naming the key.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

struct ResolvedScenario {
  /// Sorted scenario class names; ids index into them.
  std::vector<std::string> class_names;
  /// Dataset class id -> scenario class id, or -1 when dropped.
  std::vector<int> mapping;
};

/// Throws ConfigError when a dataset class has no target or a preset does not
/// recognise a class name.
ResolvedScenario resolve_scenario(const ScenarioConfig& scenario,
                                  const std::vector<std::string>& dataset_classes);

/// "5,10,20" -> {5,10,20}. Throws ConfigError.
std::vector<int> parse_int_list(const std::string& text, const std::string& field);

}  // namespace protoshot
