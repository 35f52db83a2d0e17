#include "protoshot/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "protoshot/checkpoint.hpp"
#include "protoshot/errors.hpp"

namespace protoshot {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(section + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& target, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(section + "." + key + ": value " + j.at(key).dump() + " has the wrong type");
  }
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (out.empty()) fail("out: output directory must not be empty");
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
    fail("data.train_fraction must lie in (0,1)");
  }
  if (data.crop) {
    if (!data.crop_top_fraction) fail("data.crop_top_fraction is required when data.crop is enabled");
    if (!(*data.crop_top_fraction >= 0.0 && *data.crop_top_fraction < 1.0)) {
      fail("data.crop_top_fraction must lie in [0,1)");
    }
  }
  for (const auto* scores : {&data.luss.normal_scores, &data.luss.covid_scores}) {
    for (const int s : *scores) {
      if (s < 0 || s > 3) fail("data.luss scores must lie in 0..3, got " + std::to_string(s));
    }
  }
  if (data.image_size < 1) fail("data.image_size must be >= 1");
  if (data.channels != 1 && data.channels != 3) fail("data.channels must be 1 or 3");
  static const char* presets[] = {"identity", "2-way", "3-way", "4-way", "custom"};
  if (std::none_of(std::begin(presets), std::end(presets),
                   [&](const char* p) { return scenario.name == p; })) {
    fail("scenario.name '" + scenario.name + "' is not one of identity, 2-way, 3-way, 4-way, custom");
  }
  if (scenario.name == "custom" && scenario.groups.empty()) fail("scenario.groups is required for custom");
  train.validate();
  for (const int s : eval.shots) {
    if (s < 1) fail("eval.shots entries must be >= 1");
  }
  if (eval.episodes < 1) fail("eval.episodes must be >= 1");
  if (!(explain.threshold >= 0.0 && explain.threshold < 1.0)) fail("explain.threshold must lie in [0,1)");
  if (!(explain.alpha >= 0.0 && explain.alpha <= 1.0)) fail("explain.alpha must lie in [0,1]");
  if (explain.episodes < 1) fail("explain.episodes must be >= 1");
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  require_keys(j, "config", {"seed", "out", "data", "scenario", "encoder", "train", "eval", "explain"});
  read(j, "seed", c.seed, "config");
  read(j, "out", c.out, "config");
  if (j.contains("data")) {
    const json& d = j.at("data");
    require_keys(d, "data", {"manifest", "train_manifest", "test_manifest", "train_fraction", "convex_only",
                             "luss", "crop", "crop_top_fraction", "augment", "augment_test", "image_size",
                             "channels"});
    read(d, "manifest", c.data.manifest, "data");
    read(d, "train_manifest", c.data.train_manifest, "data");
    read(d, "test_manifest", c.data.test_manifest, "data");
    read(d, "train_fraction", c.data.train_fraction, "data");
    read(d, "convex_only", c.data.convex_only, "data");
    read(d, "crop", c.data.crop, "data");
    if (d.contains("crop_top_fraction") && !d.at("crop_top_fraction").is_null()) {
      double f = 0.0;
      read(d, "crop_top_fraction", f, "data");
      c.data.crop_top_fraction = f;
    }
    read(d, "augment", c.data.augment, "data");
    read(d, "augment_test", c.data.augment_test, "data");
    read(d, "image_size", c.data.image_size, "data");
    read(d, "channels", c.data.channels, "data");
    if (d.contains("luss")) {
      const json& l = d.at("luss");
      require_keys(l, "data.luss", {"enabled", "normal_class", "covid_class", "normal_scores", "covid_scores"});
      read(l, "enabled", c.data.luss.enabled, "data.luss");
      read(l, "normal_class", c.data.luss.normal_class, "data.luss");
      read(l, "covid_class", c.data.luss.covid_class, "data.luss");
      read(l, "normal_scores", c.data.luss.normal_scores, "data.luss");
      read(l, "covid_scores", c.data.luss.covid_scores, "data.luss");
    }
  }
  if (j.contains("scenario")) {
    const json& s = j.at("scenario");
    require_keys(s, "scenario", {"name", "groups", "focus_class"});
    read(s, "name", c.scenario.name, "scenario");
    read(s, "groups", c.scenario.groups, "scenario");
    read(s, "focus_class", c.scenario.focus_class, "scenario");
  }
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    require_keys(e, "encoder", {"archetype", "input_channels", "input_size", "embed_dim", "conv_blocks",
                                "channels_per_block", "frozen_blocks", "frozen_dim"});
    c.encoder = encoder_config_from_json(e);
    c.embed_dim_given = e.contains("embed_dim");
    c.frozen_dim_given = e.contains("frozen_dim");
    // Input geometry always follows the data section.
    if (e.contains("input_size")) c.data.image_size = c.encoder.input_size;
    if (e.contains("input_channels")) c.data.channels = c.encoder.input_channels;
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    require_keys(t, "train", {"ways", "shots", "query", "epochs", "episodes_per_epoch", "lr0",
                              "plateau_patience", "plateau_factor", "early_stop_patience", "min_delta",
                              "distance"});
    read(t, "ways", c.train.ways, "train");
    read(t, "shots", c.train.shots, "train");
    read(t, "query", c.train.query, "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "episodes_per_epoch", c.train.episodes_per_epoch, "train");
    read(t, "lr0", c.train.lr0, "train");
    read(t, "plateau_patience", c.train.plateau_patience, "train");
    read(t, "plateau_factor", c.train.plateau_factor, "train");
    read(t, "early_stop_patience", c.train.early_stop_patience, "train");
    read(t, "min_delta", c.train.min_delta, "train");
    if (t.contains("distance")) {
      std::string name;
      read(t, "distance", name, "train");
      c.train.distance = parse_distance(name);
    }
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    require_keys(e, "eval", {"episodes", "shots", "model_name"});
    read(e, "episodes", c.eval.episodes, "eval");
    read(e, "shots", c.eval.shots, "eval");
    read(e, "model_name", c.eval.model_name, "eval");
  }
  if (j.contains("explain")) {
    const json& x = j.at("explain");
    require_keys(x, "explain", {"threshold", "alpha", "episodes", "max_images"});
    read(x, "threshold", c.explain.threshold, "explain");
    read(x, "alpha", c.explain.alpha, "explain");
    read(x, "episodes", c.explain.episodes, "explain");
    read(x, "max_images", c.explain.max_images, "explain");
  }
  c.train.seed = c.seed;
  c.encoder.input_size = c.data.image_size;
  c.encoder.input_channels = c.data.channels;
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["data"] = {{"manifest", c.data.manifest},
               {"train_manifest", c.data.train_manifest},
               {"test_manifest", c.data.test_manifest},
               {"train_fraction", c.data.train_fraction},
               {"convex_only", c.data.convex_only},
               {"luss",
                {{"enabled", c.data.luss.enabled},
                 {"normal_class", c.data.luss.normal_class},
                 {"covid_class", c.data.luss.covid_class},
                 {"normal_scores", c.data.luss.normal_scores},
                 {"covid_scores", c.data.luss.covid_scores}}},
               {"crop", c.data.crop},
               {"crop_top_fraction", c.data.crop_top_fraction ? json(*c.data.crop_top_fraction) : json(nullptr)},
               {"augment", c.data.augment},
               {"augment_test", c.data.augment_test},
               {"image_size", c.data.image_size},
               {"channels", c.data.channels}};
  j["scenario"] = {{"name", c.scenario.name},
                   {"groups", c.scenario.groups},
                   {"focus_class", c.scenario.focus_class}};
  json encoder = encoder_config_to_json(c.encoder);
  if (!c.embed_dim_given) encoder.erase("embed_dim");
  if (!c.frozen_dim_given) encoder.erase("frozen_dim");
  j["encoder"] = encoder;
  j["train"] = {{"ways", c.train.ways},
                {"shots", c.train.shots},
                {"query", c.train.query},
                {"epochs", c.train.epochs},
                {"episodes_per_epoch", c.train.episodes_per_epoch},
                {"lr0", c.train.lr0},
                {"plateau_patience", c.train.plateau_patience},
                {"plateau_factor", c.train.plateau_factor},
                {"early_stop_patience", c.train.early_stop_patience},
                {"min_delta", c.train.min_delta},
                {"distance", to_string(c.train.distance)}};
  j["eval"] = {{"episodes", c.eval.episodes}, {"shots", c.eval.shots}, {"model_name", c.eval.model_name}};
  j["explain"] = {{"threshold", c.explain.threshold},
                  {"alpha", c.explain.alpha},
                  {"episodes", c.explain.episodes},
                  {"max_images", c.explain.max_images}};
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

ResolvedScenario resolve_scenario(const ScenarioConfig& scenario,
                                  const std::vector<std::string>& dataset_classes) {
  std::map<std::string, std::string> target;
  const std::string& name = scenario.name;
  auto known = [&](std::initializer_list<const char*> allowed, const std::string& cls) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return cls == a; })) {
      throw ConfigError("scenario " + name + ": dataset class '" + cls + "' has no place in this scenario");
    }
  };
  for (const auto& cls : dataset_classes) {
    if (name == "identity") {
      target[cls] = cls;
    } else if (name == "2-way") {
      target[cls] = cls == "covid" ? "covid" : "negative";
    } else if (name == "3-way") {
      known({"covid", "normal", "pneumonia", "other"}, cls);
      target[cls] = cls == "other" ? "" : cls;
    } else if (name == "4-way") {
      known({"covid", "normal", "pneumonia", "other"}, cls);
      target[cls] = cls;
    } else if (name == "custom") {
      const auto it = scenario.groups.find(cls);
      if (it == scenario.groups.end()) {
        throw ConfigError("scenario.groups: dataset class '" + cls + "' is not mapped");
      }
      target[cls] = it->second;
    } else {
      throw ConfigError("scenario.name '" + name + "' is not a known preset");
    }
  }
  std::set<std::string> names;
  for (const auto& [cls, t] : target) {
    if (!t.empty()) names.insert(t);
  }
  ResolvedScenario resolved;
  resolved.class_names.assign(names.begin(), names.end());
  for (const auto& cls : dataset_classes) {
    const std::string& t = target.at(cls);
    if (t.empty()) {
      resolved.mapping.push_back(-1);
    } else {
      resolved.mapping.push_back(static_cast<int>(
          std::lower_bound(resolved.class_names.begin(), resolved.class_names.end(), t) -
          resolved.class_names.begin()));
    }
  }
  return resolved;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& field) {
  std::vector<int> values;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      values.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(field + ": '" + item + "' is not an integer");
    }
  }
  if (values.empty()) throw ConfigError(field + ": empty list");
  return values;
}

}  // namespace protoshot
