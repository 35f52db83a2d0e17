#include <fstream>

#include "doctest.h"
#include "protoshot/config.hpp"
#include "protoshot/errors.hpp"
#include "test_util.hpp"

using namespace protoshot;
using nlohmann::json;

namespace {

const std::vector<std::string> kDataset = {"covid", "normal", "other", "pneumonia"};

std::string mapped_name(const ResolvedScenario& s, int dataset_id) {
  const int id = s.mapping[static_cast<std::size_t>(dataset_id)];
  return id < 0 ? "" : s.class_names[static_cast<std::size_t>(id)];
}

}  // namespace

TEST_CASE("defaults follow the published training protocol") {
  const RunConfig c;
  CHECK(c.train.epochs == 10);
  CHECK(c.train.episodes_per_epoch == 200);
  CHECK(c.train.lr0 == 0.001);
  CHECK(c.train.plateau_patience == 3);
  CHECK(c.train.early_stop_patience == 5);
  CHECK(c.data.train_fraction == 0.9);
  CHECK(c.explain.threshold == 0.999);
  CHECK(c.eval.episodes == 200);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("json round trip reproduces the config") {
  RunConfig c;
  c.seed = 12;
  c.out = "elsewhere";
  c.data.crop = true;
  c.data.crop_top_fraction = 0.2;
  c.data.luss.enabled = true;
  c.scenario.name = "custom";
  c.scenario.groups = {{"covid", "covid"}, {"normal", "neg"}};
  c.train.shots = 7;
  c.train.distance = DistanceKind::Euclidean;
  c.eval.shots = {5, 10};
  c.encoder.embed_dim = 16;
  c.embed_dim_given = true;
  const json j = run_config_to_json(c);
  const RunConfig back = run_config_from_json(j);
  CHECK(run_config_to_json(back) == j);
  CHECK(back.train.distance == DistanceKind::Euclidean);
  CHECK(back.data.crop_top_fraction == 0.2);
  CHECK(back.embed_dim_given);
  CHECK(back.encoder.embed_dim == 16);
}

TEST_CASE("unknown keys and wrong types are config errors naming the key") {
  try {
    run_config_from_json({{"train", {{"epochz", 3}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("epochz") != std::string::npos);
  }
  try {
    run_config_from_json({{"train", {{"epochs", "ten"}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("epochs") != std::string::npos);
  }
  CHECK_THROWS_AS(run_config_from_json(json::array()), ConfigError);
}

TEST_CASE("validation") {
  RunConfig c;
  c.data.crop = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.data.crop_top_fraction = 0.25;
  CHECK_NOTHROW(c.validate());
  CHECK(c.data.effective_crop() == 0.25);
  c.data.crop = false;
  CHECK(c.data.effective_crop() == 0.0);
  c = RunConfig{};
  c.data.train_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.scenario.name = "5-way";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.data.luss.covid_scores = {4};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.train.plateau_factor = 2.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("load_run_config reads json with comments") {
  const auto dir = testutil::scratch_dir("config");
  {
    std::ofstream(dir / "c.json") << "{\n  // desk run\n  \"seed\": 4,\n  \"train\": {\"ways\": 3}\n}\n";
  }
  const RunConfig c = load_run_config(dir / "c.json");
  CHECK(c.seed == 4);
  CHECK(c.train.ways == 3);
  CHECK(c.train.shots == 5);
  CHECK_THROWS_AS(load_run_config(dir / "absent.json"), ConfigError);
  {
    std::ofstream(dir / "bad.json") << "{ seed: ";
  }
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("scenario presets") {
  ScenarioConfig s;
  s.name = "2-way";
  const ResolvedScenario two = resolve_scenario(s, kDataset);
  CHECK(two.class_names == std::vector<std::string>{"covid", "negative"});
  CHECK(mapped_name(two, 0) == "covid");
  for (int i = 1; i < 4; ++i) CHECK(mapped_name(two, i) == "negative");

  s.name = "3-way";
  const ResolvedScenario three = resolve_scenario(s, kDataset);
  CHECK(three.class_names == std::vector<std::string>{"covid", "normal", "pneumonia"});
  CHECK(three.mapping[2] == -1);

  s.name = "4-way";
  CHECK(resolve_scenario(s, kDataset).class_names == kDataset);
  CHECK_THROWS_AS(resolve_scenario(s, {"covid", "normal", "mystery"}), ConfigError);

  s.name = "identity";
  const ResolvedScenario id = resolve_scenario(s, {"b", "a"});
  CHECK(id.class_names == std::vector<std::string>{"a", "b"});
  CHECK(id.mapping == std::vector<int>{1, 0});
}

TEST_CASE("custom scenario maps every class exactly once") {
  ScenarioConfig s;
  s.name = "custom";
  s.groups = {{"covid", "sick"}, {"pneumonia", "sick"}, {"normal", "well"}, {"other", ""}};
  const ResolvedScenario r = resolve_scenario(s, kDataset);
  CHECK(r.class_names == std::vector<std::string>{"sick", "well"});
  CHECK(mapped_name(r, 3) == "sick");
  CHECK(r.mapping[2] == -1);
  s.groups.erase("normal");
  CHECK_THROWS_AS(resolve_scenario(s, kDataset), ConfigError);
}

TEST_CASE("parse_int_list") {
  CHECK(parse_int_list("5,10, 20", "--shots") == std::vector<int>{5, 10, 20});
  CHECK(parse_int_list("7", "--shots") == std::vector<int>{7});
  CHECK_THROWS_AS(parse_int_list("5,x", "--shots"), ConfigError);
  CHECK_THROWS_AS(parse_int_list("", "--shots"), ConfigError);
}
