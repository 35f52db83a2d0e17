#include <algorithm>
#include <fstream>
#include <set>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "protoshot/checkpoint.hpp"
#include "protoshot/cli.hpp"
#include "protoshot/synthetic.hpp"
#include "test_util.hpp"

using namespace protoshot;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "protoshot");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::set<std::string> manifest_classes(const fs::path& p) {
  std::set<std::string> out;
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream row(line);
    std::string path, cls;
    std::getline(row, path, ',');
    std::getline(row, cls, ',');
    out.insert(cls);
  }
  return out;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

fs::path blob_data(const fs::path& root, int videos, int frames) {
  synth::DatasetSpec spec;
  spec.kind = "blobs";
  spec.classes = 2;
  spec.videos_per_class = videos;
  spec.frames_per_video = frames;
  spec.seed = 4;
  return synth::write_dataset(root / "data", spec);
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli({}).code == cli::kExitConfig);
  CHECK(run_cli({"train", "--bogus"}).code == cli::kExitConfig);
  CHECK(run_cli({"prepare", "--ways", "0"}).code == cli::kExitConfig);
  const auto dir = testutil::scratch_dir("cli_usage");
  const Result r = run_cli({"prepare", "--out", (dir / "run").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("data.manifest") != std::string::npos);
  CHECK(run_cli({"prepare", "--manifest", "x.csv", "--scenario", "9-way", "--out", dir.string()}).code ==
        cli::kExitConfig);
  CHECK(run_cli({"--help"}).code == cli::kExitOk);
}

TEST_CASE("data errors exit with code 2") {
  const auto dir = testutil::scratch_dir("cli_data");
  CHECK(run_cli({"prepare", "--manifest", (dir / "absent.csv").string(), "--out", dir.string()}).code ==
        cli::kExitData);
  CHECK(run_cli({"train", "--out", (dir / "empty").string()}).code == cli::kExitData);
}

TEST_CASE("prepare: scenario regrouping, counts and determinism") {
  const auto dir = testutil::scratch_dir("cli_prepare");
  synth::DatasetSpec spec;
  spec.classes = 4;
  spec.videos_per_class = 3;
  spec.frames_per_video = 4;
  spec.size = 16;
  spec.linear_fraction = 0.3;
  const fs::path manifest = synth::write_dataset(dir / "data", spec);

  const Result two = run_cli({"prepare", "--manifest", manifest.string(), "--scenario", "2-way", "--out",
                              (dir / "two").string(), "--seed", "3"});
  REQUIRE(two.code == 0);
  CHECK(manifest_classes(dir / "two" / "train.csv") == std::set<std::string>{"covid", "negative"});
  CHECK(two.out.find("split  class  videos  frames") != std::string::npos);

  const Result three = run_cli({"prepare", "--manifest", manifest.string(), "--scenario", "3-way", "--out",
                                (dir / "three").string(), "--seed", "3"});
  REQUIRE(three.code == 0);
  auto both = manifest_classes(dir / "three" / "train.csv");
  const auto test = manifest_classes(dir / "three" / "test.csv");
  both.insert(test.begin(), test.end());
  CHECK(both.count("other") == 0);
  CHECK(slurp(dir / "three" / "train.csv").find(",linear,") == std::string::npos);

  REQUIRE(run_cli({"prepare", "--manifest", manifest.string(), "--scenario", "3-way", "--out",
                   (dir / "three_again").string(), "--seed", "3"})
              .code == 0);
  CHECK(slurp(dir / "three" / "train.csv") == slurp(dir / "three_again" / "train.csv"));
  CHECK(slurp(dir / "three" / "test.csv") == slurp(dir / "three_again" / "test.csv"));

  const json echo = json::parse(slurp(dir / "two" / "effective_config.prepare.json"));
  CHECK(echo["train"]["epochs"] == 10);
  CHECK(echo["train"]["episodes_per_epoch"] == 200);
  CHECK(echo["train"]["lr0"] == 0.001);
  CHECK(echo["scenario"]["name"] == "2-way");
}

TEST_CASE("train and eval on separable blobs") {
  const auto dir = testutil::scratch_dir("cli_blobs");
  const fs::path manifest = blob_data(dir, 20, 12);
  const std::string run = (dir / "run").string();
  REQUIRE(run_cli({"prepare", "--manifest", manifest.string(), "--out", run}).code == 0);
  const Result train = run_cli({"train", "--encoder", "frozen-embed", "--ways", "2", "--shots", "5", "--epochs",
                                "10", "--episodes", "100", "--out", run, "--seed", "2"});
  REQUIRE(train.code == 0);
  CHECK(train.out.find("2-way 5-shot, query 5") != std::string::npos);
  const json summary = json::parse(slurp(dir / "run" / "train_summary.json"));
  CHECK(summary["final_loss"].get<double>() < 0.05);
  CHECK(fs::exists(dir / "run" / "history.csv"));

  // Sweep over the whole dataset so every shot count has enough samples.
  json cfg = json::parse(slurp(dir / "run" / "effective_config.train.json"));
  cfg["data"]["test_manifest"] = manifest.string();
  cfg["eval"]["episodes"] = 5;
  write_json(dir / "sweep.json", cfg);
  const Result sweep = run_cli({"eval", "--config", (dir / "sweep.json").string(), "--shots",
                                "5,10,20,30,40,50,75,100"});
  REQUIRE(sweep.code == 0);
  const std::string table = slurp(dir / "run" / "report.txt");
  CHECK(std::count(table.begin(), table.end(), '\n') == 9);
  CHECK(table.rfind("scenario | shots | model | accuracy | precision | recall\n", 0) == 0);
  CHECK(table.find("2-way | 100 | frozen-embed | ") != std::string::npos);
  const std::string jsonl = slurp(dir / "run" / "report.jsonl");
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 8);

  const Result again = run_cli({"eval", "--config", (dir / "sweep.json").string(), "--shots",
                                "5,10,20,30,40,50,75,100"});
  CHECK(again.out == sweep.out);

  // Without --config the run is recovered from the checkpoint.
  const Result plain = run_cli({"eval", "--out", run, "--eval-episodes", "3"});
  CHECK(plain.code == 0);
  CHECK(plain.out.find("2-way | 5 | frozen-embed") != std::string::npos);

  const Result explain = run_cli({"explain", "--out", run});
  CHECK(explain.code == cli::kExitConfig);
  CHECK(explain.err.find("conv-net") != std::string::npos);
}

TEST_CASE("effective config reproduces the run") {
  const auto dir = testutil::scratch_dir("cli_replay");
  const fs::path manifest = blob_data(dir, 6, 8);
  const std::string run = (dir / "a").string();
  REQUIRE(run_cli({"prepare", "--manifest", manifest.string(), "--out", run}).code == 0);
  REQUIRE(run_cli({"train", "--encoder", "frozen-embed", "--epochs", "2", "--episodes", "20", "--out", run,
                   "--seed", "9"})
              .code == 0);
  json cfg = json::parse(slurp(dir / "a" / "effective_config.train.json"));
  cfg["data"]["train_manifest"] = (dir / "a" / "train.csv").string();
  cfg["out"] = (dir / "b").string();
  write_json(dir / "replay.json", cfg);
  REQUIRE(run_cli({"train", "--config", (dir / "replay.json").string()}).code == 0);
  const Checkpoint a = read_checkpoint(dir / "a" / "model.ckpt");
  const Checkpoint b = read_checkpoint(dir / "b" / "model.ckpt");
  CHECK(a.encoder.config == b.encoder.config);
  for (std::size_t i = 0; i < a.encoder.params.size(); ++i) {
    const auto x = a.encoder.params.entries()[i].tensor.values();
    const auto y = b.encoder.params.entries()[i].tensor.values();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST_CASE("eval rejects a checkpoint/config mismatch") {
  const auto dir = testutil::scratch_dir("cli_mismatch");
  synth::DatasetSpec spec;
  spec.classes = 2;
  spec.videos_per_class = 3;
  spec.frames_per_video = 6;
  spec.size = 16;
  const fs::path manifest = synth::write_dataset(dir / "data", spec);
  const json cfg = {{"out", (dir / "run").string()},
                    {"data", {{"manifest", manifest.string()}, {"image_size", 16}, {"train_fraction", 0.6}}},
                    {"encoder", {{"conv_blocks", 2}, {"channels_per_block", 4}, {"embed_dim", 8}}},
                    {"train", {{"shots", 2}, {"epochs", 1}, {"episodes_per_epoch", 3}}}};
  write_json(dir / "c.json", cfg);
  REQUIRE(run_cli({"prepare", "--config", (dir / "c.json").string()}).code == 0);
  REQUIRE(run_cli({"train", "--config", (dir / "c.json").string()}).code == 0);
  json other = cfg;
  other["encoder"]["channels_per_block"] = 6;
  write_json(dir / "other.json", other);
  const Result r = run_cli({"eval", "--config", (dir / "other.json").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("checkpoint/config mismatch: encoder.channels_per_block") != std::string::npos);
}

TEST_CASE("explain writes one overlay and grid per selected query") {
  const auto dir = testutil::scratch_dir("cli_explain");
  synth::DatasetSpec spec;
  spec.classes = 2;
  spec.videos_per_class = 4;
  spec.frames_per_video = 8;
  spec.size = 16;
  const fs::path manifest = synth::write_dataset(dir / "data", spec);
  json cfg = {{"out", (dir / "run").string()},
              {"data", {{"manifest", manifest.string()}, {"image_size", 16}, {"train_fraction", 0.5}}},
              {"encoder", {{"conv_blocks", 2}, {"channels_per_block", 4}, {"embed_dim", 8}}},
              {"train", {{"shots", 2}, {"epochs", 2}, {"episodes_per_epoch", 20}, {"lr0", 0.01}}},
              {"explain", {{"threshold", 0.9}, {"episodes", 4}}}};
  write_json(dir / "c.json", cfg);
  REQUIRE(run_cli({"prepare", "--config", (dir / "c.json").string()}).code == 0);
  REQUIRE(run_cli({"train", "--config", (dir / "c.json").string()}).code == 0);
  const Result r = run_cli({"explain", "--config", (dir / "c.json").string()});
  REQUIRE(r.code == 0);
  std::size_t png = 0, grids = 0;
  for (const auto& e : fs::directory_iterator(dir / "run" / "explain")) {
    if (e.path().extension() == ".png") ++png;
    if (e.path().extension() == ".json") {
      ++grids;
      const json g = json::parse(slurp(e.path()));
      CHECK(g["height"] == 16);
      CHECK(g["target_class"] == g["predicted_class"]);
    }
  }
  CHECK(png == grids);
  if (png == 0) {
    CHECK(r.out.find("notice") != std::string::npos);
  } else {
    CHECK(r.out.find("wrote " + std::to_string(png) + " saliency overlays") != std::string::npos);
  }
  const Result first = r;
  const Result second = run_cli({"explain", "--config", (dir / "c.json").string()});
  CHECK(second.out == first.out);

  cfg["explain"]["max_images"] = 0;
  write_json(dir / "none.json", cfg);
  const Result none = run_cli({"explain", "--config", (dir / "none.json").string()});
  CHECK(none.code == 0);
  CHECK(none.out.find("notice") != std::string::npos);
  CHECK(fs::is_empty(dir / "run" / "explain"));
}
