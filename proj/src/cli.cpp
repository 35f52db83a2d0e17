#include "protoshot/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "protoshot/checkpoint.hpp"
#include "protoshot/data.hpp"
#include "protoshot/errors.hpp"
#include "protoshot/eval.hpp"
#include "protoshot/explain.hpp"
#include "protoshot/train.hpp"

namespace protoshot::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Sampler seeds derive from the run seed through fixed fork indices so that
// training, evaluation and explanation streams never coincide.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr std::uint64_t kSplitStream = 3;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t sub = 0) {
  return RandomStream(seed).fork(stream).fork(sub).seed();
}

fs::path out_dir(const RunConfig& config) {
  const fs::path dir(config.out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

// One echo per command, e.g. effective_config.train.json.
void write_effective_config(const RunConfig& config, const std::string& command) {
  write_text(out_dir(config) / ("effective_config." + command + ".json"),
             run_config_to_json(config).dump(2) + "\n");
}

fs::path split_path(const RunConfig& config, bool train) {
  const std::string& given = train ? config.data.train_manifest : config.data.test_manifest;
  if (!given.empty()) return given;
  return fs::path(config.out) / (train ? "train.csv" : "test.csv");
}

Manifest load_split(const RunConfig& config, bool train) {
  const fs::path path = split_path(config, train);
  if (!fs::exists(path)) {
    throw DataError("missing " + std::string(train ? "training" : "test") + " manifest " + path.string() +
                    " (run prepare first or set data." + (train ? "train" : "test") + "_manifest)");
  }
  return load_manifest(path);
}

struct LoadedPool {
  SamplePool pool;
  std::size_t feature_dim = 0;
};

LoadedPool load_pool(const Manifest& manifest, const RunConfig& config, bool augment) {
  const bool frozen = config.encoder.archetype == Archetype::FrozenEmbed;
  LoadedPool loaded{SamplePool(static_cast<int>(manifest.class_names.size())), 0};
  auto add = [&](Tensor t, int class_id, std::size_t source) {
    if (frozen && t.rank() != 1) t = reshape(t, {t.size()});
    loaded.feature_dim = t.size();
    loaded.pool.add(std::move(t), class_id, source);
  };
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const SampleRecord& r = manifest.records[i];
    const fs::path path = manifest.resolve(r);
    if (path.extension() == ".vec") {
      if (!frozen) throw DataError(path.string() + ": feature vectors need the frozen-embed encoder");
      add(read_feature_vector(path), r.class_id, i);
      continue;
    }
    const Tensor image =
        preprocess_file(path, config.data.image_size, config.data.effective_crop(), config.data.channels);
    if (augment) {
      for (int t = 0; t < 4; ++t) add(rotate90(image, t), r.class_id, i);
    } else {
      add(image, r.class_id, i);
    }
  }
  if (manifest.records.empty()) throw DataError("manifest has no records");
  loaded.pool.set_class_names(manifest.class_names);
  return loaded;
}

/// Encoder geometry implied by the config and the loaded inputs.
EncoderConfig effective_encoder(const RunConfig& config, std::size_t feature_dim) {
  EncoderConfig e = config.encoder;
  e.input_size = config.data.image_size;
  e.input_channels = config.data.channels;
  if (e.archetype == Archetype::FrozenEmbed) {
    if (config.frozen_dim_given && static_cast<std::size_t>(e.frozen_dim) != feature_dim) {
      throw ConfigError("encoder.frozen_dim is " + std::to_string(e.frozen_dim) +
                        " but the inputs have " + std::to_string(feature_dim) + " features");
    }
    e.frozen_dim = static_cast<int>(feature_dim);
    if (!config.embed_dim_given) e.embed_dim = config.train.ways;
  }
  e.validate();
  return e;
}

void check_ways(const RunConfig& config, const Manifest& manifest, const std::string& what) {
  if (static_cast<int>(manifest.class_names.size()) != config.train.ways) {
    std::string names;
    for (const auto& n : manifest.class_names) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("train.ways is " + std::to_string(config.train.ways) + " but the " + what +
                      " manifest has " + std::to_string(manifest.class_names.size()) + " classes (" +
                      names + ")");
  }
}

int focus_index(const RunConfig& config, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == config.scenario.focus_class) return static_cast<int>(i);
  }
  return 0;
}

struct SplitCounts {
  std::map<int, std::set<std::string>> videos;
  std::map<int, std::size_t> frames;
};

SplitCounts count(const std::vector<SampleRecord>& records) {
  SplitCounts c;
  for (const auto& r : records) {
    c.videos[r.class_id].insert(r.video_id);
    ++c.frames[r.class_id];
  }
  return c;
}

std::string relative_to(const fs::path& target, const fs::path& base) {
  const fs::path rel = fs::absolute(target).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal());
  return rel.empty() ? fs::absolute(target).string() : rel.generic_string();
}

Checkpoint load_checked_checkpoint(const RunConfig& config, const fs::path& path,
                                   const EncoderConfig& expected) {
  Checkpoint ck = read_checkpoint(path);
  const std::string field = first_mismatched_field(ck.encoder.config, expected);
  if (!field.empty()) {
    const json a = encoder_config_to_json(ck.encoder.config).at(field);
    const json b = encoder_config_to_json(expected).at(field);
    throw ConfigError("checkpoint/config mismatch: encoder." + field + " is " + a.dump() +
                      " in the checkpoint but " + b.dump() + " in the config");
  }
  if (ck.config.contains("train") && ck.config["train"].contains("ways") &&
      ck.config["train"]["ways"] != config.train.ways) {
    throw ConfigError("checkpoint/config mismatch: train.ways is " + ck.config["train"]["ways"].dump() +
                      " in the checkpoint but " + std::to_string(config.train.ways) + " in the config");
  }
  return ck;
}

std::vector<int> eval_shots(const RunConfig& config) {
  return config.eval.shots.empty() ? std::vector<int>{config.train.shots} : config.eval.shots;
}

std::string model_name(const RunConfig& config) {
  return config.eval.model_name.empty() ? to_string(config.encoder.archetype) : config.eval.model_name;
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_prepare(const RunConfig& config, std::ostream& out, std::ostream& err) {
  config.validate();
  if (config.data.manifest.empty()) throw ConfigError("data.manifest is required for prepare");
  const Manifest source = load_manifest(config.data.manifest);
  const fs::path dir = out_dir(config);
  out << "manifest: " << source.records.size() << " frames, " << source.class_names.size() << " classes\n";

  std::vector<SampleRecord> records = source.records;
  if (config.data.convex_only) {
    const std::size_t before = records.size();
    records = filter_convex(records);
    out << "convex filter: removed " << before - records.size() << " linear-probe frames\n";
  }
  if (config.data.luss.enabled) {
    const int normal = source.class_index(config.data.luss.normal_class);
    const int covid = source.class_index(config.data.luss.covid_class);
    if (normal < 0) err << "notice: luss filter: no class named '" << config.data.luss.normal_class << "'\n";
    if (covid < 0) err << "notice: luss filter: no class named '" << config.data.luss.covid_class << "'\n";
    LussFilterResult filtered =
        filter_luss(records, normal, covid, config.data.luss.normal_scores, config.data.luss.covid_scores);
    out << "luss filter: removed " << filtered.rejected_score << " frames outside the score sets and "
        << filtered.missing_score << " frames without a score\n";
    records = std::move(filtered.records);
  }

  const ResolvedScenario scenario = resolve_scenario(config.scenario, source.class_names);
  std::vector<SampleRecord> mapped;
  for (auto r : records) {
    const int id = scenario.mapping[static_cast<std::size_t>(r.class_id)];
    if (id < 0) continue;
    r.class_id = id;
    mapped.push_back(std::move(r));
  }
  const SplitCounts all = count(mapped);
  for (int k = 0; k < static_cast<int>(scenario.class_names.size()); ++k) {
    if (!all.frames.count(k)) {
      throw DataError("class '" + scenario.class_names[k] + "' is empty after filtering");
    }
  }

  SplitPair split = split_by_video(mapped, config.data.train_fraction, stream_seed(config.seed, kSplitStream));
  for (const auto& w : split.warnings) err << "warning: " << w << '\n';
  const SplitCounts train = count(split.train), test = count(split.test);
  out << "split  class  videos  frames\n";
  for (const auto& [name, counts] : {std::pair{"train", &train}, std::pair{"test", &test}}) {
    for (int k = 0; k < static_cast<int>(scenario.class_names.size()); ++k) {
      const std::size_t videos = counts->videos.count(k) ? counts->videos.at(k).size() : 0;
      const std::size_t frames = counts->frames.count(k) ? counts->frames.at(k) : 0;
      out << name << "  " << scenario.class_names[k] << "  " << videos << "  " << frames << '\n';
      if (std::string(name) == "train" && frames == 0) {
        throw DataError("class '" + scenario.class_names[k] + "' has no training frames");
      }
    }
  }

  auto write_split = [&](const std::vector<SampleRecord>& rows, const char* file) {
    Manifest m;
    m.class_names = scenario.class_names;
    for (auto r : rows) {
      r.image_path = relative_to(source.resolve(r), dir);
      m.records.push_back(std::move(r));
    }
    write_manifest(dir / file, m);
  };
  write_split(split.train, "train.csv");
  write_split(split.test, "test.csv");
  write_effective_config(config, "prepare");
  out << "wrote " << (dir / "train.csv").string() << " and " << (dir / "test.csv").string() << '\n';
}

void cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  config.validate();
  const Manifest manifest = load_split(config, true);
  check_ways(config, manifest, "training");
  const bool frozen = config.encoder.archetype == Archetype::FrozenEmbed;
  const LoadedPool data = load_pool(manifest, config, config.data.augment && !frozen);
  if (config.data.augment && frozen) {
    err << "notice: rotation augmentation is skipped for frozen-embed inputs\n";
  }
  RunConfig effective = config;
  effective.encoder = effective_encoder(config, data.feature_dim);
  const fs::path dir = out_dir(config);
  write_effective_config(effective, "train");

  Encoder encoder = Encoder::create(effective.encoder, config.seed);
  const EpisodeSampler sampler(data.pool, config.train.ways, config.train.shots,
                               config.train.effective_query(), stream_seed(config.seed, kTrainStream));
  out << "training " << to_string(effective.encoder.archetype) << " on " << manifest.records.size()
      << " frames (" << data.pool.size() << " inputs), " << config.train.ways << "-way "
      << config.train.shots << "-shot, query " << config.train.effective_query() << '\n';

  Checkpoint ck;
  ck.seed = config.seed;
  ck.config = run_config_to_json(effective);
  const fs::path ckpt = dir / "model.ckpt";
  const FitResult result = fit(
      encoder, sampler, config.train,
      [&](const Encoder& current, int) {
        ck.encoder = Encoder{current.config, current.params.clone()};
        write_checkpoint(ckpt, ck);
      },
      [&](const EpochRecord& r) {
        char line[160];
        std::snprintf(line, sizeof line, "epoch %d/%d  loss %.6f  lr %.3g  %.1fs%s%s\n", r.epoch,
                      config.train.epochs, r.mean_loss, r.lr, r.seconds, r.improved ? "  best" : "",
                      r.lr_reduced ? "  lr-reduced" : "");
        out << line << std::flush;
      });
  ck.encoder = encoder;
  write_checkpoint(ckpt, ck);

  std::string history = "epoch,mean_loss,lr,seconds,improved,lr_reduced\n";
  for (const auto& r : result.history.epochs) {
    char line[160];
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.3f,%d,%d\n", r.epoch, r.mean_loss, r.lr, r.seconds,
                  r.improved ? 1 : 0, r.lr_reduced ? 1 : 0);
    history += line;
  }
  write_text(dir / "history.csv", history);
  const json summary = {{"stop_reason", result.history.stop_reason},
                        {"epochs_run", result.history.epochs.size()},
                        {"best_epoch", result.history.best_epoch},
                        {"best_loss", result.history.best_loss},
                        {"final_loss", result.history.epochs.back().mean_loss},
                        {"aborted_steps", result.optimizer.aborted_steps},
                        {"optimizer_steps", result.optimizer.step}};
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  out << "stop: " << result.history.stop_reason << ", best epoch " << result.history.best_epoch
      << " (loss " << result.history.best_loss << ")\n";
  out << "wrote " << ckpt.string() << '\n';
}

void cmd_eval(const RunConfig& config, const fs::path& checkpoint, std::ostream& out, std::ostream&) {
  config.validate();
  const Manifest manifest = load_split(config, false);
  check_ways(config, manifest, "test");
  const bool frozen = config.encoder.archetype == Archetype::FrozenEmbed;
  const LoadedPool data = load_pool(manifest, config, config.data.augment_test && !frozen);
  RunConfig effective = config;
  effective.encoder = effective_encoder(config, data.feature_dim);
  const fs::path dir = out_dir(config);
  const fs::path path = checkpoint.empty() ? dir / "model.ckpt" : checkpoint;
  const Checkpoint ck = load_checked_checkpoint(config, path, effective.encoder);
  write_effective_config(effective, "eval");

  std::vector<EvalReport> reports;
  for (const int shot : eval_shots(config)) {
    const int query = config.train.query > 0 ? config.train.query : shot;
    const EpisodeSampler sampler(data.pool, config.train.ways, shot, query,
                                 stream_seed(config.seed, kEvalStream, static_cast<std::uint64_t>(shot)));
    EvalOptions options;
    options.episodes = config.eval.episodes;
    options.distance = config.train.distance;
    options.model = model_name(config);
    options.class_names = manifest.class_names;
    options.focus_class = focus_index(config, manifest.class_names);
    reports.push_back(evaluate(ck.encoder, sampler, options));
  }
  const std::string table = format_report(reports);
  write_text(dir / "report.txt", table);
  write_report_jsonl(dir / "report.jsonl", reports);
  out << table;
}

void cmd_explain(const RunConfig& config, const fs::path& checkpoint, std::ostream& out, std::ostream&) {
  config.validate();
  const fs::path dir = out_dir(config);
  const fs::path path = checkpoint.empty() ? dir / "model.ckpt" : checkpoint;
  if (config.encoder.archetype != Archetype::ConvNet ||
      read_checkpoint(path).encoder.config.archetype != Archetype::ConvNet) {
    throw ConfigError(
        "explain: Grad-CAM needs convolutional feature maps and a frozen-embed encoder has none; "
        "train a conv-net encoder (--encoder conv-net) to produce saliency maps");
  }
  const Manifest manifest = load_split(config, false);
  check_ways(config, manifest, "test");
  const LoadedPool data = load_pool(manifest, config, config.data.augment_test);
  RunConfig effective = config;
  effective.encoder = effective_encoder(config, data.feature_dim);
  const Checkpoint ck = load_checked_checkpoint(config, path, effective.encoder);
  write_effective_config(effective, "explain");

  const int shot = eval_shots(config).front();
  const int query = config.train.query > 0 ? config.train.query : shot;
  const EpisodeSampler sampler(data.pool, config.train.ways, shot, query,
                               stream_seed(config.seed, kEvalStream, static_cast<std::uint64_t>(shot)));
  EvalOptions options;
  options.episodes = config.explain.episodes;
  options.distance = config.train.distance;
  options.model = model_name(config);
  options.class_names = manifest.class_names;
  std::vector<QueryOutcome> outcomes;
  evaluate(ck.encoder, sampler, options, &outcomes);
  std::vector<SelectedSample> selected = select_high_confidence(outcomes, config.explain.threshold);
  if (selected.size() > config.explain.max_images) selected.resize(config.explain.max_images);

  const fs::path explain_dir = dir / "explain";
  fs::create_directories(explain_dir);
  for (const auto& entry : fs::directory_iterator(explain_dir)) fs::remove_all(entry.path());
  if (selected.empty()) {
    out << "notice: no queries met the selection rule; nothing to explain\n";
    return;
  }
  std::size_t index = 0;
  for (const auto& s : selected) {
    const Episode episode = sampler.episode(s.outcome.episode);
    PrototypeSet protos;
    {
      NoGradGuard no_grad;
      const Tensor embeddings = ck.encoder.embed(episode_batch(episode));
      const std::size_t h = embeddings.dim(1);
      std::vector<LabeledEmbedding> support;
      for (std::size_t i = 0; i < episode.support.size(); ++i) {
        support.push_back({embeddings.values().subspan(i * h, h), episode.support[i].class_id});
      }
      protos = compute_prototypes(support, episode.way);
    }
    const Tensor& image = episode.query[s.outcome.query_index].input;
    const SaliencyMap map = gradcam(ck.encoder, image, s.outcome.predicted, protos, config.train.distance);
    char stem[96];
    std::snprintf(stem, sizeof stem, "%03zu_%s_ep%llu_q%zu", index++, s.tag.c_str(),
                  static_cast<unsigned long long>(s.outcome.episode), s.outcome.query_index);
    write_image(explain_dir / (std::string(stem) + ".png"),
                overlay(tensor_to_gray(image), map, config.explain.alpha));
    json record = saliency_to_json(map);
    record["tag"] = s.tag;
    record["episode"] = s.outcome.episode;
    record["query_index"] = s.outcome.query_index;
    record["true_class"] = manifest.class_names[static_cast<std::size_t>(s.outcome.truth)];
    record["predicted_class"] = manifest.class_names[static_cast<std::size_t>(s.outcome.predicted)];
    record["target_class"] = record["predicted_class"];
    record["probabilities"] = s.outcome.probabilities;
    record["source_record"] = manifest.records[s.outcome.source].image_path;
    write_text(explain_dir / (std::string(stem) + ".json"), record.dump() + "\n");
  }
  out << "wrote " << selected.size() << " saliency overlays to " << explain_dir.string() << '\n';
}

// ---------------------------------------------------------------------------

namespace {

struct Flags {
  std::string config, out, checkpoint, encoder, shots, scenario, manifest, distance;
  std::uint64_t seed = 0;
  int ways = 0, query = 0, epochs = 0, episodes = 0;
  std::size_t eval_episodes = 0;
  double crop = 0.0;
};

void add_shared(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "Run seed");
  cmd->add_option("--ways", f.ways, "Classes per episode (K)")->check(CLI::PositiveNumber);
  cmd->add_option("--shots", f.shots, "Support samples per class (N); eval accepts a list such as 5,10,20");
  cmd->add_option("--query", f.query, "Query samples per class (M); defaults to N")->check(CLI::NonNegativeNumber);
  cmd->add_option("--encoder", f.encoder, "Encoder archetype: conv-net or frozen-embed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--scenario", f.scenario, "Class grouping: identity, 2-way, 3-way, 4-way, custom");
  cmd->add_option("--distance", f.distance, "squared (default) or euclidean");
}

RunConfig build_config(CLI::App* cmd, const Flags& f, const fs::path& checkpoint_hint) {
  RunConfig c;
  if (!f.config.empty()) {
    c = load_run_config(f.config);
  } else if (!checkpoint_hint.empty() && fs::exists(checkpoint_hint)) {
    // Without a config file, eval and explain reuse the run that produced the checkpoint.
    c = run_config_from_json(read_checkpoint(checkpoint_hint).config);
  }
  if (cmd->count("--seed")) {
    c.seed = f.seed;
    c.train.seed = f.seed;
  }
  if (cmd->count("--out")) c.out = f.out;
  if (cmd->count("--ways")) c.train.ways = f.ways;
  if (cmd->count("--query")) c.train.query = f.query;
  if (cmd->count("--encoder")) c.encoder.archetype = parse_archetype(f.encoder);
  if (cmd->count("--scenario")) c.scenario.name = f.scenario;
  if (cmd->count("--distance")) c.train.distance = parse_distance(f.distance);
  if (cmd->count("--shots")) {
    const std::vector<int> shots = parse_int_list(f.shots, "--shots");
    c.train.shots = shots.front();
    c.eval.shots = shots;
  }
  if (cmd->get_option_no_throw("--manifest") && cmd->count("--manifest")) c.data.manifest = f.manifest;
  if (cmd->get_option_no_throw("--epochs") && cmd->count("--epochs")) c.train.epochs = f.epochs;
  if (cmd->get_option_no_throw("--episodes") && cmd->count("--episodes")) c.train.episodes_per_epoch = f.episodes;
  if (cmd->get_option_no_throw("--eval-episodes") && cmd->count("--eval-episodes")) {
    c.eval.episodes = f.eval_episodes;
  }
  if (cmd->get_option_no_throw("--crop") && cmd->count("--crop")) {
    c.data.crop = true;
    c.data.crop_top_fraction = f.crop;
  }
  return c;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot prototypical classification for lung ultrasound frames"};
  app.require_subcommand(1);
  Flags f;
  CLI::App* prepare = app.add_subcommand("prepare", "Filter, regroup and split a manifest");
  CLI::App* train = app.add_subcommand("train", "Episodic training; writes model.ckpt and history.csv");
  CLI::App* eval = app.add_subcommand("eval", "Episodic evaluation; writes report.txt and report.jsonl");
  CLI::App* explain = app.add_subcommand("explain", "Grad-CAM overlays for selected test queries");
  for (CLI::App* cmd : {prepare, train, eval, explain}) add_shared(cmd, f);
  prepare->add_option("--manifest", f.manifest, "Source manifest CSV");
  prepare->add_option("--crop", f.crop, "Enable cropping with this top-row fraction");
  for (CLI::App* cmd : {train, eval, explain}) {
    cmd->add_option("--crop", f.crop, "Enable cropping with this top-row fraction");
  }
  train->add_option("--epochs", f.epochs, "Epoch budget")->check(CLI::PositiveNumber);
  train->add_option("--episodes", f.episodes, "Episodes per epoch")->check(CLI::PositiveNumber);
  for (CLI::App* cmd : {eval, explain}) {
    cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint path (default <out>/model.ckpt)");
  }
  eval->add_option("--eval-episodes", f.eval_episodes, "Test episodes per shot count")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    CLI::App* cmd = prepare->parsed() ? prepare : train->parsed() ? train : eval->parsed() ? eval : explain;
    fs::path checkpoint = f.checkpoint;
    fs::path hint = checkpoint;
    if (hint.empty() && (cmd == eval || cmd == explain) && f.config.empty()) {
      hint = fs::path(cmd->count("--out") ? f.out : RunConfig{}.out) / "model.ckpt";
    }
    const RunConfig config = build_config(cmd, f, (cmd == eval || cmd == explain) ? hint : fs::path());
    if (cmd == prepare) cmd_prepare(config, out, err);
    if (cmd == train) cmd_train(config, out, err);
    if (cmd == eval) cmd_eval(config, checkpoint, out, err);
    if (cmd == explain) cmd_explain(config, checkpoint, out, err);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace protoshot::cli
