#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "protoshot/image.hpp"
#include "protoshot/random.hpp"
#include "protoshot/tensor.hpp"

namespace protoshot {

enum class Probe { Convex, Linear };

struct SampleRecord {
  std::string image_path;
  int class_id = 0;
  std::string video_id;
  Probe probe = Probe::Convex;
  std::optional<int> luss;

  bool operator==(const SampleRecord&) const = default;
};

/// Parsed manifest. Class names are sorted; class_id indexes into them.
struct Manifest {
  std::vector<std::string> class_names;
  std::vector<SampleRecord> records;
  /// Directory that relative image paths are resolved against.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const SampleRecord& record) const;
  /// Index of a class name, or -1.
  int class_index(std::string_view name) const;
};

/// Reads `path,class,video_id,probe,luss` CSV (header required, luss may be
/// empty). When known_classes is non-empty, class names outside it are
/// rejected and ids follow its sorted order. All malformed rows are reported
/// together in one DataError, each with its line number and field.
Manifest load_manifest(const std::filesystem::path& path,
                       std::span<const std::string> known_classes = {});
Manifest parse_manifest(std::istream& in, const std::string& source,
                        std::span<const std::string> known_classes = {});

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

std::vector<SampleRecord> filter_convex(std::span<const SampleRecord> records);

struct LussFilterResult {
  std::vector<SampleRecord> records;
  /// Records of a filtered class that carried no score.
  std::size_t missing_score = 0;
  /// Records whose score is outside the allowed set.
  std::size_t rejected_score = 0;
};

/// Keeps normal-class records whose luss is in normal_scores and covid-class
/// records whose luss is in covid_scores; other classes pass through. A class
/// id of -1 disables filtering for that class. Throws std::invalid_argument
/// when a score set leaves [0,3].
LussFilterResult filter_luss(std::span<const SampleRecord> records, int normal_class,
                             int covid_class, const std::set<int>& normal_scores,
                             const std::set<int>& covid_scores);

struct SplitPair {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
  std::vector<std::string> warnings;
};

/// Assigns whole videos to train or test so that each class's train share of
/// frames approaches train_fraction. Videos are shuffled by seed, then placed
/// largest first into whichever split is furthest below its frame target.
/// A video spanning several classes belongs to its majority class.
SplitPair split_by_video(std::span<const SampleRecord> records, double train_fraction,
                         std::uint64_t seed);

/// Counter-clockwise rotation by quarter_turns * 90 degrees over the last two
/// (square) axes.
Tensor rotate90(const Tensor& image, int quarter_turns);

/// Each input followed by its 90, 180 and 270 degree rotations.
std::vector<Tensor> augment_rotations(std::span<const Tensor> images);

struct AugmentedRecord {
  SampleRecord record;
  int quarter_turns = 0;
};
std::vector<AugmentedRecord> augment_rotations(std::span<const SampleRecord> records);

/// Removes the top floor(crop_top_fraction * height) rows, resizes
/// bilinearly (corner-aligned) to target_size x target_size and scales to
/// [0,1]. Output is [channels, target_size, target_size]; RGB sources are
/// reduced to luminance for one channel and gray sources replicated for three.
Tensor preprocess(const Image& image, int target_size, double crop_top_fraction, int channels);
Tensor preprocess(std::span<const std::uint8_t> encoded, int target_size,
                  double crop_top_fraction, int channels);
/// Throws DataError naming the path.
Tensor preprocess_file(const std::filesystem::path& path, int target_size,
                       double crop_top_fraction, int channels);

/// Whitespace-separated float values (frozen-embed features).
Tensor read_feature_vector(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Episodes

struct LabeledSample {
  Tensor input;
  int class_id = 0;
  /// Identity of the underlying sample; rotated copies share it.
  std::size_t source = 0;
};

struct Episode {
  int way = 0;
  int shot = 0;
  int query_count = 0;
  std::vector<LabeledSample> support;
  std::vector<LabeledSample> query;
};

/// Class-indexed collection of inputs. Items added with the same source id
/// are alternative views (e.g. rotations) of one underlying sample and are
/// never drawn twice into one episode.
class SamplePool {
 public:
  explicit SamplePool(int num_classes);

  void add(Tensor input, int class_id, std::size_t source);

  /// Optional display names used in diagnostics.
  void set_class_names(std::vector<std::string> names);
  /// "class 'name'" when names are set, otherwise "class <id>".
  std::string class_label(int class_id) const;

  int num_classes() const { return static_cast<int>(classes_.size()); }
  std::size_t size() const { return items_.size(); }
  /// Number of distinct underlying samples in a class.
  std::size_t sources_in_class(int class_id) const;
  const LabeledSample& item(std::size_t index) const { return items_[index]; }

  /// Item indices grouped by source for one class.
  const std::vector<std::vector<std::size_t>>& groups(int class_id) const;

 private:
  std::vector<LabeledSample> items_;
  struct ClassIndex {
    std::vector<std::vector<std::size_t>> groups;
    std::unordered_map<std::size_t, std::size_t> group_of_source;
  };
  std::vector<ClassIndex> classes_;
  std::vector<std::string> names_;
};

/// K-way episode: per class, N+M distinct sources drawn uniformly without
/// replacement; the first N form the support set and the rest the query set.
/// Throws DataError naming the first class with fewer than N+M sources.
Episode sample_episode(const SamplePool& pool, int way, int shot, int query,
                       RandomStream& stream);

/// Episode i is drawn from RandomStream(seed).fork(i), independent of the
/// order in which episodes are requested.
class EpisodeSampler {
 public:
  EpisodeSampler(const SamplePool& pool, int way, int shot, int query, std::uint64_t seed);

  Episode episode(std::uint64_t index) const;

  const SamplePool& pool() const { return *pool_; }
  int way() const { return way_; }
  int shot() const { return shot_; }
  int query() const { return query_; }
  std::uint64_t seed() const { return seed_; }

 private:
  const SamplePool* pool_;
  int way_, shot_, query_;
  std::uint64_t seed_;
};

/// Stacks episode inputs into one batch: support rows first, then query.
Tensor episode_batch(const Episode& episode);

}  // namespace protoshot
