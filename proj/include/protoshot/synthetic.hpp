#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protoshot/data.hpp"
#include "protoshot/image.hpp"
#include "protoshot/random.hpp"

namespace protoshot::synth {

/// Gaussian blobs: class k has mean (separation / sqrt 2) * e_k, so any two
/// means lie `separation` apart, and unit variance in every component.
struct BlobSpec {
  int classes = 2;
  int dim = 8;
  double separation = 5.0;
};

std::vector<double> blob_mean(const BlobSpec& spec, int class_id);
Tensor blob_sample(const BlobSpec& spec, int class_id, RandomStream& rng);
/// per_class samples per class, each its own source.
SamplePool blob_pool(const BlobSpec& spec, int per_class, std::uint64_t seed);

/// Ultrasound-like textures: horizontal reverberation stripes, vertical
/// comet-tail streaks, plain speckle, and scattered consolidation blotches.
enum class Texture { Stripes, Streaks, Speckle, Blotches };

/// 8-bit gray size x size image.
Image render_texture(Texture kind, int size, RandomStream& rng);
/// Class k renders Texture(k).
SamplePool texture_pool(int classes, int per_class, int size, std::uint64_t seed);

/// Two classes distinguished only by a bar drawn in the top-left quadrant
/// (class 0 horizontal, class 1 vertical). With clutter, both classes also
/// carry a bright distractor square in one of the other quadrants over a
/// speckled background; without it the bar lies on a flat, noise-free field.
Image render_planted(int class_id, int size, RandomStream& rng, bool clutter = true);
SamplePool planted_pool(int per_class, int size, std::uint64_t seed, bool clutter = true);

/// Image scaled to [0,1] as [1,H,W].
Tensor to_tensor(const Image& gray);

struct DatasetSpec {
  /// "textures", "planted" or "blobs".
  std::string kind = "textures";
  int classes = 4;
  int videos_per_class = 6;
  int frames_per_video = 10;
  int size = 64;
  /// Share of videos recorded with a linear probe.
  double linear_fraction = 0.0;
  std::uint64_t seed = 1;
};

/// Class names used by generated manifests, in class order.
std::vector<std::string> dataset_class_names(int classes);

/// Writes images (PGM) or feature vectors (.vec) under dir and a
/// manifest.csv referencing them; returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec);

}  // namespace protoshot::synth
