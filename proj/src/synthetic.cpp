#include "protoshot/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "protoshot/errors.hpp"

namespace protoshot::synth {

std::vector<double> blob_mean(const BlobSpec& spec, int class_id) {
  if (class_id < 0 || class_id >= spec.classes || spec.classes > spec.dim) {
    throw std::invalid_argument("blob_mean: class outside range or more classes than dimensions");
  }
  std::vector<double> mean(static_cast<std::size_t>(spec.dim), 0.0);
  mean[static_cast<std::size_t>(class_id)] = spec.separation / std::sqrt(2.0);
  return mean;
}

Tensor blob_sample(const BlobSpec& spec, int class_id, RandomStream& rng) {
  const auto mean = blob_mean(spec, class_id);
  std::vector<float> x(mean.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(mean[i] + rng.normal());
  const std::size_t n = x.size();
  return Tensor({n}, std::move(x));
}

SamplePool blob_pool(const BlobSpec& spec, int per_class, std::uint64_t seed) {
  SamplePool pool(spec.classes);
  RandomStream rng(seed);
  std::size_t source = 0;
  for (int k = 0; k < spec.classes; ++k) {
    for (int i = 0; i < per_class; ++i) pool.add(blob_sample(spec, k, rng), k, source++);
  }
  return pool;
}

namespace {

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void add_speckle(std::vector<double>& canvas, double sigma, RandomStream& rng) {
  for (double& v : canvas) v += sigma * rng.normal();
}

Image to_image(const std::vector<double>& canvas, int size) {
  Image image = Image::blank(size, size, 1);
  for (std::size_t i = 0; i < canvas.size(); ++i) image.pixels[i] = clamp_byte(canvas[i]);
  return image;
}

}  // namespace

Image render_texture(Texture kind, int size, RandomStream& rng) {
  if (size < 8) throw std::invalid_argument("render_texture: size must be >= 8");
  const auto n = static_cast<std::size_t>(size);
  const double background = rng.uniform(30.0, 60.0);
  std::vector<double> canvas(n * n, background);
  auto px = [&](std::size_t y, std::size_t x) -> double& { return canvas[y * n + x]; };
  const double scale = size / 64.0;
  switch (kind) {
    case Texture::Stripes: {
      const double period = rng.uniform(8.0, 14.0) * scale;
      const double phase = rng.uniform(0.0, period);
      const double level = rng.uniform(100.0, 150.0);
      for (std::size_t y = 0; y < n; ++y) {
        const double pos = std::fmod(static_cast<double>(y) + phase, period);
        if (pos < std::max(2.0, 2.0 * scale)) {
          for (std::size_t x = 0; x < n; ++x) px(y, x) += level;
        }
      }
      break;
    }
    case Texture::Streaks: {
      const int count = 2 + static_cast<int>(rng.below(3));
      for (int s = 0; s < count; ++s) {
        const auto width = static_cast<std::size_t>(std::max(2.0, std::round(rng.uniform(2.0, 3.5) * scale)));
        const std::size_t x0 = rng.below(n - width);
        const std::size_t y0 = rng.below(n / 4);
        const double level = rng.uniform(110.0, 160.0);
        for (std::size_t y = y0; y < n; ++y) {
          const double fade = 1.0 - 0.4 * static_cast<double>(y - y0) / static_cast<double>(n);
          for (std::size_t x = x0; x < x0 + width; ++x) px(y, x) += level * fade;
        }
      }
      break;
    }
    case Texture::Speckle:
      for (double& v : canvas) v += rng.uniform(0.0, 30.0);
      add_speckle(canvas, 13.0, rng);
      break;
    case Texture::Blotches: {
      const int count = 3 + static_cast<int>(rng.below(3));
      for (int b = 0; b < count; ++b) {
        const double cy = rng.uniform(0.0, size), cx = rng.uniform(0.0, size);
        const double radius = rng.uniform(4.0, 8.0) * scale;
        const double level = rng.uniform(90.0, 140.0);
        for (std::size_t y = 0; y < n; ++y) {
          for (std::size_t x = 0; x < n; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            px(y, x) += level * std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
          }
        }
      }
      break;
    }
  }
  add_speckle(canvas, 12.0, rng);
  return to_image(canvas, size);
}

SamplePool texture_pool(int classes, int per_class, int size, std::uint64_t seed) {
  if (classes < 1 || classes > 4) throw std::invalid_argument("texture_pool: classes must lie in [1,4]");
  SamplePool pool(classes);
  const RandomStream root(seed);
  std::size_t source = 0;
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      RandomStream rng = root.fork(source);
      pool.add(to_tensor(render_texture(static_cast<Texture>(k), size, rng)), k, source);
      ++source;
    }
  }
  return pool;
}

Image render_planted(int class_id, int size, RandomStream& rng, bool clutter) {
  if (class_id < 0 || class_id > 1) throw std::invalid_argument("render_planted: class must be 0 or 1");
  if (size < 16 || size % 2) throw std::invalid_argument("render_planted: size must be even and >= 16");
  const auto n = static_cast<std::size_t>(size);
  const std::size_t half = n / 2;
  std::vector<double> canvas(n * n, clutter ? rng.uniform(25.0, 45.0) : 35.0);
  auto fill = [&](std::size_t y0, std::size_t x0, std::size_t h, std::size_t w, double level) {
    for (std::size_t y = y0; y < y0 + h; ++y) {
      for (std::size_t x = x0; x < x0 + w; ++x) canvas[y * n + x] += level;
    }
  };
  const std::size_t long_side = half * 5 / 8;
  const std::size_t short_side = std::max<std::size_t>(2, half / 6);
  const std::size_t h = class_id == 0 ? short_side : long_side;
  const std::size_t w = class_id == 0 ? long_side : short_side;
  // Keep one pixel of margin so the bar never touches the quadrant border.
  const std::size_t y0 = 1 + rng.below(half - h - 1);
  const std::size_t x0 = 1 + rng.below(half - w - 1);
  fill(y0, x0, h, w, rng.uniform(140.0, 180.0));
  if (!clutter) return to_image(canvas, size);

  const std::size_t quadrant = 1 + rng.below(3);
  const std::size_t qy = quadrant >= 2 ? half : 0;
  const std::size_t qx = quadrant == 1 || quadrant == 3 ? half : 0;
  const std::size_t side = short_side + 1;
  fill(qy + 1 + rng.below(half - side - 1), qx + 1 + rng.below(half - side - 1), side, side,
       rng.uniform(140.0, 180.0));
  add_speckle(canvas, 10.0, rng);
  return to_image(canvas, size);
}

SamplePool planted_pool(int per_class, int size, std::uint64_t seed, bool clutter) {
  SamplePool pool(2);
  const RandomStream root(seed);
  std::size_t source = 0;
  for (int k = 0; k < 2; ++k) {
    for (int i = 0; i < per_class; ++i) {
      RandomStream rng = root.fork(source);
      pool.add(to_tensor(render_planted(k, size, rng, clutter)), k, source);
      ++source;
    }
  }
  return pool;
}

Tensor to_tensor(const Image& gray) {
  if (gray.channels != 1) throw std::invalid_argument("to_tensor: expected a gray image");
  std::vector<float> values(gray.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(gray.pixels[i] / 255.0);
  return Tensor({1, static_cast<std::size_t>(gray.height), static_cast<std::size_t>(gray.width)},
                std::move(values));
}

std::vector<std::string> dataset_class_names(int classes) {
  static const std::vector<std::string> names = {"normal", "covid", "pneumonia", "other"};
  if (classes < 1 || classes > 4) throw std::invalid_argument("dataset_class_names: classes must lie in [1,4]");
  return {names.begin(), names.begin() + classes};
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  const bool blobs = spec.kind == "blobs";
  const bool planted = spec.kind == "planted";
  if (!blobs && !planted && spec.kind != "textures") {
    throw ConfigError("synth: unknown dataset kind '" + spec.kind + "'");
  }
  const int classes = planted ? 2 : spec.classes;
  if (classes < 2 || classes > 4) throw ConfigError("synth: classes must lie in [2,4]");
  if (spec.videos_per_class < 1 || spec.frames_per_video < 1) {
    throw ConfigError("synth: videos_per_class and frames_per_video must be >= 1");
  }
  const auto names = dataset_class_names(classes);
  fs::create_directories(dir / "frames");
  const RandomStream root(spec.seed);
  const BlobSpec blob{classes, 8, 5.0};
  Manifest manifest;
  manifest.class_names = names;
  std::sort(manifest.class_names.begin(), manifest.class_names.end());
  std::uint64_t counter = 0;
  for (int k = 0; k < classes; ++k) {
    for (int v = 0; v < spec.videos_per_class; ++v) {
      RandomStream video_rng = root.fork(0x5EED0000ULL + static_cast<std::uint64_t>(k * 1000 + v));
      const bool linear = video_rng.uniform() < spec.linear_fraction;
      std::optional<int> luss;
      if (names[k] == "normal") luss = video_rng.uniform() < 0.8 ? 0 : 1;
      if (names[k] == "covid") luss = 1 + static_cast<int>(video_rng.below(3));
      const std::string video = names[k] + "_v" + std::to_string(v);
      for (int f = 0; f < spec.frames_per_video; ++f) {
        RandomStream rng = root.fork(counter++);
        const std::string stem = video + "_f" + std::to_string(f);
        std::string rel;
        if (blobs) {
          rel = "frames/" + stem + ".vec";
          const Tensor x = blob_sample(blob, k, rng);
          std::ofstream out(dir / rel);
          for (std::size_t i = 0; i < x.size(); ++i) out << (i ? " " : "") << x.values()[i];
          out << '\n';
          if (!out) throw DataError("synth: cannot write " + (dir / rel).string());
        } else {
          rel = "frames/" + stem + ".pgm";
          const Image image = planted ? render_planted(k, spec.size, rng)
                                      : render_texture(static_cast<Texture>(k), spec.size, rng);
          write_image(dir / rel, image);
        }
        SampleRecord record;
        record.image_path = rel;
        record.class_id = manifest.class_index(names[k]);
        record.video_id = video;
        record.probe = linear ? Probe::Linear : Probe::Convex;
        record.luss = luss;
        manifest.records.push_back(record);
      }
    }
  }
  const fs::path path = dir / "manifest.csv";
  write_manifest(path, manifest);
  return path;
}

}  // namespace protoshot::synth
