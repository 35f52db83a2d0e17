#include "protoshot/explain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "protoshot/errors.hpp"

namespace protoshot {

std::vector<double> resize_bilinear(std::span<const double> grid, std::size_t height, std::size_t width,
                                    std::size_t out_height, std::size_t out_width) {
  if (height == 0 || width == 0 || grid.size() != height * width) {
    throw std::invalid_argument("resize_bilinear: grid does not match its extents");
  }
  auto coord = [](std::size_t i, std::size_t out, std::size_t in) {
    if (out <= 1 || in <= 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  };
  std::vector<double> out(out_height * out_width);
  for (std::size_t oy = 0; oy < out_height; ++oy) {
    const double fy = coord(oy, out_height, height);
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), height - 1);
    const std::size_t y1 = std::min(y0 + 1, height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_width; ++ox) {
      const double fx = coord(ox, out_width, width);
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), width - 1);
      const std::size_t x1 = std::min(x0 + 1, width - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = grid[y0 * width + x0] + tx * (grid[y0 * width + x1] - grid[y0 * width + x0]);
      const double bottom = grid[y1 * width + x0] + tx * (grid[y1 * width + x1] - grid[y1 * width + x0]);
      out[oy * out_width + ox] = top + ty * (bottom - top);
    }
  }
  return out;
}

SaliencyMap gradcam(const Encoder& encoder, const Tensor& image, int target_class,
                    const PrototypeSet& protos, DistanceKind distance) {
  if (encoder.config.archetype != Archetype::ConvNet) {
    throw ConfigError(
        "explain: Grad-CAM needs convolutional feature maps and a frozen-embed encoder has none; "
        "train a conv-net encoder (--encoder conv-net) to produce saliency maps");
  }
  if (!grad_enabled()) throw std::logic_error("gradcam: called while gradient recording is disabled");
  if (target_class < 0 || target_class >= protos.way) {
    throw std::invalid_argument("gradcam: target class " + std::to_string(target_class) +
                                " outside [0," + std::to_string(protos.way) + ")");
  }
  Shape shape = encoder.config.input_shape();
  if (image.shape() != shape) {
    throw std::invalid_argument("gradcam: image shape " + shape_string(image.shape()) +
                                " differs from encoder input " + shape_string(shape));
  }
  if (protos.dim != static_cast<std::size_t>(encoder.config.embed_dim)) {
    throw std::invalid_argument("gradcam: prototype length differs from the embedding size");
  }
  const Encoder snapshot{encoder.config, encoder.params.frozen_copy()};
  shape.insert(shape.begin(), 1);
  const std::vector<float> pixels(image.values().begin(), image.values().end());
  const Tensor input(shape, pixels, true);
  Tensor maps;
  const Tensor embedding = snapshot.embed(input, &maps);
  std::vector<float> proto_values(protos.values.begin(), protos.values.end());
  const Tensor proto_tensor({static_cast<std::size_t>(protos.way), protos.dim}, std::move(proto_values));
  const Tensor log_probs = class_log_probabilities(embedding, proto_tensor, distance);
  // d log p_t = (1 - p_t) * d [log p_t - log(1 - p_t)]. The positive factor
  // cancels in the normalized map but rounds to zero in float once p_t
  // saturates, so the log-odds carries the gradient.
  const auto way = static_cast<std::size_t>(protos.way);
  const auto t = static_cast<std::size_t>(target_class);
  const Tensor column = reshape(log_probs, {way, 1});
  const std::size_t target_row[] = {t};
  Tensor score = select_rows(column, target_row);
  if (way > 1) {
    std::vector<std::size_t> rivals;
    for (std::size_t k = 0; k < way; ++k) {
      if (k != t) rivals.push_back(k);
    }
    const Tensor rival_row = reshape(select_rows(column, rivals), {1, rivals.size()});
    // log sum_k exp(l_k) over the rivals, written as l_r - log_softmax(l)_r
    // for the first rival r.
    const std::size_t first_row[] = {0};
    const Tensor first = select_rows(column, std::span<const std::size_t>(rivals).first(1));
    const Tensor first_log_share = select_rows(reshape(log_softmax_rows(rival_row), {rivals.size(), 1}), first_row);
    score = add(sub(score, first), first_log_share);
  }
  backward(sum(score));

  SaliencyMap map;
  map.score = log_probs.values()[t];
  const std::size_t channels = maps.dim(1);
  map.source_height = maps.dim(2);
  map.source_width = maps.dim(3);
  const std::size_t plane = map.source_height * map.source_width;
  const auto activations = maps.values();
  const auto grads = maps.grad();
  map.coarse.assign(plane, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double weight = 0.0;
    for (std::size_t i = 0; i < plane; ++i) weight += grads[c * plane + i];
    weight /= static_cast<double>(plane);
    if (!std::isfinite(weight)) throw NumericalError("gradcam: non-finite gradient at the last convolution");
    for (std::size_t i = 0; i < plane; ++i) map.coarse[i] += weight * activations[c * plane + i];
  }
  for (double& v : map.coarse) v = std::max(v, 0.0);
  map.height = shape[2];
  map.width = shape[3];
  map.grid = resize_bilinear(map.coarse, map.source_height, map.source_width, map.height, map.width);
  const double peak = *std::max_element(map.grid.begin(), map.grid.end());
  if (peak > 0.0) {
    for (double& v : map.grid) v = std::clamp(v / peak, 0.0, 1.0);
  } else {
    std::fill(map.grid.begin(), map.grid.end(), 0.0);
  }
  return map;
}

double saliency_mass_fraction(const SaliencyMap& map, std::size_t y0, std::size_t y1,
                              std::size_t x0, std::size_t x1) {
  double inside = 0.0, total = 0.0;
  for (std::size_t y = 0; y < map.height; ++y) {
    for (std::size_t x = 0; x < map.width; ++x) {
      const double v = map.at(y, x);
      total += v;
      if (y >= y0 && y < y1 && x >= x0 && x < x1) inside += v;
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

Rgb heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {255.0 * t, 0.0, 255.0 * (1.0 - t)};
}

Image overlay(const Image& gray, const SaliencyMap& map, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("overlay: alpha must lie in [0,1]");
  if (gray.channels != 1) throw std::invalid_argument("overlay: image must be single-channel");
  if (static_cast<std::size_t>(gray.width) != map.width ||
      static_cast<std::size_t>(gray.height) != map.height) {
    throw std::invalid_argument("overlay: image is " + std::to_string(gray.width) + "x" +
                                std::to_string(gray.height) + " but the map is " +
                                std::to_string(map.width) + "x" + std::to_string(map.height));
  }
  Image out = Image::blank(gray.width, gray.height, 3);
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) {
      const double g = gray.at(x, y);
      const Rgb heat = heat_color(map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)));
      const double channel[3] = {heat.r, heat.g, heat.b};
      for (int c = 0; c < 3; ++c) {
        const double v = (1.0 - alpha) * g + alpha * channel[c];
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

Image tensor_to_gray(const Tensor& image) {
  if (image.rank() != 3) {
    throw std::invalid_argument("tensor_to_gray: expected [C,H,W], got " + shape_string(image.shape()));
  }
  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));
  Image out = Image::blank(w, h, 1);
  const auto v = image.values();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double value = std::clamp(static_cast<double>(v[static_cast<std::size_t>(y * w + x)]), 0.0, 1.0);
      out.at(x, y) = static_cast<std::uint8_t>(std::lround(value * 255.0));
    }
  }
  return out;
}

std::vector<SelectedSample> select_high_confidence(std::span<const QueryOutcome> stream,
                                                   double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("select_high_confidence: threshold must lie in [0,1)");
  }
  std::vector<SelectedSample> selected;
  for (const auto& o : stream) {
    if (o.truth == o.predicted && o.probabilities[static_cast<std::size_t>(o.truth)] > threshold) {
      selected.push_back({o, "correct-high-confidence"});
    }
  }
  for (const auto& o : stream) {
    if (o.truth != o.predicted) selected.push_back({o, "misclassified"});
  }
  return selected;
}

nlohmann::json saliency_to_json(const SaliencyMap& map) {
  nlohmann::json j;
  j["score"] = map.score;
  j["source_height"] = map.source_height;
  j["source_width"] = map.source_width;
  j["coarse"] = map.coarse;
  j["height"] = map.height;
  j["width"] = map.width;
  j["grid"] = map.grid;
  return j;
}

}  // namespace protoshot
