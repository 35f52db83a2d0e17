#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoshot/encoders.hpp"
#include "protoshot/eval.hpp"
#include "protoshot/image.hpp"
#include "protoshot/proto_head.hpp"

namespace protoshot {

/// Grad-CAM output. coarse holds the rectified map at the last convolution's
/// resolution; grid is its bilinear upsampling to the input size, scaled so
/// the maximum is 1 (an all-zero map stays zero).
struct SaliencyMap {
  std::size_t source_height = 0;
  std::size_t source_width = 0;
  std::vector<double> coarse;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> grid;
  /// Class score that was differentiated: log p(target | image).
  double score = 0.0;

  double at(std::size_t y, std::size_t x) const { return grid[y * width + x]; }
};

/// Differentiates log p(target_class) from the prototypical classifier with
/// respect to the final post-ReLU convolution maps A, weights each channel by
/// the spatial mean of its gradient and keeps relu(sum_c w_c A_c). Parameters
/// are never written. Throws ConfigError for a frozen-embed encoder,
/// std::invalid_argument for a bad class or image shape, NumericalError on
/// non-finite gradients.
SaliencyMap gradcam(const Encoder& encoder, const Tensor& image, int target_class,
                    const PrototypeSet& protos, DistanceKind distance = DistanceKind::SquaredEuclidean);

/// Corner-aligned bilinear resize of a row-major grid.
std::vector<double> resize_bilinear(std::span<const double> grid, std::size_t height, std::size_t width,
                                    std::size_t out_height, std::size_t out_width);

/// Share of total saliency inside rows [y0,y1) and columns [x0,x1); zero for
/// an all-zero map.
double saliency_mass_fraction(const SaliencyMap& map, std::size_t y0, std::size_t y1,
                              std::size_t x0, std::size_t x1);

/// Heat ramp used by overlays: t=0 is pure blue (cold), t=1 pure red.
struct Rgb {
  double r, g, b;
};
Rgb heat_color(double t);

/// Blends a grayscale image with the heat ramp of map:
/// out = round((1 - alpha) * gray + alpha * ramp(map)). Returns RGB. Throws
/// std::invalid_argument when sizes differ or alpha leaves [0,1].
Image overlay(const Image& gray, const SaliencyMap& map, double alpha);

/// First channel of a [C,H,W] tensor in [0,1] as an 8-bit gray image.
Image tensor_to_gray(const Tensor& image);

struct SelectedSample {
  QueryOutcome outcome;
  /// "correct-high-confidence" or "misclassified".
  std::string tag;
};

/// Correct queries whose probability for the true class exceeds threshold,
/// followed by every misclassified query, each in stream order. Throws
/// std::invalid_argument unless 0 <= threshold < 1.
std::vector<SelectedSample> select_high_confidence(std::span<const QueryOutcome> stream,
                                                   double threshold);

nlohmann::json saliency_to_json(const SaliencyMap& map);

}  // namespace protoshot
