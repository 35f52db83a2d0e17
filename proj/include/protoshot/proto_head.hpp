#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "protoshot/tensor.hpp"

namespace protoshot {

/// Distance between a query embedding and a prototype. Squared is the default;
/// Euclidean takes the square root and exists for comparison runs.
enum class DistanceKind { SquaredEuclidean, Euclidean };

std::string to_string(DistanceKind kind);
/// Accepts "squared" or "euclidean". Throws ConfigError otherwise.
DistanceKind parse_distance(std::string_view name);

/// Natural log of the probability floor applied before taking -log p.
inline constexpr double kLogProbFloor = -27.631021115928547;  // log(1e-12)

struct LabeledEmbedding {
  std::span<const float> vector;
  int class_id = 0;
};

/// K prototypes of length H stored row-major.
struct PrototypeSet {
  int way = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> prototype(int k) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(k) * dim, dim);
  }
};

/// Prototype k is the mean of the class-k embeddings. Throws
/// std::invalid_argument naming the first class without support or on a
/// length mismatch.
PrototypeSet compute_prototypes(std::span<const LabeledEmbedding> support, int way);

/// sum_i (v_i - q_i)^2, accumulated in double.
double sq_euclidean(std::span<const double> v, std::span<const float> q);
double sq_euclidean(std::span<const double> v, std::span<const double> q);

struct Classification {
  std::vector<double> probabilities;
  std::vector<double> distances;
  int predicted = 0;
};

/// Softmax over negative distances (max-shifted); predicted is the nearest
/// prototype with ties going to the lowest class id.
Classification classify(std::span<const float> query, const PrototypeSet& protos,
                        DistanceKind kind = DistanceKind::SquaredEuclidean);
Classification classify_distances(std::span<const double> distances);

/// Mean over queries of -log p(true class) with p clamped at 1e-12; the
/// number of clamped queries is written to *clamped when given.
double episode_loss(std::span<const std::vector<double>> distributions,
                    std::span<const int> labels, std::size_t* clamped = nullptr);

// ---------------------------------------------------------------------------
// Differentiable forms used by training and saliency.

/// support [K*N, H] with labels -> prototypes [K, H].
Tensor prototype_tensor(const Tensor& support, std::span<const int> labels, int way);

/// query [Q, H], prototypes [K, H] -> log p(y = k | q) as [Q, K].
Tensor class_log_probabilities(const Tensor& query, const Tensor& prototypes,
                               DistanceKind kind = DistanceKind::SquaredEuclidean);

/// Mean -log p(true class) over the rows of log_probs, clamped at 1e-12.
Tensor episode_loss(const Tensor& log_probs, std::span<const int> labels,
                    std::size_t* clamped = nullptr);

}  // namespace protoshot
