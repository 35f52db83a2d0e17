#include "protoshot/proto_head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "protoshot/errors.hpp"

namespace protoshot {

std::string to_string(DistanceKind kind) {
  return kind == DistanceKind::SquaredEuclidean ? "squared" : "euclidean";
}

DistanceKind parse_distance(std::string_view name) {
  if (name == "squared") return DistanceKind::SquaredEuclidean;
  if (name == "euclidean") return DistanceKind::Euclidean;
  throw ConfigError("distance: unknown kind '" + std::string(name) +
                    "' (expected squared or euclidean)");
}

PrototypeSet compute_prototypes(std::span<const LabeledEmbedding> support, int way) {
  if (way < 1) throw std::invalid_argument("compute_prototypes: way must be >= 1");
  if (support.empty()) throw std::invalid_argument("compute_prototypes: class 0 has no support embedding");
  PrototypeSet protos;
  protos.way = way;
  protos.dim = support.front().vector.size();
  protos.values.assign(static_cast<std::size_t>(way) * protos.dim, 0.0);
  std::vector<std::size_t> counts(static_cast<std::size_t>(way), 0);
  for (const auto& e : support) {
    if (e.class_id < 0 || e.class_id >= way) {
      throw std::invalid_argument("compute_prototypes: class id " + std::to_string(e.class_id) +
                                  " outside [0," + std::to_string(way) + ")");
    }
    if (e.vector.size() != protos.dim) {
      throw std::invalid_argument("compute_prototypes: embedding length " +
                                  std::to_string(e.vector.size()) + " differs from " +
                                  std::to_string(protos.dim));
    }
    double* row = protos.values.data() + static_cast<std::size_t>(e.class_id) * protos.dim;
    for (std::size_t i = 0; i < protos.dim; ++i) row[i] += e.vector[i];
    ++counts[static_cast<std::size_t>(e.class_id)];
  }
  for (int k = 0; k < way; ++k) {
    const std::size_t n = counts[static_cast<std::size_t>(k)];
    if (n == 0) {
      throw std::invalid_argument("compute_prototypes: class " + std::to_string(k) +
                                  " has no support embedding");
    }
    double* row = protos.values.data() + static_cast<std::size_t>(k) * protos.dim;
    for (std::size_t i = 0; i < protos.dim; ++i) row[i] /= static_cast<double>(n);
  }
  return protos;
}

namespace {

template <typename A, typename B>
double sq_distance(std::span<const A> v, std::span<const B> q) {
  if (v.size() != q.size()) {
    throw std::invalid_argument("sq_euclidean: lengths " + std::to_string(v.size()) + " and " +
                                std::to_string(q.size()) + " differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = static_cast<double>(v[i]) - static_cast<double>(q[i]);
    total += d * d;
  }
  return total;
}

}  // namespace

double sq_euclidean(std::span<const double> v, std::span<const float> q) { return sq_distance(v, q); }
double sq_euclidean(std::span<const double> v, std::span<const double> q) { return sq_distance(v, q); }

Classification classify_distances(std::span<const double> distances) {
  if (distances.empty()) throw std::invalid_argument("classify: no prototypes");
  Classification out;
  out.distances.assign(distances.begin(), distances.end());
  out.predicted = 0;
  for (std::size_t k = 1; k < distances.size(); ++k) {
    if (distances[k] < distances[static_cast<std::size_t>(out.predicted)]) {
      out.predicted = static_cast<int>(k);
    }
  }
  const double shift = distances[static_cast<std::size_t>(out.predicted)];
  out.probabilities.resize(distances.size());
  double total = 0.0;
  for (std::size_t k = 0; k < distances.size(); ++k) {
    out.probabilities[k] = std::exp(shift - distances[k]);
    total += out.probabilities[k];
  }
  for (double& p : out.probabilities) p /= total;
  return out;
}

Classification classify(std::span<const float> query, const PrototypeSet& protos, DistanceKind kind) {
  if (query.size() != protos.dim) {
    throw std::invalid_argument("classify: query length " + std::to_string(query.size()) +
                                " differs from prototype length " + std::to_string(protos.dim));
  }
  std::vector<double> distances(static_cast<std::size_t>(protos.way));
  for (int k = 0; k < protos.way; ++k) {
    const double d = sq_euclidean(protos.prototype(k), query);
    distances[static_cast<std::size_t>(k)] = kind == DistanceKind::Euclidean ? std::sqrt(d) : d;
  }
  return classify_distances(distances);
}

double episode_loss(std::span<const std::vector<double>> distributions, std::span<const int> labels,
                    std::size_t* clamped) {
  if (distributions.size() != labels.size()) {
    throw std::invalid_argument("episode_loss: " + std::to_string(distributions.size()) +
                                " distributions but " + std::to_string(labels.size()) + " labels");
  }
  if (distributions.empty()) throw std::invalid_argument("episode_loss: no queries");
  std::size_t floor_hits = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& p = distributions[i];
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= p.size()) {
      throw std::invalid_argument("episode_loss: label " + std::to_string(labels[i]) +
                                  " out of range for query " + std::to_string(i));
    }
    double prob = p[static_cast<std::size_t>(labels[i])];
    if (prob < 1e-12) {
      prob = 1e-12;
      ++floor_hits;
    }
    total -= std::log(prob);
  }
  if (clamped) *clamped = floor_hits;
  return total / static_cast<double>(labels.size());
}

Tensor prototype_tensor(const Tensor& support, std::span<const int> labels, int way) {
  return group_mean_rows(support, labels, way);
}

Tensor class_log_probabilities(const Tensor& query, const Tensor& prototypes, DistanceKind kind) {
  Tensor d = pairwise_sq_distances(query, prototypes);
  if (kind == DistanceKind::Euclidean) d = sqrt(d);
  return log_softmax_rows(scale(d, -1.0f));
}

Tensor episode_loss(const Tensor& log_probs, std::span<const int> labels, std::size_t* clamped) {
  return nll_mean(log_probs, labels, static_cast<float>(kLogProbFloor), clamped);
}

}  // namespace protoshot
