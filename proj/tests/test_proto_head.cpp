#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "protoshot/errors.hpp"
#include "protoshot/proto_head.hpp"
#include "test_util.hpp"

using namespace protoshot;
using testutil::random_values;

namespace {

PrototypeSet protos_from(int way, std::size_t dim, std::vector<double> values) {
  return PrototypeSet{way, dim, std::move(values)};
}

std::vector<float> as_float(const std::vector<double>& v) { return testutil::to_float(v); }

double prob_sum(const Classification& c) { return std::accumulate(c.probabilities.begin(), c.probabilities.end(), 0.0); }

}  // namespace

TEST_CASE("distance kind names") {
  CHECK(to_string(DistanceKind::SquaredEuclidean) == "squared");
  CHECK(parse_distance("euclidean") == DistanceKind::Euclidean);
  CHECK_THROWS_AS(parse_distance("cosine"), ConfigError);
  CHECK(kLogProbFloor == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("compute_prototypes") {
  const std::vector<float> a = {1, 2, 3}, b = {-4, 5, 6};
  std::vector<LabeledEmbedding> single = {{a, 0}, {b, 1}};
  const PrototypeSet p = compute_prototypes(single, 2);
  CHECK(p.way == 2);
  CHECK(p.dim == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(p.prototype(0)[i] == a[i]);
    CHECK(p.prototype(1)[i] == b[i]);
  }

  const std::vector<float> plus = {1, 0}, minus = {-1, 0};
  std::vector<LabeledEmbedding> sym = {{plus, 0}, {minus, 0}};
  const PrototypeSet z = compute_prototypes(sym, 1);
  CHECK(z.prototype(0)[0] == 0.0);
  CHECK(z.prototype(0)[1] == 0.0);

  RandomStream rng(4);
  std::vector<std::vector<float>> vecs;
  for (int i = 0; i < 5; ++i) vecs.push_back(as_float(random_values(8, rng)));
  std::vector<LabeledEmbedding> five;
  for (const auto& v : vecs) five.push_back({v, 0});
  const PrototypeSet m = compute_prototypes(five, 1);
  for (std::size_t j = 0; j < 8; ++j) {
    double s = 0.0;
    for (const auto& v : vecs) s += v[j];
    CHECK(std::abs(m.prototype(0)[j] - s / 5.0) < 1e-6);
  }

  std::vector<LabeledEmbedding> gap = {{a, 0}, {b, 2}};
  try {
    compute_prototypes(gap, 3);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
}

TEST_CASE("sq_euclidean") {
  const std::vector<double> v = {0, 0}, q = {3, 4};
  CHECK(sq_euclidean(v, q) == 25.0);
  CHECK(sq_euclidean(q, q) == 0.0);
  RandomStream rng(5);
  const auto x = random_values(16, rng), y = random_values(16, rng);
  double s = 0.0;
  for (std::size_t i = 0; i < 16; ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  CHECK(std::abs(sq_euclidean(x, y) - s) < 1e-6);
  CHECK_THROWS_AS(sq_euclidean(x, std::vector<double>(15)), std::invalid_argument);
}

TEST_CASE("classify: symmetry, dominance and hand softmax") {
  const PrototypeSet ring = protos_from(4, 2, {1, 0, 0, 1, -1, 0, 0, -1});
  const std::vector<float> origin = {0, 0};
  const Classification u = classify(origin, ring);
  for (const double p : u.probabilities) CHECK(p == doctest::Approx(0.25));
  CHECK(u.predicted == 0);

  const PrototypeSet far = protos_from(3, 2, {0, 0, 10, 0, 0, 10});
  const Classification d = classify(origin, far);
  CHECK(d.predicted == 0);
  CHECK(d.probabilities[0] > 0.99);

  const std::vector<double> dist = {1.0, 3.0};
  const Classification h = classify_distances(dist);
  CHECK(std::abs(h.probabilities[0] - 0.8808) < 1e-4);
  CHECK(std::abs(h.probabilities[1] - 0.1192) < 1e-4);
  const double e1 = std::exp(-1.0), e3 = std::exp(-3.0);
  CHECK(h.probabilities[0] == doctest::Approx(e1 / (e1 + e3)).epsilon(1e-12));

  const std::vector<double> tie = {2.0, 2.0, 5.0};
  CHECK(classify_distances(tie).predicted == 0);
  const std::vector<float> bad = {0, 0, 0};
  CHECK_THROWS_AS(classify(bad, ring), std::invalid_argument);
}

TEST_CASE("classify: euclidean switch takes the square root") {
  const PrototypeSet p = protos_from(2, 2, {0, 0, 0, 2});
  const std::vector<float> q = {0, 1.5};
  const Classification sq = classify(q, p, DistanceKind::SquaredEuclidean);
  const Classification eu = classify(q, p, DistanceKind::Euclidean);
  CHECK(sq.distances[0] == doctest::Approx(2.25));
  CHECK(eu.distances[0] == doctest::Approx(1.5));
  CHECK(eu.distances[1] == doctest::Approx(0.5));
  CHECK(eu.predicted == 1);
}

TEST_CASE("classify: distribution properties over random draws") {
  RandomStream rng(6);
  for (int trial = 0; trial < 10000; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const std::size_t h = 1 + rng.below(8);
    const PrototypeSet p = protos_from(k, h, random_values(k * h, rng, -3, 3));
    const auto qd = random_values(h, rng, -3, 3);
    const auto q = as_float(qd);
    const Classification c = classify(q, p);
    REQUIRE(std::abs(prob_sum(c) - 1.0) < 1e-6);
    for (const double x : c.probabilities) REQUIRE((x >= 0.0 && x <= 1.0));
    // Nearest prototype by brute force.
    int nearest = 0;
    double best = 1e300;
    for (int j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < h; ++i) s += (p.prototype(j)[i] - q[i]) * (p.prototype(j)[i] - q[i]);
      if (s < best) {
        best = s;
        nearest = j;
      }
    }
    REQUIRE(c.predicted == nearest);
    REQUIRE(std::max_element(c.probabilities.begin(), c.probabilities.end()) - c.probabilities.begin() == nearest);

    if (trial % 10 == 0) {
      std::vector<double> shifted = c.distances;
      for (double& x : shifted) x += 7.25;
      const Classification s = classify_distances(shifted);
      for (int j = 0; j < k; ++j) REQUIRE(std::abs(s.probabilities[j] - c.probabilities[j]) < 1e-9);

      const double scale = 0.1 + rng.uniform() * 5.0;
      std::vector<double> pv = p.values;
      for (double& x : pv) x *= scale;
      const PrototypeSet ps = protos_from(k, h, pv);
      std::vector<float> qs(h);
      for (std::size_t i = 0; i < h; ++i) qs[i] = static_cast<float>(q[i] * scale);
      const Classification cs = classify(qs, ps);
      for (int j = 0; j < k; ++j) {
        REQUIRE(cs.distances[j] == doctest::Approx(c.distances[j] * scale * scale).epsilon(1e-5));
      }
      REQUIRE(cs.predicted == c.predicted);
    }
  }
}

TEST_CASE("episode_loss: anchors, clamp and formula oracle") {
  const std::vector<std::vector<double>> perfect = {{1.0, 0.0}, {0.0, 1.0}};
  const std::vector<int> labels = {0, 1};
  CHECK(episode_loss(perfect, labels) == 0.0);

  for (const int k : {2, 3, 4}) {
    const std::vector<std::vector<double>> uniform(3, std::vector<double>(k, 1.0 / k));
    const std::vector<int> l = {0, 1, k - 1};
    CHECK(episode_loss(uniform, l) == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-15));
    const Tensor zeros = Tensor::zeros({3, static_cast<std::size_t>(k)});
    const Tensor logp = class_log_probabilities(Tensor::zeros({3, 2}), Tensor::zeros({static_cast<std::size_t>(k), 2}));
    CHECK(episode_loss(logp, l).item() == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-6));
  }
  CHECK(episode_loss(std::vector<std::vector<double>>{{0.5, 0.5}}, std::vector<int>{0}) ==
        doctest::Approx(0.6931).epsilon(1e-4));

  std::size_t clamped = 0;
  const std::vector<std::vector<double>> zero = {{1.0, 0.0}, {0.5, 0.5}};
  const double loss = episode_loss(zero, std::vector<int>{1, 1}, &clamped);
  CHECK(clamped == 1);
  CHECK(loss == doctest::Approx((-std::log(1e-12) - std::log(0.5)) / 2.0));

  RandomStream rng(7);
  std::vector<std::vector<double>> dists;
  std::vector<int> truth;
  double expected = 0.0;
  for (int q = 0; q < 10; ++q) {
    auto p = random_values(3, rng, 0.05, 1.0);
    const double s = p[0] + p[1] + p[2];
    for (double& x : p) x /= s;
    truth.push_back(static_cast<int>(rng.below(3)));
    expected -= std::log(p[truth.back()]);
    dists.push_back(p);
  }
  CHECK(std::abs(episode_loss(dists, truth) - expected / 10.0) < 1e-6);
  CHECK_THROWS_AS(episode_loss(dists, std::vector<int>{0}), std::invalid_argument);
}

TEST_CASE("tensor head agrees with the value-level head") {
  RandomStream rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(3));
    const std::size_t h = 1 + rng.below(6), n = 1 + rng.below(3), q = 1 + rng.below(4);
    const auto sv = as_float(random_values(k * n * h, rng));
    const auto qv = as_float(random_values(q * h, rng));
    std::vector<int> slabels, qlabels;
    for (int c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) slabels.push_back(c);
    }
    for (std::size_t i = 0; i < q; ++i) qlabels.push_back(static_cast<int>(rng.below(k)));
    const Tensor protos = prototype_tensor(Tensor({k * n, h}, sv), slabels, k);
    for (const auto kind : {DistanceKind::SquaredEuclidean, DistanceKind::Euclidean}) {
      const Tensor logp = class_log_probabilities(Tensor({q, h}, qv), protos, kind);
      std::vector<LabeledEmbedding> support;
      for (std::size_t i = 0; i < sv.size() / h; ++i) support.push_back({std::span(sv).subspan(i * h, h), slabels[i]});
      const PrototypeSet ps = compute_prototypes(support, k);
      std::vector<std::vector<double>> dists;
      for (std::size_t i = 0; i < q; ++i) {
        const Classification c = classify(std::span(qv).subspan(i * h, h), ps, kind);
        for (int j = 0; j < k; ++j) CHECK(std::exp(logp.values()[i * k + j]) == doctest::Approx(c.probabilities[j]).epsilon(1e-4));
        dists.push_back(c.probabilities);
      }
      CHECK(episode_loss(logp, qlabels).item() == doctest::Approx(episode_loss(dists, qlabels)).epsilon(1e-4));
    }
  }
}

TEST_CASE("loss gradient w.r.t. query embeddings matches finite differences") {
  RandomStream rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(3));
    const std::size_t h = 1 + rng.below(6), q = 1 + rng.below(5);
    const testutil::Pair protos({static_cast<std::size_t>(k), h}, random_values(k * h, rng));
    std::vector<int> labels;
    for (std::size_t i = 0; i < q; ++i) labels.push_back(static_cast<int>(rng.below(k)));
    const auto x = random_values(q * h, rng);
    const Tensor qx({q, h}, as_float(x), true);
    backward(episode_loss(class_log_probabilities(qx, protos.f), labels));
    const std::vector<double> analytic(qx.grad().begin(), qx.grad().end());
    const ScalarFunction<double> oracle = [&](const TensorD& t) {
      return nll_mean(log_softmax_rows(scale(pairwise_sq_distances(t, protos.d), -1.0)), labels, kLogProbFloor);
    };
    const auto numeric = numeric_gradient<double>(oracle, TensorD({q, h}, x), 1e-4);
    REQUIRE(max_relative_error(analytic, numeric) < 1e-3);
  }
}
