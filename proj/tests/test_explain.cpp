#include <cmath>
#include <cstring>

#include "doctest.h"
#include "protoshot/errors.hpp"
#include "protoshot/explain.hpp"
#include "test_util.hpp"

using namespace protoshot;
using testutil::random_values;

namespace {

EncoderConfig small_convnet(int size = 16) {
  EncoderConfig c;
  c.input_size = size;
  c.conv_blocks = 2;
  c.channels_per_block = 4;
  c.embed_dim = 6;
  return c;
}

PrototypeSet random_protos(int way, std::size_t dim, RandomStream& rng) {
  return PrototypeSet{way, dim, random_values(way * dim, rng)};
}

Tensor random_image(int size, RandomStream& rng) {
  const auto s = static_cast<std::size_t>(size);
  return Tensor({1, s, s}, testutil::to_float(random_values(s * s, rng, 0.0, 1.0)));
}

SaliencyMap make_map(std::size_t h, std::size_t w, std::vector<double> grid) {
  SaliencyMap m;
  m.height = h;
  m.width = w;
  m.grid = std::move(grid);
  return m;
}

QueryOutcome outcome(int truth, int predicted, std::vector<double> p) {
  QueryOutcome o;
  o.truth = truth;
  o.predicted = predicted;
  o.probabilities = std::move(p);
  return o;
}

}  // namespace

TEST_CASE("gradcam: zero final convolution gives a zero map") {
  Encoder enc = Encoder::create(small_convnet(), 3);
  for (auto& p : enc.params.entries()) {
    if (p.name.rfind("conv1.", 0) == 0) {
      auto v = p.tensor.mutable_values();
      std::fill(v.begin(), v.end(), 0.0f);
    }
  }
  RandomStream rng(1);
  const SaliencyMap m = gradcam(enc, random_image(16, rng), 0, random_protos(2, 6, rng));
  CHECK(m.height == 16);
  CHECK(m.width == 16);
  for (const double v : m.grid) CHECK(v == 0.0);
  CHECK(saliency_mass_fraction(m, 0, 8, 0, 8) == 0.0);
}

TEST_CASE("gradcam: normalized, non-negative, deterministic and sized to the input") {
  RandomStream rng(2);
  for (const int size : {16, 32}) {
    const Encoder enc = Encoder::create(small_convnet(size), 5);
    int nonzero = 0;
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor img = random_image(size, rng);
      const PrototypeSet protos = random_protos(3, 6, rng);
      const int target = trial % 3;
      const SaliencyMap a = gradcam(enc, img, target, protos);
      REQUIRE(a.height == static_cast<std::size_t>(size));
      REQUIRE(a.width == static_cast<std::size_t>(size));
      CHECK(a.source_height == static_cast<std::size_t>(size / 2));
      double mx = 0.0;
      for (const double v : a.grid) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
        mx = std::max(mx, v);
      }
      if (mx > 0.0) {
        ++nonzero;
        CHECK(mx == 1.0);
      }
      CHECK(std::isfinite(a.score));
      CHECK(a.score <= 0.0);
      const SaliencyMap b = gradcam(enc, img, target, protos);
      CHECK(std::memcmp(a.grid.data(), b.grid.data(), a.grid.size() * sizeof(double)) == 0);
      // Renormalizing an already normalized map is the identity.
      if (mx > 0.0) {
        std::vector<double> again = a.grid;
        const double m2 = *std::max_element(again.begin(), again.end());
        for (double& v : again) v /= m2;
        CHECK(again == a.grid);
      }
    }
    CHECK(nonzero > 0);
  }
}

TEST_CASE("gradcam: parameters are untouched and arguments are checked") {
  const Encoder enc = Encoder::create(small_convnet(), 7);
  std::vector<std::vector<float>> before;
  for (const auto& p : enc.params.entries()) before.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  RandomStream rng(3);
  const PrototypeSet protos = random_protos(2, 6, rng);
  gradcam(enc, random_image(16, rng), 1, protos);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& p = enc.params.entries()[i];
    CHECK(std::equal(before[i].begin(), before[i].end(), p.tensor.values().begin()));
    for (const float g : p.tensor.grad()) CHECK(g == 0.0f);
  }
  CHECK_THROWS_AS(gradcam(enc, random_image(16, rng), 2, protos), std::invalid_argument);
  CHECK_THROWS_AS(gradcam(enc, random_image(32, rng), 0, protos), std::invalid_argument);
  const Encoder frozen = Encoder::create(EncoderConfig::frozen_embed(10, 2), 1);
  try {
    gradcam(frozen, Tensor::zeros({10}), 0, random_protos(2, 2, rng));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("conv-net") != std::string::npos);
  }
}

TEST_CASE("resize_bilinear and mass fraction") {
  const std::vector<double> g = {0, 1, 2, 3};
  const auto up = resize_bilinear(g, 2, 2, 3, 3);
  const std::vector<double> expected = {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3};
  CHECK(up == expected);
  const SaliencyMap m = make_map(2, 2, {1, 0, 0, 3});
  CHECK(saliency_mass_fraction(m, 0, 1, 0, 1) == doctest::Approx(0.25));
  CHECK(saliency_mass_fraction(m, 1, 2, 0, 2) == doctest::Approx(0.75));
}

TEST_CASE("overlay: no-op, cold extreme and checkerboard blend") {
  Image gray = Image::blank(4, 4, 1);
  for (int i = 0; i < 16; ++i) gray.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i * 16);
  const SaliencyMap zero = make_map(4, 4, std::vector<double>(16, 0.0));

  const Image same = overlay(gray, zero, 0.0);
  CHECK(same.channels == 3);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      for (int c = 0; c < 3; ++c) CHECK(same.at(x, y, c) == gray.at(x, y));
    }
  }

  const Image cold = overlay(gray, zero, 1.0);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      CHECK(cold.at(x, y, 0) == 0);
      CHECK(cold.at(x, y, 1) == 0);
      CHECK(cold.at(x, y, 2) == 255);
    }
  }

  std::vector<double> checker(16);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) checker[y * 4 + x] = (x + y) % 2 ? 1.0 : 0.25;
  }
  const SaliencyMap cm = make_map(4, 4, checker);
  const double alpha = 0.35;
  const Image out = overlay(gray, cm, alpha);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const double t = checker[y * 4 + x];
      const double ramp[3] = {255.0 * t, 0.0, 255.0 * (1.0 - t)};
      for (int c = 0; c < 3; ++c) {
        const double want = (1.0 - alpha) * gray.at(x, y) + alpha * ramp[c];
        CHECK(std::abs(out.at(x, y, c) - want) <= 1.0);
      }
    }
  }
  CHECK_THROWS_AS(overlay(gray, make_map(2, 2, {0, 0, 0, 0}), 0.5), std::invalid_argument);
  CHECK_THROWS_AS(overlay(gray, zero, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(overlay(same, zero, 0.5), std::invalid_argument);
}

TEST_CASE("heat ramp is monotone") {
  for (int i = 1; i <= 100; ++i) {
    const Rgb a = heat_color((i - 1) / 100.0), b = heat_color(i / 100.0);
    CHECK(b.r > a.r);
    CHECK(b.b < a.b);
  }
}

TEST_CASE("select_high_confidence") {
  const std::vector<QueryOutcome> stream = {
      outcome(0, 0, {0.9995, 0.0005}), outcome(1, 1, {0.002, 0.998}), outcome(1, 0, {0.7, 0.3}),
      outcome(0, 0, {0.6, 0.4}),       outcome(1, 1, {0.0, 1.0}),     outcome(0, 1, {0.49, 0.51}),
  };
  const auto strict = select_high_confidence(stream, 0.999);
  REQUIRE(strict.size() == 4);
  CHECK(strict[0].tag == "correct-high-confidence");
  CHECK(strict[0].outcome.probabilities[0] == 0.9995);
  CHECK(strict[1].outcome.probabilities[1] == 1.0);
  CHECK(strict[2].tag == "misclassified");
  CHECK(strict[3].tag == "misclassified");

  const auto all = select_high_confidence(stream, 0.0);
  CHECK(std::count_if(all.begin(), all.end(), [](const auto& s) { return s.tag == "correct-high-confidence"; }) == 4);

  RandomStream rng(4);
  std::vector<QueryOutcome> random_stream;
  for (int i = 0; i < 500; ++i) {
    const double p = rng.uniform();
    const int truth = static_cast<int>(rng.below(2));
    const int predicted = p > 0.5 ? truth : 1 - truth;
    std::vector<double> probs(2);
    probs[truth] = p;
    probs[1 - truth] = 1.0 - p;
    random_stream.push_back(outcome(truth, predicted, probs));
  }
  for (const double threshold : {0.5, 0.9, 0.99}) {
    std::size_t expected = 0;
    for (const auto& o : random_stream) {
      if (o.truth != o.predicted || o.probabilities[o.truth] > threshold) ++expected;
    }
    CHECK(select_high_confidence(random_stream, threshold).size() == expected);
  }
  CHECK_THROWS_AS(select_high_confidence(stream, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(select_high_confidence(stream, -0.1), std::invalid_argument);
}
