#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "protoshot/data.hpp"
#include "protoshot/errors.hpp"
#include "test_util.hpp"

using namespace protoshot;

namespace {

Manifest parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in, "fixture.csv");
}

std::vector<SampleRecord> grid_records(int classes, int videos, int frames) {
  std::vector<SampleRecord> out;
  for (int c = 0; c < classes; ++c) {
    for (int v = 0; v < videos; ++v) {
      for (int f = 0; f < frames; ++f) {
        out.push_back({"c" + std::to_string(c) + "v" + std::to_string(v) + "f" + std::to_string(f) + ".png", c,
                       "c" + std::to_string(c) + "v" + std::to_string(v), Probe::Convex, std::nullopt});
      }
    }
  }
  return out;
}

std::set<std::string> videos_of(const std::vector<SampleRecord>& records) {
  std::set<std::string> out;
  for (const auto& r : records) out.insert(r.video_id);
  return out;
}

SamplePool rotation_pool(int classes, int sources) {
  SamplePool pool(classes);
  std::size_t source = 0;
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < sources; ++s, ++source) {
      const Tensor base({1, 2, 2}, {float(source), 0.f, 1.f, 2.f});
      for (int t = 0; t < 4; ++t) pool.add(rotate90(base, t), c, source);
    }
  }
  return pool;
}

}  // namespace

TEST_CASE("manifest: empty data section gives no records") {
  const Manifest m = parse("path,class,video_id,probe,luss\n");
  CHECK(m.records.empty());
}

TEST_CASE("manifest: ten-row fixture round-trips exactly") {
  const std::string text =
      "path,class,video_id,probe,luss\n"
      "a/1.png,covid,v1,convex,3\n"
      "a/2.png,covid,v1,convex,2\n"
      "b/1.png,normal,v2,convex,0\n"
      "b/2.png,normal,v2,linear,\n"
      "c/1.png,pneumonia,v3,convex,\n"
      "c/2.png,pneumonia,v3,convex,1\n"
      "\"d/with,comma.png\",other,v4,convex,\n"
      "d/2.png,other,v4,linear,0\n"
      "e/1.png,normal,v5,convex,1\n"
      "e/2.png,covid,v6,convex,0\n";
  const Manifest m = parse(text);
  REQUIRE(m.records.size() == 10);
  CHECK(m.class_names == std::vector<std::string>{"covid", "normal", "other", "pneumonia"});
  CHECK(m.records[0] == SampleRecord{"a/1.png", 0, "v1", Probe::Convex, 3});
  CHECK(m.records[3] == SampleRecord{"b/2.png", 1, "v2", Probe::Linear, std::nullopt});
  CHECK(m.records[6].image_path == "d/with,comma.png");
  CHECK(m.records[6].class_id == 2);
  CHECK(m.records[9] == SampleRecord{"e/2.png", 0, "v6", Probe::Convex, 0});

  const auto dir = testutil::scratch_dir("manifest");
  write_manifest(dir / "m.csv", m);
  const Manifest back = load_manifest(dir / "m.csv");
  CHECK(back.class_names == m.class_names);
  CHECK(back.records == m.records);
}

TEST_CASE("manifest: column order is free and a BOM is tolerated") {
  const Manifest m = parse("\xEF\xBB\xBFluss,probe,video_id,class,path\n2,convex,v,covid,x.png\n");
  REQUIRE(m.records.size() == 1);
  CHECK(m.records[0] == SampleRecord{"x.png", 0, "v", Probe::Convex, 2});
}

TEST_CASE("manifest: bad rows are reported with line and field") {
  try {
    parse("path,class,video_id,probe,luss\nx.png,covid,v,convex,1\ny.png,covid,v,convex,5\nz.png,covid,v,sideways,\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string what = e.what();
    CHECK(what.find("line 3: field 'luss'") != std::string::npos);
    CHECK(what.find("line 4: field 'probe'") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("path,class,probe,luss\n"), DataError);
  CHECK_THROWS_AS(parse(""), DataError);
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.csv"), DataError);
  const std::vector<std::string> known = {"covid", "normal"};
  std::istringstream in("path,class,video_id,probe,luss\nx.png,other,v,convex,\n");
  CHECK_THROWS_AS(parse_manifest(in, "k.csv", known), DataError);
}

TEST_CASE("filter_convex") {
  auto records = grid_records(1, 1, 10);
  CHECK(filter_convex(records).size() == 10);
  for (auto& r : records) r.probe = Probe::Linear;
  CHECK(filter_convex(records).empty());
  for (int i = 0; i < 7; ++i) records[static_cast<std::size_t>(i) * 10 / 7].probe = Probe::Convex;
  const auto kept = filter_convex(records);
  CHECK(kept.size() == 7);
  for (const auto& r : kept) CHECK(r.probe == Probe::Convex);
}

TEST_CASE("filter_luss") {
  // class 0 normal, 1 covid, 2 pneumonia
  std::vector<SampleRecord> records;
  RandomStream rng(5);
  for (int i = 0; i < 20; ++i) {
    SampleRecord r{"f" + std::to_string(i), static_cast<int>(rng.below(3)), "v" + std::to_string(i), Probe::Convex,
                   std::nullopt};
    if (rng.below(5) != 0) r.luss = static_cast<int>(rng.below(4));
    records.push_back(r);
  }
  const std::set<int> all = {0, 1, 2, 3};
  CHECK(filter_luss(records, 0, 1, all, all).records.size() ==
        static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                               [](const auto& r) { return r.class_id == 2 || r.luss; })));

  const std::set<int> normal = {0}, covid = {2, 3};
  const auto result = filter_luss(records, 0, 1, normal, covid);
  std::size_t expected = 0, missing = 0;
  for (const auto& r : records) {
    if (r.class_id == 2) {
      ++expected;
    } else if (!r.luss) {
      ++missing;
    } else if ((r.class_id == 0 ? normal : covid).count(*r.luss)) {
      ++expected;
    }
  }
  CHECK(result.records.size() == expected);
  CHECK(result.missing_score == missing);
  CHECK(result.records.size() + result.missing_score + result.rejected_score == records.size());

  const std::vector<SampleRecord> one = {{"n.png", 0, "v", Probe::Convex, 2}};
  CHECK(filter_luss(one, 0, 1, normal, covid).records.empty());
  CHECK_THROWS_AS(filter_luss(one, 0, 1, {4}, covid), std::invalid_argument);
}

TEST_CASE("split_by_video: single video goes to train with a warning") {
  const auto records = grid_records(1, 1, 6);
  const SplitPair s = split_by_video(records, 0.9, 1);
  CHECK(s.train.size() == 6);
  CHECK(s.test.empty());
  REQUIRE(s.warnings.size() == 1);
  CHECK(s.warnings[0].find("single video") != std::string::npos);
}

TEST_CASE("split_by_video: two classes of ten videos") {
  const auto records = grid_records(2, 10, 10);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SplitPair s = split_by_video(records, 0.9, seed);
    CHECK(s.train.size() + s.test.size() == records.size());
    std::set<std::string> overlap;
    const auto tr = videos_of(s.train), te = videos_of(s.test);
    std::set_intersection(tr.begin(), tr.end(), te.begin(), te.end(), std::inserter(overlap, overlap.begin()));
    CHECK(overlap.empty());
    for (int c = 0; c < 2; ++c) {
      const auto n = std::count_if(s.test.begin(), s.test.end(), [&](const auto& r) { return r.class_id == c; });
      CHECK(n >= 5);
      CHECK(n <= 15);
    }
  }
  CHECK(split_by_video(records, 0.9, 3).test == split_by_video(records, 0.9, 3).test);
  CHECK_THROWS_AS(split_by_video(records, 1.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(split_by_video(records, 0.0, 3), std::invalid_argument);
}

TEST_CASE("split_by_video: uneven videos keep every class in both splits without leakage") {
  RandomStream rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<SampleRecord> records;
    for (int c = 0; c < 3; ++c) {
      const int videos = 2 + static_cast<int>(rng.below(8));
      for (int v = 0; v < videos; ++v) {
        const int frames = 1 + static_cast<int>(rng.below(30));
        for (int f = 0; f < frames; ++f) {
          records.push_back({"p", c, "t" + std::to_string(trial) + "c" + std::to_string(c) + "v" + std::to_string(v),
                             Probe::Convex, std::nullopt});
        }
      }
    }
    const SplitPair s = split_by_video(records, 0.9, static_cast<std::uint64_t>(trial));
    const auto tr = videos_of(s.train), te = videos_of(s.test);
    for (const auto& v : te) CHECK(tr.count(v) == 0);
    for (int c = 0; c < 3; ++c) {
      auto has = [c](const auto& set) {
        return std::any_of(set.begin(), set.end(), [c](const auto& r) { return r.class_id == c; });
      };
      CHECK(has(s.train));
      CHECK(has(s.test));
    }
  }
}

TEST_CASE("augmentation: cardinality and rotation group") {
  std::vector<SampleRecord> records(25262);
  CHECK(augment_rotations(std::span<const SampleRecord>(records)).size() == 101048);

  RandomStream rng(1);
  const Tensor img({2, 5, 5}, testutil::to_float(testutil::random_values(50, rng)));
  Tensor r = img;
  for (int i = 0; i < 4; ++i) r = rotate90(r, 1);
  CHECK(std::equal(r.values().begin(), r.values().end(), img.values().begin()));
  CHECK_THROWS_AS(rotate90(Tensor::zeros({1, 3, 4}), 1), std::invalid_argument);

  const std::vector<Tensor> images = {img, img, img};
  CHECK(augment_rotations(std::span<const Tensor>(images)).size() == 12);
}

TEST_CASE("augmentation: rot90 on an asymmetric 3x3 pattern matches index remapping") {
  // Counter-clockwise: out[i][j] = in[j][n-1-i].
  const Tensor in({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor out = rotate90(in, 1);
  const std::vector<float> expected = {3, 6, 9, 2, 5, 8, 1, 4, 7};
  CHECK(std::vector<float>(out.values().begin(), out.values().end()) == expected);
  for (int t = 0; t < 4; ++t) {
    const Tensor o = rotate90(in, t);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        std::size_t si = i, sj = j;
        for (int k = 0; k < t; ++k) {
          const std::size_t ni = sj, nj = 2 - si;
          si = ni;
          sj = nj;
        }
        CHECK(o.values()[i * 3 + j] == in.values()[si * 3 + sj]);
      }
    }
  }
}

TEST_CASE("preprocess: crop 0 is resize only, constant gray is preserved") {
  Image img = Image::blank(20, 20, 1, 77);
  const Tensor t = preprocess(img, 8, 0.0, 1);
  REQUIRE(t.shape() == Shape{1, 8, 8});
  for (const float v : t.values()) CHECK(v == doctest::Approx(77.0 / 255.0).epsilon(1e-6));

  Image rgb = Image::blank(6, 6, 3, 0);
  for (auto& p : rgb.pixels) p = 120;
  const Tensor t3 = preprocess(rgb, 4, 0.0, 1);
  for (const float v : t3.values()) CHECK(v == doctest::Approx(120.0 / 255.0).epsilon(1e-6));
  const Tensor g3 = preprocess(img, 4, 0.0, 3);
  CHECK(g3.shape() == Shape{3, 4, 4});

  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 20; ++x) img.at(x, y) = static_cast<std::uint8_t>(x * 10 + y);
  }
  const Tensor same = preprocess(img, 20, 0.0, 1);
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 20; ++x) CHECK(same.values()[y * 20 + x] == doctest::Approx(img.at(x, y) / 255.0));
  }
}

TEST_CASE("preprocess: crop then bilinear resize on a 100x100 gradient") {
  Image img = Image::blank(100, 100, 1);
  for (int y = 0; y < 100; ++y) {
    for (int x = 0; x < 100; ++x) img.at(x, y) = static_cast<std::uint8_t>((2 * y + x) % 256);
  }
  const int s = 16;
  const Tensor t = preprocess(img, s, 0.25, 1);
  // Hand-rolled corner-aligned bilinear over rows 25..99.
  auto src = [&](int x, int y) { return static_cast<double>(img.at(x, y + 25)); };
  auto oracle = [&](int ox, int oy) {
    const double fx = ox * 99.0 / (s - 1), fy = oy * 74.0 / (s - 1);
    const int x0 = std::min(static_cast<int>(fx), 98), y0 = std::min(static_cast<int>(fy), 73);
    const double ax = fx - x0, ay = fy - y0;
    const double v = (1 - ay) * ((1 - ax) * src(x0, y0) + ax * src(x0 + 1, y0)) +
                     ay * ((1 - ax) * src(x0, y0 + 1) + ax * src(x0 + 1, y0 + 1));
    return v / 255.0;
  };
  CHECK(t.values()[0] == doctest::Approx(img.at(0, 25) / 255.0));
  for (const auto& [ox, oy] : {std::pair{0, 0}, {s - 1, 0}, {0, s - 1}, {s - 1, s - 1}}) {
    CHECK(std::abs(t.values()[oy * s + ox] - oracle(ox, oy)) < 1e-3);
  }
  for (int oy = 0; oy < s; ++oy) {
    for (int ox = 0; ox < s; ++ox) CHECK(std::abs(t.values()[oy * s + ox] - oracle(ox, oy)) < 1e-3);
  }
  CHECK_THROWS_AS(preprocess(img, s, 1.0, 1), std::invalid_argument);
}

TEST_CASE("preprocess_file: undecodable input names the path") {
  const auto dir = testutil::scratch_dir("preprocess");
  {
    std::ofstream(dir / "broken.jpg") << "nope";
  }
  try {
    preprocess_file(dir / "broken.jpg", 8, 0.0, 1);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("broken.jpg") != std::string::npos);
  }
  {
    std::ofstream(dir / "f.vec") << "1.5 -2\n3e-1";
  }
  const Tensor f = read_feature_vector(dir / "f.vec");
  CHECK(f.shape() == Shape{3});
  CHECK(f.values()[2] == doctest::Approx(0.3));
}

TEST_CASE("sample_episode: exact counts in the tight case") {
  const SamplePool pool = rotation_pool(2, 10);
  RandomStream a(3), b(3);
  const Episode e = sample_episode(pool, 2, 5, 5, a);
  CHECK(e.support.size() == 10);
  CHECK(e.query.size() == 10);
  std::set<std::size_t> sources;
  for (const auto& s : e.support) sources.insert(s.source);
  for (const auto& q : e.query) sources.insert(q.source);
  CHECK(sources.size() == 20);
  const Episode again = sample_episode(pool, 2, 5, 5, b);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(again.support[i].source == e.support[i].source);
    CHECK(again.query[i].source == e.query[i].source);
  }
}

TEST_CASE("sample_episode: insufficient class is named") {
  SamplePool pool = rotation_pool(2, 6);
  pool.set_class_names({"covid", "normal"});
  RandomStream rng(1);
  try {
    sample_episode(pool, 2, 5, 5, rng);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("class 'covid'") != std::string::npos);
  }
  CHECK_THROWS_AS(sample_episode(pool, 3, 1, 1, rng), DataError);
}

TEST_CASE("sampler: ten thousand episodes audited") {
  const SamplePool pool = rotation_pool(3, 12);
  const EpisodeSampler sampler(pool, 3, 4, 3, 99);
  std::map<int, std::size_t> histogram;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const Episode e = sampler.episode(i);
    std::set<std::size_t> support_sources;
    std::vector<int> s_counts(3, 0), q_counts(3, 0);
    for (const auto& s : e.support) {
      support_sources.insert(s.source);
      ++s_counts[s.class_id];
    }
    REQUIRE(support_sources.size() == e.support.size());
    std::set<std::size_t> query_sources;
    for (const auto& q : e.query) {
      REQUIRE(support_sources.count(q.source) == 0);
      query_sources.insert(q.source);
      ++q_counts[q.class_id];
    }
    REQUIRE(query_sources.size() == e.query.size());
    for (int k = 0; k < 3; ++k) {
      REQUIRE(s_counts[k] == 4);
      REQUIRE(q_counts[k] == 3);
    }
    // Classes appear in label order.
    for (std::size_t j = 0; j < e.support.size(); ++j) REQUIRE(e.support[j].class_id == static_cast<int>(j / 4));
    for (const auto& s : e.support) ++histogram[static_cast<int>(s.source)];
  }
  // Uniform draws: each of the 36 sources appears in roughly 4/12 of episodes.
  for (const auto& [source, count] : histogram) CHECK(std::abs(static_cast<double>(count) - 10000.0 / 3.0) < 250.0);
  const Episode a = sampler.episode(17), b = sampler.episode(17);
  CHECK(a.support[0].source == b.support[0].source);
  const Tensor batch = episode_batch(a);
  CHECK(batch.shape() == Shape{21, 1, 2, 2});
}
