#include "protoshot/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "protoshot/errors.hpp"

namespace protoshot {

// ---------------------------------------------------------------------------
// Manifest

std::filesystem::path Manifest::resolve(const SampleRecord& record) const {
  const std::filesystem::path p(record.image_path);
  return p.is_absolute() ? p : base_dir / p;
}

int Manifest::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (class_names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::string trim(std::string_view text) {
  std::size_t begin = 0, end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  return std::string(text.substr(begin, end - begin));
}

std::string lower(std::string text) {
  for (char& c : text) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return text;
}

// Comma-separated fields; double quotes may wrap a field containing commas.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        current += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current += c;
    }
  }
  fields.push_back(trim(current));
  return fields;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"") == std::string::npos) return value;
  std::string out = "\"";
  for (const char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

constexpr const char* kColumns[] = {"path", "class", "video_id", "probe", "luss"};

}  // namespace

Manifest parse_manifest(std::istream& in, const std::string& source,
                        std::span<const std::string> known_classes) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) {
      header = split_csv(line);
      break;
    }
  }
  if (header.empty()) throw DataError(source + ": missing header row");
  std::size_t column[5];
  std::vector<std::string> missing;
  for (std::size_t c = 0; c < 5; ++c) {
    const auto it = std::find(header.begin(), header.end(), kColumns[c]);
    if (it == header.end()) {
      missing.push_back(kColumns[c]);
    } else {
      column[c] = static_cast<std::size_t>(it - header.begin());
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError(source + ": header is missing column(s): " + list);
  }

  struct Row {
    std::size_t line;
    std::vector<std::string> fields;
  };
  std::vector<Row> rows;
  std::vector<std::string> errors;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      errors.push_back("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
      continue;
    }
    rows.push_back({line_no, std::move(fields)});
  }

  Manifest manifest;
  std::set<std::string> names;
  if (!known_classes.empty()) {
    names.insert(known_classes.begin(), known_classes.end());
  } else {
    for (const auto& row : rows) {
      if (!row.fields[column[1]].empty()) names.insert(row.fields[column[1]]);
    }
  }
  manifest.class_names.assign(names.begin(), names.end());

  for (const auto& row : rows) {
    const auto& f = row.fields;
    const std::string where = "line " + std::to_string(row.line) + ": ";
    SampleRecord record;
    bool ok = true;
    record.image_path = f[column[0]];
    if (record.image_path.empty()) {
      errors.push_back(where + "field 'path' is empty");
      ok = false;
    }
    const std::string& cls = f[column[1]];
    record.class_id = manifest.class_index(cls);
    if (cls.empty()) {
      errors.push_back(where + "field 'class' is empty");
      ok = false;
    } else if (record.class_id < 0) {
      errors.push_back(where + "field 'class' value '" + cls + "' is not a known class");
      ok = false;
    }
    record.video_id = f[column[2]];
    if (record.video_id.empty()) {
      errors.push_back(where + "field 'video_id' is empty");
      ok = false;
    }
    const std::string probe = lower(f[column[3]]);
    if (probe == "convex") {
      record.probe = Probe::Convex;
    } else if (probe == "linear") {
      record.probe = Probe::Linear;
    } else {
      errors.push_back(where + "field 'probe' value '" + f[column[3]] +
                       "' is not convex or linear");
      ok = false;
    }
    const std::string& luss = f[column[4]];
    if (!luss.empty()) {
      int value = -1;
      const bool digits = std::all_of(luss.begin(), luss.end(),
                                      [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
      if (digits && luss.size() <= 3) value = std::stoi(luss);
      if (value < 0 || value > 3) {
        errors.push_back(where + "field 'luss' value '" + luss + "' is outside 0..3");
        ok = false;
      } else {
        record.luss = value;
      }
    }
    if (ok) manifest.records.push_back(std::move(record));
  }
  if (!errors.empty()) {
    std::string message = source + ": " + std::to_string(errors.size()) + " malformed row(s)";
    for (const auto& e : errors) message += "\n  " + e;
    throw DataError(message);
  }
  return manifest;
}

Manifest load_manifest(const std::filesystem::path& path,
                       std::span<const std::string> known_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest manifest = parse_manifest(in, path.string(), known_classes);
  manifest.base_dir = path.parent_path();
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "path,class,video_id,probe,luss\n";
  for (const auto& r : manifest.records) {
    out << csv_field(r.image_path) << ',' << csv_field(manifest.class_names.at(r.class_id)) << ','
        << csv_field(r.video_id) << ',' << (r.probe == Probe::Convex ? "convex" : "linear") << ',';
    if (r.luss) out << *r.luss;
    out << '\n';
  }
  if (!out) throw DataError("write failed for manifest " + path.string());
}

// ---------------------------------------------------------------------------
// Filters and split

std::vector<SampleRecord> filter_convex(std::span<const SampleRecord> records) {
  std::vector<SampleRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [](const SampleRecord& r) { return r.probe == Probe::Convex; });
  return out;
}

LussFilterResult filter_luss(std::span<const SampleRecord> records, int normal_class,
                             int covid_class, const std::set<int>& normal_scores,
                             const std::set<int>& covid_scores) {
  for (const auto* scores : {&normal_scores, &covid_scores}) {
    for (const int s : *scores) {
      if (s < 0 || s > 3) {
        throw std::invalid_argument("filter_luss: score " + std::to_string(s) +
                                    " is outside 0..3");
      }
    }
  }
  LussFilterResult result;
  for (const auto& r : records) {
    const std::set<int>* allowed = nullptr;
    if (normal_class >= 0 && r.class_id == normal_class) allowed = &normal_scores;
    if (covid_class >= 0 && r.class_id == covid_class) allowed = &covid_scores;
    if (!allowed) {
      result.records.push_back(r);
    } else if (!r.luss) {
      ++result.missing_score;
    } else if (allowed->count(*r.luss)) {
      result.records.push_back(r);
    } else {
      ++result.rejected_score;
    }
  }
  return result;
}

SplitPair split_by_video(std::span<const SampleRecord> records, double train_fraction,
                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split_by_video: train_fraction must lie in (0,1)");
  }
  struct Video {
    std::string id;
    std::size_t frames = 0;
    int owner = 0;
    bool train = true;
  };
  std::map<std::string, std::map<int, std::size_t>> class_counts;
  for (const auto& r : records) ++class_counts[r.video_id][r.class_id];

  std::map<int, std::vector<Video>> by_class;
  for (const auto& [id, counts] : class_counts) {
    Video v{id, 0, 0, true};
    std::size_t best = 0;
    for (const auto& [cls, n] : counts) {
      v.frames += n;
      if (n > best) {
        best = n;
        v.owner = cls;
      }
    }
    by_class[v.owner].push_back(std::move(v));
  }

  SplitPair split;
  std::map<std::string, bool> assignment;
  const RandomStream root(seed);
  for (auto& [cls, videos] : by_class) {
    RandomStream rng = root.fork(static_cast<std::uint64_t>(cls));
    for (std::size_t i = videos.size(); i > 1; --i) std::swap(videos[i - 1], videos[rng.below(i)]);
    std::stable_sort(videos.begin(), videos.end(),
                     [](const Video& a, const Video& b) { return a.frames > b.frames; });
    std::size_t total = 0;
    for (const auto& v : videos) total += v.frames;
    if (videos.size() == 1) {
      split.warnings.push_back("class " + std::to_string(cls) + " has a single video ('" +
                               videos[0].id + "'); all " + std::to_string(total) +
                               " frames assigned to train");
    } else {
      const double train_target = train_fraction * static_cast<double>(total);
      const double test_target = static_cast<double>(total) - train_target;
      double in_train = 0.0, in_test = 0.0;
      for (auto& v : videos) {
        v.train = (test_target - in_test) <= (train_target - in_train);
        (v.train ? in_train : in_test) += static_cast<double>(v.frames);
      }
      // Both splits must see the class: move the smallest video across if one is empty.
      const auto none = [&](bool train) {
        return std::none_of(videos.begin(), videos.end(), [&](const Video& v) { return v.train == train; });
      };
      for (const bool side : {false, true}) {
        if (none(side)) {
          auto it = std::find_if(videos.rbegin(), videos.rend(),
                                 [&](const Video& v) { return v.train != side; });
          it->train = side;
        }
      }
    }
    for (const auto& v : videos) assignment[v.id] = v.train;
  }
  for (const auto& r : records) {
    (assignment.at(r.video_id) ? split.train : split.test).push_back(r);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Augmentation

Tensor rotate90(const Tensor& image, int quarter_turns) {
  if (image.rank() < 2) {
    throw std::invalid_argument("rotate90: image needs two spatial axes, got " +
                                shape_string(image.shape()));
  }
  const std::size_t n = image.dim(image.rank() - 1);
  if (image.dim(image.rank() - 2) != n) {
    throw std::invalid_argument("rotate90: image is not square: " + shape_string(image.shape()));
  }
  const int turns = ((quarter_turns % 4) + 4) % 4;
  std::vector<float> out(image.values().begin(), image.values().end());
  if (turns == 0) return Tensor(image.shape(), std::move(out));
  const std::size_t planes = image.size() / (n * n);
  const auto in = image.values();
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = in.data() + p * n * n;
    float* dst = out.data() + p * n * n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        std::size_t si = i, sj = j;
        switch (turns) {
          case 1: si = j; sj = n - 1 - i; break;
          case 2: si = n - 1 - i; sj = n - 1 - j; break;
          case 3: si = n - 1 - j; sj = i; break;
        }
        dst[i * n + j] = src[si * n + sj];
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

std::vector<Tensor> augment_rotations(std::span<const Tensor> images) {
  std::vector<Tensor> out;
  out.reserve(images.size() * 4);
  for (const auto& image : images) {
    for (int t = 0; t < 4; ++t) out.push_back(rotate90(image, t));
  }
  return out;
}

std::vector<AugmentedRecord> augment_rotations(std::span<const SampleRecord> records) {
  std::vector<AugmentedRecord> out;
  out.reserve(records.size() * 4);
  for (const auto& r : records) {
    for (int t = 0; t < 4; ++t) out.push_back({r, t});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

namespace {

// Corner-aligned source coordinate of output index i.
double source_coord(std::size_t i, std::size_t out_extent, std::size_t in_extent) {
  if (out_extent <= 1 || in_extent <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(in_extent - 1) /
         static_cast<double>(out_extent - 1);
}

}  // namespace

Tensor preprocess(const Image& image, int target_size, double crop_top_fraction, int channels) {
  if (target_size < 1) throw std::invalid_argument("preprocess: target_size must be >= 1");
  if (!(crop_top_fraction >= 0.0 && crop_top_fraction < 1.0)) {
    throw std::invalid_argument("preprocess: crop_top_fraction must lie in [0,1)");
  }
  if (channels != 1 && channels != 3) throw std::invalid_argument("preprocess: channels must be 1 or 3");
  if (image.width < 1 || image.height < 1 || (image.channels != 1 && image.channels != 3)) {
    throw DataError("preprocess: unsupported image layout");
  }
  const auto removed = static_cast<int>(std::floor(crop_top_fraction * image.height + 1e-9));
  const int height = image.height - removed;
  if (height < 1) throw DataError("preprocess: crop removes every row");

  // Source planes as doubles after channel conversion.
  std::vector<std::vector<double>> planes(static_cast<std::size_t>(channels),
                                          std::vector<double>(static_cast<std::size_t>(image.width) * height));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * image.width + x;
      const int sy = y + removed;
      if (image.channels == channels) {
        for (int c = 0; c < channels; ++c) planes[c][idx] = image.at(x, sy, c);
      } else if (channels == 1) {
        planes[0][idx] = 0.299 * image.at(x, sy, 0) + 0.587 * image.at(x, sy, 1) +
                         0.114 * image.at(x, sy, 2);
      } else {
        for (int c = 0; c < 3; ++c) planes[c][idx] = image.at(x, sy, 0);
      }
    }
  }

  const auto s = static_cast<std::size_t>(target_size);
  const auto w = static_cast<std::size_t>(image.width);
  const auto h = static_cast<std::size_t>(height);
  std::vector<float> out(static_cast<std::size_t>(channels) * s * s);
  for (std::size_t c = 0; c < static_cast<std::size_t>(channels); ++c) {
    const auto& p = planes[c];
    for (std::size_t oy = 0; oy < s; ++oy) {
      const double fy = source_coord(oy, s, h);
      const std::size_t y0 = std::min(static_cast<std::size_t>(fy), h - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t ox = 0; ox < s; ++ox) {
        const double fx = source_coord(ox, s, w);
        const std::size_t x0 = std::min(static_cast<std::size_t>(fx), w - 1);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double tx = fx - static_cast<double>(x0);
        const double top = p[y0 * w + x0] + tx * (p[y0 * w + x1] - p[y0 * w + x0]);
        const double bottom = p[y1 * w + x0] + tx * (p[y1 * w + x1] - p[y1 * w + x0]);
        out[(c * s + oy) * s + ox] = static_cast<float>((top + ty * (bottom - top)) / 255.0);
      }
    }
  }
  return Tensor({static_cast<std::size_t>(channels), s, s}, std::move(out));
}

Tensor preprocess(std::span<const std::uint8_t> encoded, int target_size,
                  double crop_top_fraction, int channels) {
  return preprocess(decode_image(encoded), target_size, crop_top_fraction, channels);
}

Tensor preprocess_file(const std::filesystem::path& path, int target_size,
                       double crop_top_fraction, int channels) {
  const Image image = read_image(path);
  try {
    return preprocess(image, target_size, crop_top_fraction, channels);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Tensor read_feature_vector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open feature file " + path.string());
  std::vector<float> values;
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      const float v = std::stof(token, &used);
      if (used != token.size() || !std::isfinite(v)) throw std::invalid_argument(token);
      values.push_back(v);
    } catch (const std::exception&) {
      throw DataError("feature file " + path.string() + ": bad value '" + token + "'");
    }
  }
  if (values.empty()) throw DataError("feature file " + path.string() + " is empty");
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

// ---------------------------------------------------------------------------
// Episodes

SamplePool::SamplePool(int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("SamplePool: need at least one class");
  classes_.resize(static_cast<std::size_t>(num_classes));
}

void SamplePool::add(Tensor input, int class_id, std::size_t source) {
  if (class_id < 0 || class_id >= num_classes()) {
    throw std::invalid_argument("SamplePool: class " + std::to_string(class_id) +
                                " outside [0," + std::to_string(num_classes()) + ")");
  }
  if (!items_.empty() && items_.front().input.shape() != input.shape()) {
    throw std::invalid_argument("SamplePool: input shape " + shape_string(input.shape()) +
                                " differs from pool shape " +
                                shape_string(items_.front().input.shape()));
  }
  auto& index = classes_[static_cast<std::size_t>(class_id)];
  const auto [it, inserted] = index.group_of_source.try_emplace(source, index.groups.size());
  if (inserted) index.groups.emplace_back();
  index.groups[it->second].push_back(items_.size());
  items_.push_back({std::move(input), class_id, source});
}

void SamplePool::set_class_names(std::vector<std::string> names) {
  if (static_cast<int>(names.size()) != num_classes()) {
    throw std::invalid_argument("SamplePool: " + std::to_string(names.size()) + " names for " +
                                std::to_string(num_classes()) + " classes");
  }
  names_ = std::move(names);
}

std::string SamplePool::class_label(int class_id) const {
  if (class_id >= 0 && static_cast<std::size_t>(class_id) < names_.size()) {
    return "class '" + names_[static_cast<std::size_t>(class_id)] + "'";
  }
  return "class " + std::to_string(class_id);
}

std::size_t SamplePool::sources_in_class(int class_id) const {
  return groups(class_id).size();
}

const std::vector<std::vector<std::size_t>>& SamplePool::groups(int class_id) const {
  if (class_id < 0 || class_id >= num_classes()) {
    throw std::invalid_argument("SamplePool: class " + std::to_string(class_id) + " out of range");
  }
  return classes_[static_cast<std::size_t>(class_id)].groups;
}

Episode sample_episode(const SamplePool& pool, int way, int shot, int query,
                       RandomStream& stream) {
  if (way < 1 || shot < 1 || query < 1) {
    throw std::invalid_argument("sample_episode: way, shot and query must be >= 1");
  }
  if (way != pool.num_classes()) {
    throw DataError("sample_episode: " + std::to_string(way) + "-way episode requested from a pool with " +
                    std::to_string(pool.num_classes()) + " classes");
  }
  const auto need = static_cast<std::size_t>(shot + query);
  for (int k = 0; k < way; ++k) {
    if (pool.sources_in_class(k) < need) {
      throw DataError("sample_episode: " + pool.class_label(k) + " has " +
                      std::to_string(pool.sources_in_class(k)) + " samples, episode needs " +
                      std::to_string(need) + " (shot " + std::to_string(shot) + " + query " +
                      std::to_string(query) + ")");
    }
  }
  Episode episode;
  episode.way = way;
  episode.shot = shot;
  episode.query_count = query;
  episode.support.reserve(static_cast<std::size_t>(way * shot));
  episode.query.reserve(static_cast<std::size_t>(way * query));
  for (int k = 0; k < way; ++k) {
    const auto& groups = pool.groups(k);
    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Partial Fisher-Yates: the first `need` entries are a uniform draw without replacement.
    for (std::size_t t = 0; t < need; ++t) {
      std::swap(order[t], order[t + stream.below(order.size() - t)]);
    }
    for (std::size_t t = 0; t < need; ++t) {
      const auto& members = groups[order[t]];
      const std::size_t pick = members.size() == 1 ? members[0] : members[stream.below(members.size())];
      (t < static_cast<std::size_t>(shot) ? episode.support : episode.query).push_back(pool.item(pick));
    }
  }
  return episode;
}

EpisodeSampler::EpisodeSampler(const SamplePool& pool, int way, int shot, int query,
                               std::uint64_t seed)
    : pool_(&pool), way_(way), shot_(shot), query_(query), seed_(seed) {}

Episode EpisodeSampler::episode(std::uint64_t index) const {
  RandomStream stream = RandomStream(seed_).fork(index);
  return sample_episode(*pool_, way_, shot_, query_, stream);
}

Tensor episode_batch(const Episode& episode) {
  std::vector<Tensor> parts;
  parts.reserve(episode.support.size() + episode.query.size());
  for (const auto& s : episode.support) parts.push_back(s.input);
  for (const auto& q : episode.query) parts.push_back(q.input);
  return stack<float>(parts);
}

}  // namespace protoshot
