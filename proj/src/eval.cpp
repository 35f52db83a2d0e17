#include "protoshot/eval.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "protoshot/errors.hpp"

namespace protoshot {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
  counts_.assign(static_cast<std::size_t>(classes * classes), 0);
}

void ConfusionMatrix::accumulate(int truth, int predicted) {
  if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
    throw std::invalid_argument("ConfusionMatrix: pair (" + std::to_string(truth) + ", " +
                                std::to_string(predicted) + ") outside [0," +
                                std::to_string(classes_) + ")");
  }
  ++counts_[static_cast<std::size_t>(truth * classes_ + predicted)];
  ++total_;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("ConfusionMatrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

std::size_t ConfusionMatrix::at(int truth, int predicted) const {
  if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
    throw std::invalid_argument("ConfusionMatrix: index out of range");
  }
  return counts_[static_cast<std::size_t>(truth * classes_ + predicted)];
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (int k = 0; k < classes_; ++k) t += at(k, k);
  return t;
}

std::size_t ConfusionMatrix::row_sum(int truth) const {
  std::size_t s = 0;
  for (int p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::column_sum(int predicted) const {
  std::size_t s = 0;
  for (int t = 0; t < classes_; ++t) s += at(t, predicted);
  return s;
}

Metrics metrics_from_cm(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("metrics_from_cm: empty confusion matrix");
  Metrics m;
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
  for (int k = 0; k < cm.classes(); ++k) {
    const auto diag = static_cast<double>(cm.at(k, k));
    const std::size_t col = cm.column_sum(k);
    const std::size_t row = cm.row_sum(k);
    m.precision.push_back(col ? std::optional<double>(diag / static_cast<double>(col)) : std::nullopt);
    m.recall.push_back(row ? std::optional<double>(diag / static_cast<double>(row)) : std::nullopt);
  }
  return m;
}

EvalReport evaluate(const Encoder& encoder, const EpisodeSampler& sampler, const EvalOptions& options,
                    std::vector<QueryOutcome>* outcomes) {
  if (options.episodes == 0) throw std::invalid_argument("evaluate: episode count must be >= 1");
  NoGradGuard no_grad;
  const int way = sampler.way();
  ConfusionMatrix cm(way);
  EvalReport report;
  report.way = way;
  report.shots = sampler.shot();
  report.model = options.model;
  report.episodes = options.episodes;
  report.class_names = options.class_names;
  report.focus_class = options.focus_class;
  for (std::size_t e = 0; e < options.episodes; ++e) {
    const std::uint64_t index = options.first_episode + e;
    const Episode episode = sampler.episode(index);
    const Tensor embeddings = encoder.embed(episode_batch(episode));
    const std::size_t h = embeddings.dim(1);
    const auto rows = embeddings.values();
    std::vector<LabeledEmbedding> support;
    support.reserve(episode.support.size());
    for (std::size_t i = 0; i < episode.support.size(); ++i) {
      support.push_back({rows.subspan(i * h, h), episode.support[i].class_id});
    }
    const PrototypeSet protos = compute_prototypes(support, way);
    std::size_t correct = 0;
    for (std::size_t q = 0; q < episode.query.size(); ++q) {
      const auto row = rows.subspan((episode.support.size() + q) * h, h);
      Classification c = classify(row, protos, options.distance);
      const int truth = episode.query[q].class_id;
      cm.accumulate(truth, c.predicted);
      if (truth == c.predicted) ++correct;
      if (outcomes) {
        outcomes->push_back({index, q, truth, c.predicted, std::move(c.probabilities),
                             episode.query[q].source});
      }
    }
    report.episode_accuracy.push_back(static_cast<double>(correct) /
                                      static_cast<double>(episode.query.size()));
  }
  const Metrics m = metrics_from_cm(cm);
  report.accuracy = m.accuracy;
  report.precision = m.precision;
  report.recall = m.recall;
  report.confusion.assign(static_cast<std::size_t>(way), std::vector<std::size_t>(static_cast<std::size_t>(way)));
  for (int t = 0; t < way; ++t) {
    for (int p = 0; p < way; ++p) report.confusion[t][p] = cm.at(t, p);
  }
  return report;
}

std::string format_fixed4(double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("format_fixed4: value is not finite");
  char buffer[512];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value, std::chars_format::fixed);
  if (result.ec != std::errc()) throw std::runtime_error("format_fixed4: conversion failed");
  std::string text(buffer, result.ptr);
  bool negative = false;
  if (!text.empty() && text[0] == '-') {
    negative = true;
    text.erase(0, 1);
  }
  const auto dot = text.find('.');
  std::string whole = dot == std::string::npos ? text : text.substr(0, dot);
  std::string frac = dot == std::string::npos ? "" : text.substr(dot + 1);
  const bool round_up = frac.size() > 4 && frac[4] >= '5';
  frac.resize(4, '0');
  std::string digits = whole + frac;
  if (round_up) {
    int i = static_cast<int>(digits.size()) - 1;
    while (i >= 0 && digits[static_cast<std::size_t>(i)] == '9') digits[static_cast<std::size_t>(i--)] = '0';
    if (i < 0) {
      digits.insert(digits.begin(), '1');
    } else {
      ++digits[static_cast<std::size_t>(i)];
    }
  }
  std::string out = digits.substr(0, digits.size() - 4) + "." + digits.substr(digits.size() - 4);
  if (negative && out.find_first_not_of("0.") != std::string::npos) out.insert(out.begin(), '-');
  return out;
}

namespace {

std::string metric_cell(const std::vector<std::optional<double>>& values, int k) {
  if (k < 0 || static_cast<std::size_t>(k) >= values.size() || !values[k]) return "n/a";
  return format_fixed4(*values[k]);
}

}  // namespace

std::string format_report(std::span<const EvalReport> reports) {
  std::string out = "scenario | shots | model | accuracy | precision | recall\n";
  for (const auto& r : reports) {
    out += std::to_string(r.way) + "-way | " + std::to_string(r.shots) + " | " + r.model + " | " +
           format_fixed4(r.accuracy) + " | " + metric_cell(r.precision, r.focus_class) + " | " +
           metric_cell(r.recall, r.focus_class) + "\n";
  }
  return out;
}

nlohmann::json report_to_json(const EvalReport& report) {
  auto metric_array = [](const std::vector<std::optional<double>>& values) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& v : values) a.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    return a;
  };
  nlohmann::json j;
  j["scenario"] = std::to_string(report.way) + "-way";
  j["way"] = report.way;
  j["shots"] = report.shots;
  j["model"] = report.model;
  j["episodes"] = report.episodes;
  j["accuracy"] = report.accuracy;
  j["precision"] = metric_array(report.precision);
  j["recall"] = metric_array(report.recall);
  j["class_names"] = report.class_names;
  j["focus_class"] = report.focus_class;
  j["confusion"] = report.confusion;
  return j;
}

void write_report_jsonl(const std::filesystem::path& path, std::span<const EvalReport> reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write report " + path.string());
  for (const auto& r : reports) out << report_to_json(r).dump() << '\n';
  if (!out) throw DataError("write failed for report " + path.string());
}

}  // namespace protoshot
