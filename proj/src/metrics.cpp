// metrics.cpp

#include "coffe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "coffe/error.hpp"

namespace coffe {

namespace {

void check_pair(const char* op, std::span<const std::size_t> preds,
                std::span<const std::size_t> labels) {
  if (preds.empty()) throw UsageError(std::string(op) + ": empty input");
  if (preds.size() != labels.size())
    throw DimensionError(std::string(op) + ": " + std::to_string(preds.size()) +
                         " predictions for " + std::to_string(labels.size()) + " labels");
}

}  // namespace

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  check_pair("accuracy", preds, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> preds,
                                 std::span<const std::size_t> labels, std::size_t n_classes) {
  if (preds.size() != labels.size())
    throw DimensionError("confusion_matrix: length mismatch");
  ConfusionMatrix m(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] >= n_classes || preds[i] >= n_classes)
      throw UsageError("confusion_matrix: class index out of range at row " + std::to_string(i));
    ++m[labels[i]][preds[i]];
  }
  return m;
}

double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                std::size_t n_classes) {
  check_pair("macro_f1", preds, labels);
  const ConfusionMatrix m = confusion_matrix(preds, labels, n_classes);
  double total = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t k = 0; k < n_classes; ++k) {
      predicted += m[k][c];
      actual += m[c][k];
    }
    const double tp = static_cast<double>(m[c][c]);
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double recall = actual ? tp / static_cast<double>(actual) : 0.0;
    if (precision + recall > 0.0) total += 2.0 * precision * recall / (precision + recall);
  }
  return total / static_cast<double>(n_classes);
}

double equal_error_rate(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty())
    throw UsageError("equal_error_rate: needs at least one positive and one negative score");
  std::vector<double> pos(positives.begin(), positives.end());
  std::vector<double> neg(negatives.begin(), negatives.end());
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> thresholds;
  thresholds.reserve(pos.size() + neg.size() + 1);
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  std::size_t pos_below = 0, neg_below = 0;
  double prev_far = 0.0, prev_diff = 0.0;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    const double t = thresholds[k];
    while (pos_below < pos.size() && pos[pos_below] < t) ++pos_below;
    while (neg_below < neg.size() && neg[neg_below] < t) ++neg_below;
    const double frr = static_cast<double>(pos_below) / np;
    const double far = static_cast<double>(neg.size() - neg_below) / nn;
    const double diff = far - frr;
    if (diff == 0.0) return far;
    if (diff < 0.0) {
      // k > 0: at the lowest threshold FRR is 0 and FAR is 1.
      const double alpha = prev_diff / (prev_diff - diff);
      return prev_far + alpha * (far - prev_far);
    }
    prev_far = far;
    prev_diff = diff;
  }
  throw NumericError("equal_error_rate: no FAR/FRR crossing found");
}

OneVsAllEer eer_one_vs_all(std::span<const double> scores, std::span<const std::size_t> labels,
                           std::size_t n_classes) {
  if (labels.empty()) throw UsageError("eer_one_vs_all: empty input");
  if (scores.size() != labels.size() * n_classes)
    throw DimensionError("eer_one_vs_all: score matrix has " + std::to_string(scores.size()) +
                         " entries, expected " + std::to_string(labels.size() * n_classes));
  OneVsAllEer result;
  result.per_class.assign(n_classes, std::numeric_limits<double>::quiet_NaN());
  double acc = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= n_classes)
        throw UsageError("eer_one_vs_all: label out of range at row " + std::to_string(i));
      (labels[i] == c ? pos : neg).push_back(scores[i * n_classes + c]);
    }
    if (pos.empty() || neg.empty()) {
      result.warnings.push_back("eer undefined for class " + std::to_string(c) + ": no " +
                                (pos.empty() ? "positive" : "negative") + " samples");
      continue;
    }
    result.per_class[c] = equal_error_rate(pos, neg);
    acc += result.per_class[c];
    ++defined;
  }
  result.average = defined ? acc / static_cast<double>(defined)
                           : std::numeric_limits<double>::quiet_NaN();
  return result;
}

MetricsReport compute_metrics(std::span<const double> posteriors,
                              std::span<const std::size_t> labels, std::size_t n_classes) {
  if (labels.empty()) throw UsageError("compute_metrics: empty input");
  if (posteriors.size() != labels.size() * n_classes)
    throw DimensionError("compute_metrics: posterior matrix does not match labels");
  std::vector<std::size_t> preds(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = posteriors.data() + i * n_classes;
    preds[i] = static_cast<std::size_t>(std::max_element(row, row + n_classes) - row);
  }
  MetricsReport report;
  report.accuracy = accuracy(preds, labels);
  report.macro_f1 = macro_f1(preds, labels, n_classes);
  report.confusion = confusion_matrix(preds, labels, n_classes);
  OneVsAllEer eer = eer_one_vs_all(posteriors, labels, n_classes);
  report.eer_avg = eer.average;
  report.eer_per_class = std::move(eer.per_class);
  report.warnings = std::move(eer.warnings);
  return report;
}

namespace {

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["accuracy"] = report.accuracy;
  j["macro_f1"] = report.macro_f1;
  j["eer_avg"] = number_or_null(report.eer_avg);
  nlohmann::json per = nlohmann::json::array();
  for (double v : report.eer_per_class) per.push_back(number_or_null(v));
  j["eer_per_class"] = std::move(per);
  j["confusion"] = report.confusion;
  j["warnings"] = report.warnings;
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.accuracy = j.at("accuracy").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.eer_avg = number_or_nan(j.at("eer_avg"));
    for (const auto& v : j.at("eer_per_class")) r.eer_per_class.push_back(number_or_nan(v));
    r.confusion = j.at("confusion").get<ConfusionMatrix>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics report: ") + e.what());
  }
  return r;
}

std::string confusion_csv(const ConfusionMatrix& confusion) {
  std::ostringstream os;
  for (const auto& row : confusion) {
    for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << row[k];
    os << '\n';
  }
  return os.str();
}

}  // namespace coffe
