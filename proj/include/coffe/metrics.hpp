#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace coffe {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

/// Scores of one evaluation pass. Undefined per-class EERs are NaN and are
/// excluded from eer_avg; each one adds an entry to `warnings`.
struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double eer_avg = 0.0;
  std::vector<double> eer_per_class;
  ConfusionMatrix confusion;
  std::vector<std::string> warnings;
};

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

/// Unweighted mean of per-class F1 over all `n_classes`; a class with
/// precision + recall == 0 contributes 0.
double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                std::size_t n_classes);

/// confusion[true][pred] counts.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> preds,
                                 std::span<const std::size_t> labels, std::size_t n_classes);

/// Equal error rate of a two-sample detection problem: higher scores mean
/// "target". FRR(t) = #{pos < t}/|pos|, FAR(t) = #{neg >= t}/|neg|, swept
/// over every distinct score plus a threshold above all of them. When no
/// threshold gives FAR == FRR the rate is linearly interpolated along the
/// segment between the two bracketing operating points.
double equal_error_rate(std::span<const double> positives, std::span<const double> negatives);

struct OneVsAllEer {
  double average = 0.0;
  std::vector<double> per_class;  // NaN where undefined
  std::vector<std::string> warnings;
};

/// scores is row-major [N x n_classes]; class c is scored by column c, with
/// rows labeled c as positives and every other row as negatives.
OneVsAllEer eer_one_vs_all(std::span<const double> scores, std::span<const std::size_t> labels,
                           std::size_t n_classes);

/// Full report from posteriors (row argmax, first index on ties, is the prediction).
MetricsReport compute_metrics(std::span<const double> posteriors,
                              std::span<const std::size_t> labels, std::size_t n_classes);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& j);

/// Confusion matrix as CSV: one line per true class, counts by predicted class.
std::string confusion_csv(const ConfusionMatrix& confusion);

}  // namespace coffe
