#pragma once

#include <cstddef>
#include <span>

#include "coffe/tensor.hpp"

namespace coffe {

/// Floor applied to every logarithm argument.
inline constexpr double kLogClamp = 1e-12;

/// Components of one objective evaluation. total == ce + lambda * cd.
struct LossValue {
  double total = 0.0;
  double ce = 0.0;
  double cd = 0.0;
  double lambda = 0.0;
  double s = 0.0;
};

/// Mean of -log(max(probs[i][label_i], 1e-12)) over rows. `probs` is a single
/// distribution [n] (one label) or a batch [B x n].
Tensor cross_entropy(Graph& g, const Tensor& probs, std::span<const std::size_t> labels);

/// Chernoff distance -log(max(sum_i p_i^s q_i^(1-s), 1e-12)).
/// For [n] inputs returns a scalar; for [B x n] inputs returns the per-row
/// distances as a [B] tensor. Inputs are expected to be normalized.
Tensor chernoff_distance(Graph& g, const Tensor& p, const Tensor& q, double s);

/// Scalar convenience form of chernoff_distance.
double chernoff_distance(std::span<const double> p, std::span<const double> q, double s);

/// ce + lambda * cd.
Tensor total_loss(Graph& g, const Tensor& ce, const Tensor& cd, double lambda);
double total_loss(double ce, double cd, double lambda);

}  // namespace coffe
