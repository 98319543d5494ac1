#include "coffe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "coffe/error.hpp"

namespace coffe {

Tensor cross_entropy(Graph& g, const Tensor& probs, std::span<const std::size_t> labels) {
  if (probs.rank() != 1 && probs.rank() != 2)
    throw DimensionError("cross_entropy: expected [n] or [B x n], got " + shape_str(probs.shape()));
  const std::size_t n = probs.shape().back();
  const std::size_t rows = probs.numel() / n;
  if (labels.size() != rows)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  for (std::size_t label : labels)
    if (label >= n)
      throw UsageError("cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                       std::to_string(n) + ")");
  std::span<const double> pd = probs.data();
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) acc -= std::log(std::max(pd[r * n + labels[r]], kLogClamp));
  acc /= static_cast<double>(rows);
  if (!std::isfinite(acc)) throw NumericError("cross_entropy: non-finite loss");
  Tensor result = Tensor::scalar(acc);
  if (g.tracks({&probs})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    g.record("cross_entropy", {probs}, result, [probs, result, lab = std::move(lab), n]() mutable {
      const double go = result.grad()[0] / static_cast<double>(lab.size());
      std::span<const double> pd = probs.data();
      std::span<double> gp = probs.mutable_grad();
      for (std::size_t r = 0; r < lab.size(); ++r) {
        const double p = pd[r * n + lab[r]];
        if (p > kLogClamp) gp[r * n + lab[r]] -= go / p;
      }
    });
  }
  return result;
}

namespace {

void check_exponent(double s) {
  if (!(s > 0.0 && s < 1.0))
    throw UsageError("chernoff_distance: exponent s must lie in (0, 1), got " + std::to_string(s));
}

// Bhattacharyya-type coefficient sum_i p_i^s q_i^(1-s).
double chernoff_coefficient(const double* p, const double* q, std::size_t n, double s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::pow(p[i], s) * std::pow(q[i], 1.0 - s);
  return acc;
}

}  // namespace

double chernoff_distance(std::span<const double> p, std::span<const double> q, double s) {
  check_exponent(s);
  if (p.size() != q.size())
    throw DimensionError("chernoff_distance: lengths differ (" + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()) + ")");
  const double c = chernoff_coefficient(p.data(), q.data(), p.size(), s);
  return -std::log(std::max(c, kLogClamp));
}

Tensor chernoff_distance(Graph& g, const Tensor& p, const Tensor& q, double s) {
  check_exponent(s);
  if (p.shape() != q.shape())
    throw DimensionError("chernoff_distance: shapes differ " + shape_str(p.shape()) + " vs " +
                         shape_str(q.shape()));
  if (p.rank() != 1 && p.rank() != 2)
    throw DimensionError("chernoff_distance: expected [n] or [B x n], got " + shape_str(p.shape()));
  const bool batched = p.rank() == 2;
  const std::size_t n = p.shape().back();
  const std::size_t rows = p.numel() / n;
  std::vector<double> coef(rows), out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    coef[r] = chernoff_coefficient(p.data().data() + r * n, q.data().data() + r * n, n, s);
    out[r] = -std::log(std::max(coef[r], kLogClamp));
    if (!std::isfinite(out[r])) throw NumericError("chernoff_distance: non-finite value");
  }
  Tensor result = batched ? Tensor({rows}, std::move(out)) : Tensor::scalar(out[0]);
  if (g.tracks({&p, &q})) {
    g.record("chernoff_distance", {p, q}, result,
             [p, q, result, coef = std::move(coef), n, rows, s]() mutable {
               std::span<const double> go = result.grad();
               std::span<const double> pd = p.data();
               std::span<const double> qd = q.data();
               double* gp = p.requires_grad() ? p.mutable_grad().data() : nullptr;
               double* gq = q.requires_grad() ? q.mutable_grad().data() : nullptr;
               for (std::size_t r = 0; r < rows; ++r) {
                 // Clamped rows have zero gradient.
                 if (coef[r] <= kLogClamp) continue;
                 const double f = -go[r] / coef[r];
                 for (std::size_t i = r * n; i < (r + 1) * n; ++i) {
                   const double term = std::pow(pd[i], s) * std::pow(qd[i], 1.0 - s);
                   if (gp && pd[i] > 0.0) gp[i] += f * s * term / pd[i];
                   if (gq && qd[i] > 0.0) gq[i] += f * (1.0 - s) * term / qd[i];
                 }
               }
             });
  }
  return result;
}

Tensor total_loss(Graph& g, const Tensor& ce, const Tensor& cd, double lambda) {
  return add(g, ce, scale(g, cd, lambda));
}

double total_loss(double ce, double cd, double lambda) { return ce + lambda * cd; }

}  // namespace coffe
