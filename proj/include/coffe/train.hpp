#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "coffe/dataset.hpp"
#include "coffe/metrics.hpp"
#include "coffe/model.hpp"
#include "json.hpp"

namespace coffe {

struct TrainConfig {
  ArchConfig arch;
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lambda = 0.1;  // weight of the Chernoff term (coffe only)
  double s = 0.3;       // Chernoff exponent
  std::size_t patience = 5;
  double min_delta = 1e-4;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  double dropout_rate = 0.3;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators shaped like the parameters they track.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;

  static AdamState for_params(std::span<const Tensor> params);
};

/// One bias-corrected Adam update using each parameter's gradient buffer
/// (a missing buffer counts as a zero gradient).
void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& opt);

/// Patience-based stop rule on a validation loss; epochs are 1-based.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_delta)
      : patience_(patience), min_delta_(min_delta) {}

  /// Records one epoch; returns true when it is the new best.
  bool observe(std::size_t epoch, double val_loss);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  double min_delta_;
  std::size_t best_epoch_ = 0;
  double best_loss_ = 0.0;
  std::size_t stale_ = 0;
};

struct EpochLog {
  double train_total = 0.0, train_ce = 0.0, train_cd = 0.0;
  double val_total = 0.0, val_ce = 0.0, val_cd = 0.0;
};

struct TrainReport {
  TrainConfig config;
  std::vector<EpochLog> epochs;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;
  double wall_seconds = 0.0;
  /// Metrics of the restored best model on the validation split.
  MetricsReport heldout;
};

/// Wall-clock time is left out unless requested, so that identical runs
/// serialize to identical bytes.
nlohmann::json to_json(const TrainReport& report, bool include_timing = false);

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

/// Trains cfg.arch on `data_a` (and the paired `data_b` for fusion archs),
/// holding out a stratified validation split, and returns the parameters of
/// the best-validation epoch.
TrainResult train(const TrainConfig& cfg, const EmbeddingDataset& data_a,
                  const EmbeddingDataset* data_b = nullptr);

/// Class posteriors [N x n_classes], row-major, eval mode.
std::vector<double> predict_proba(const ModelParams& params, const EmbeddingDataset& a,
                                  const EmbeddingDataset* b = nullptr);

MetricsReport evaluate(const ModelParams& params, const EmbeddingDataset& a,
                       const EmbeddingDataset* b = nullptr);

}  // namespace coffe
