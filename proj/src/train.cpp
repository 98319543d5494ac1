#include "coffe/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "coffe/error.hpp"
#include "coffe/log.hpp"
#include "coffe/losses.hpp"
#include "coffe/rng.hpp"

namespace coffe {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("lr must be positive");
  if (!(s > 0.0 && s < 1.0)) throw UsageError("s must lie in (0, 1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw UsageError("lambda must be non-negative");
  if (epochs < 1) throw UsageError("epochs must be at least 1");
  if (batch_size < 1) throw UsageError("batch size must be at least 1");
  if (patience < 1) throw UsageError("patience must be at least 1");
  if (!(min_delta >= 0.0)) throw UsageError("min_delta must be non-negative");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw UsageError("val_fraction must lie in (0, 1)");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("dropout must lie in [0, 1)");
  ArchConfig a = arch;
  a.dropout_rate = dropout_rate;
  a.validate();
}

nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["arch"] = to_json(cfg.arch);
  j["lr"] = cfg.lr;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lambda"] = cfg.lambda;
  j["s"] = cfg.s;
  j["patience"] = cfg.patience;
  j["min_delta"] = cfg.min_delta;
  j["val_fraction"] = cfg.val_fraction;
  j["seed"] = cfg.seed;
  j["dropout_rate"] = cfg.dropout_rate;
  return j;
}

// ---- Adam -------------------------------------------------------------------

AdamState AdamState::for_params(std::span<const Tensor> params) {
  AdamState st;
  for (const Tensor& p : params) {
    st.m.push_back(Tensor::zeros(p.shape()));
    st.v.push_back(Tensor::zeros(p.shape()));
  }
  return st;
}

void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& opt) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].shape() != params[i].shape() || state.v[i].shape() != params[i].shape())
      throw DimensionError("adam_step: moment shape " + shape_str(state.m[i].shape()) +
                           " vs parameter " + shape_str(params[i].shape()));
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) p.ensure_grad();
    std::span<const double> g = p.grad();
    std::span<double> w = p.mutable_data();
    std::span<double> m = state.m[i].mutable_data();
    std::span<double> v = state.v[i].mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
      v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

// ---- early stopping -----------------------------------------------------------

bool EarlyStopping::observe(std::size_t epoch, double val_loss) {
  if (best_epoch_ == 0 || val_loss < best_loss_ - min_delta_) {
    best_epoch_ = epoch;
    best_loss_ = val_loss;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

// ---- reports --------------------------------------------------------------------

nlohmann::json to_json(const TrainReport& r, bool include_timing) {
  nlohmann::json j;
  j["config"] = to_json(r.config);
  auto column = [&](double EpochLog::*field) {
    nlohmann::json a = nlohmann::json::array();
    for (const EpochLog& e : r.epochs) a.push_back(e.*field);
    return a;
  };
  j["epochs"] = {{"train_total", column(&EpochLog::train_total)},
                 {"train_ce", column(&EpochLog::train_ce)},
                 {"train_cd", column(&EpochLog::train_cd)},
                 {"val_total", column(&EpochLog::val_total)},
                 {"val_ce", column(&EpochLog::val_ce)},
                 {"val_cd", column(&EpochLog::val_cd)}};
  j["stopped_epoch"] = r.stopped_epoch;
  j["best_epoch"] = r.best_epoch;
  j["heldout"] = to_json(r.heldout);
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

// ---- training -------------------------------------------------------------------

namespace {

struct Views {
  const EmbeddingDataset* a = nullptr;
  const EmbeddingDataset* b = nullptr;  // set for fusion archs
};

struct LossParts {
  Tensor total;
  double ce = 0.0;
  double cd = 0.0;
};

std::vector<std::size_t> labels_of(const EmbeddingDataset& ds, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(ds.labels[r]);
  return out;
}

LossParts batch_loss(Graph& g, const ModelParams& params, const Views& views,
                     std::span<const std::size_t> rows, const TrainConfig& cfg,
                     const ForwardMode& mode) {
  const Tensor xa = views.a->batch(rows);
  Tensor xb;
  if (views.b) xb = views.b->batch(rows);
  const std::vector<std::size_t> labels = labels_of(*views.a, rows);
  FusionOutput out = forward(g, params, xa, views.b ? &xb : nullptr, cfg.s, mode);
  Tensor ce = cross_entropy(g, out.probs, labels);
  LossParts parts{ce, ce.item(), 0.0};
  if (params.config.arch == Arch::coffe) {
    Tensor cd = mean(g, out.cd);
    parts.cd = cd.item();
    parts.total = total_loss(g, ce, cd, cfg.lambda);
  }
  return parts;
}

// Loss over a whole split, in eval mode, as a row-weighted mean of chunk losses.
EpochLog split_loss(const ModelParams& params, const Views& views,
                    std::span<const std::size_t> rows, const TrainConfig& cfg) {
  constexpr std::size_t kChunk = 256;
  EpochLog log;
  double total = 0.0, ce = 0.0, cd = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    const auto chunk = rows.subspan(start, std::min(kChunk, rows.size() - start));
    Graph g(false);
    LossParts p = batch_loss(g, params, views, chunk, cfg, {});
    const double w = static_cast<double>(chunk.size());
    total += p.total.item() * w;
    ce += p.ce * w;
    cd += p.cd * w;
  }
  const double n = static_cast<double>(rows.size());
  log.val_total = total / n;
  log.val_ce = ce / n;
  log.val_cd = cd / n;
  return log;
}

struct Split {
  std::vector<std::size_t> train, val;
};

Split stratified_split(const EmbeddingDataset& ds, double val_fraction, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(ds.class_names.size());
  for (std::size_t i = 0; i < ds.count(); ++i) by_class[ds.labels[i]].push_back(i);
  std::size_t present = 0;
  for (const auto& rows : by_class) present += !rows.empty();
  if (present < 2) throw ValidationError("training data must contain at least two classes");

  Rng rng(mix_seed(seed, 0x5a11));
  Split split;
  for (const auto& rows : by_class) {
    if (rows.empty()) continue;
    const std::vector<std::size_t> order = rng.permutation(rows.size());
    std::size_t n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(rows.size())));
    if (rows.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, rows.size() - 1);
    else n_val = 0;
    for (std::size_t k = 0; k < rows.size(); ++k)
      (k < n_val ? split.val : split.train).push_back(rows[order[k]]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  if (split.val.empty()) throw ValidationError("validation split is empty");
  return split;
}

void check_dims(const ArchConfig& arch, const EmbeddingDataset& a, const EmbeddingDataset* b) {
  if (a.dim != arch.input_dim_a)
    throw DimensionError("features-a have dim " + std::to_string(a.dim) + ", model expects " +
                         std::to_string(arch.input_dim_a));
  if (is_fusion(arch.arch)) {
    if (!b) throw UsageError(std::string(arch_name(arch.arch)) + " needs a paired second view");
    if (b->dim != arch.input_dim_b.value())
      throw DimensionError("features-b have dim " + std::to_string(b->dim) + ", model expects " +
                           std::to_string(*arch.input_dim_b));
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const EmbeddingDataset& data_a,
                  const EmbeddingDataset* data_b) {
  const auto started = std::chrono::steady_clock::now();
  TrainConfig cfg = cfg_in;
  cfg.arch.dropout_rate = cfg.dropout_rate;
  cfg.validate();
  data_a.validate();
  check_dims(cfg.arch, data_a, data_b);

  PairedDataset paired;
  Views views{&data_a, nullptr};
  if (is_fusion(cfg.arch.arch)) {
    data_b->validate();
    paired = pair_datasets(data_a, *data_b);
    views = {&paired.a, &paired.b};
  }
  if (views.a->class_names.size() != cfg.arch.n_classes)
    throw ValidationError("data has " + std::to_string(views.a->class_names.size()) +
                          " classes, model has " + std::to_string(cfg.arch.n_classes));

  const Split split = stratified_split(*views.a, cfg.val_fraction, cfg.seed);
  ModelParams params = init_params(cfg.arch, cfg.seed);
  std::vector<Tensor> tensors = params.tensors();
  AdamState adam = AdamState::for_params(tensors);
  const AdamOptions opt{cfg.lr, 0.9, 0.999, 1e-8};
  const std::uint64_t shuffle_seed = mix_seed(cfg.seed, 0x5cf1e);
  const std::uint64_t dropout_seed = mix_seed(cfg.seed, 0xd40f);

  TrainResult result{params.clone(), {}};
  result.report.config = cfg;
  EarlyStopping stopper(cfg.patience, cfg.min_delta);
  std::uint64_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog log;
    double total = 0.0, ce = 0.0, cd = 0.0;
    for (const auto& positions : batch_iter(split.train.size(), cfg.batch_size, shuffle_seed, epoch)) {
      std::vector<std::size_t> rows;
      rows.reserve(positions.size());
      for (std::size_t pos : positions) rows.push_back(split.train[pos]);
      params.zero_grad();
      Graph g;
      const ForwardMode mode{true, mix_seed(dropout_seed, step++)};
      LossParts p = batch_loss(g, params, views, rows, cfg, mode);
      g.backward(p.total);
      adam_step(tensors, adam, opt);
      const double w = static_cast<double>(rows.size());
      total += p.total.item() * w;
      ce += p.ce * w;
      cd += p.cd * w;
    }
    const double n = static_cast<double>(split.train.size());
    log.train_total = total / n;
    log.train_ce = ce / n;
    log.train_cd = cd / n;
    const EpochLog val = split_loss(params, views, split.val, cfg);
    log.val_total = val.val_total;
    log.val_ce = val.val_ce;
    log.val_cd = val.val_cd;
    result.report.epochs.push_back(log);
    log_message(LogLevel::info, "epoch " + std::to_string(epoch) + " train " +
                                    std::to_string(log.train_total) + " val " +
                                    std::to_string(log.val_total));
    if (stopper.observe(epoch, log.val_total)) result.params = params.clone();
    result.report.stopped_epoch = epoch;
    if (stopper.should_stop()) break;
  }
  result.report.best_epoch = stopper.best_epoch();

  const EmbeddingDataset val_a = views.a->subset(split.val);
  if (views.b) {
    const EmbeddingDataset val_b = views.b->subset(split.val);
    result.report.heldout = evaluate(result.params, val_a, &val_b);
  } else {
    result.report.heldout = evaluate(result.params, val_a);
  }
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::vector<double> predict_proba(const ModelParams& params, const EmbeddingDataset& a,
                                  const EmbeddingDataset* b) {
  check_dims(params.config, a, b);
  PairedDataset paired;
  const EmbeddingDataset* va = &a;
  const EmbeddingDataset* vb = nullptr;
  if (is_fusion(params.config.arch)) {
    paired = pair_datasets(a, *b);
    va = &paired.a;
    vb = &paired.b;
  }
  constexpr std::size_t kChunk = 256;
  std::vector<double> out;
  out.reserve(va->count() * params.config.n_classes);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < va->count(); start += kChunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(va->count(), start + kChunk); ++i) rows.push_back(i);
    Graph g(false);
    Tensor probs;
    switch (params.config.arch) {
      case Arch::fcn: probs = fcn_forward(g, va->batch(rows), params); break;
      case Arch::cnn: probs = cnn_forward(g, va->batch(rows), params); break;
      case Arch::concat:
      case Arch::coffe: probs = concat_forward(g, va->batch(rows), vb->batch(rows), params); break;
    }
    out.insert(out.end(), probs.data().begin(), probs.data().end());
  }
  return out;
}

MetricsReport evaluate(const ModelParams& params, const EmbeddingDataset& a,
                       const EmbeddingDataset* b) {
  const std::vector<double> probs = predict_proba(params, a, b);
  std::vector<std::size_t> labels;
  if (is_fusion(params.config.arch)) {
    const PairedDataset paired = pair_datasets(a, *b);
    for (auto l : paired.a.labels) labels.push_back(l);
  } else {
    for (auto l : a.labels) labels.push_back(l);
  }
  for (std::size_t l : labels)
    if (l >= params.config.n_classes) throw ValidationError("label exceeds model class count");
  return compute_metrics(probs, labels, params.config.n_classes);
}

}  // namespace coffe
