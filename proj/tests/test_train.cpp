#include <cmath>

#include "coffe/error.hpp"
#include "coffe/rng.hpp"
#include "coffe/train.hpp"
#include "doctest.h"

using namespace coffe;

namespace {

TrainConfig small_config(Arch arch, std::size_t dim, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.arch.arch = arch;
  cfg.arch.input_dim_a = dim;
  if (is_fusion(arch)) cfg.arch.input_dim_b = dim;
  cfg.arch.conv_filters = {4, 8};
  cfg.arch.dense_width = 16;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.lr = 3e-3;
  cfg.seed = seed;
  return cfg;
}

const SyntheticSplit& small_synth() {
  static const SyntheticSplit s = synth_dataset(8, 16, 20, 2.5, 11);
  return s;
}

}  // namespace

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> params{Tensor({3}, {1.0, -2.0, 0.5}, true)};
    params[0].zero_grad();
    AdamState st = AdamState::for_params(params);
    adam_step(params, st, {});
    CHECK(std::vector<double>(params[0].data().begin(), params[0].data().end()) ==
          std::vector<double>{1.0, -2.0, 0.5});
    CHECK(st.t == 1);
    adam_step(params, st, {});
    CHECK(st.t == 2);
  }
  SUBCASE("first step on a unit gradient") {
    std::vector<Tensor> params{Tensor::scalar(1.0, true)};
    params[0].ensure_grad()[0] = 1.0;
    AdamState st = AdamState::for_params(params);
    adam_step(params, st, {});
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
    CHECK(std::abs(params[0].item() - (1.0 - 1e-3 / (1.0 + 1e-8))) <= 1e-15);
    CHECK(st.m[0].shape() == params[0].shape());
  }
  SUBCASE("identical runs follow identical trajectories") {
    auto run = [] {
      Rng rng(3);
      std::vector<Tensor> params{Tensor({4}, {0.1, 0.2, 0.3, 0.4}, true)};
      AdamState st = AdamState::for_params(params);
      for (int step = 0; step < 25; ++step) {
        auto g = params[0].ensure_grad();
        for (double& v : g) v = rng.normal();
        adam_step(params, st, {});
      }
      return std::vector<double>(params[0].data().begin(), params[0].data().end());
    };
    CHECK(run() == run());
  }
  SUBCASE("shape mismatch") {
    std::vector<Tensor> params{Tensor({2}, {1, 2}, true)};
    AdamState st = AdamState::for_params(std::vector<Tensor>{Tensor({3}, {0, 0, 0})});
    CHECK_THROWS_AS(adam_step(params, st, {}), DimensionError);
  }
}

TEST_CASE("EarlyStopping") {
  SUBCASE("loss rising from epoch 2 with patience 1") {
    EarlyStopping es(1, 1e-4);
    CHECK(es.observe(1, 1.0));
    CHECK(!es.should_stop());
    CHECK(!es.observe(2, 1.1));
    CHECK(es.should_stop());
    CHECK(es.best_epoch() == 1);
  }
  SUBCASE("improvements below min_delta do not count") {
    EarlyStopping es(2, 1e-4);
    es.observe(1, 1.0);
    CHECK(!es.observe(2, 1.0 - 5e-5));
    CHECK(es.observe(3, 0.9));
    CHECK(!es.observe(4, 0.95));
    CHECK(!es.should_stop());
    CHECK(!es.observe(5, 0.91));
    CHECK(es.should_stop());
    CHECK(es.best_epoch() == 3);
    CHECK(es.best_loss() == 0.9);
  }
}

TEST_CASE("TrainConfig validation") {
  TrainConfig cfg = small_config(Arch::fcn, 16, 0);
  CHECK_NOTHROW(cfg.validate());
  auto broken = [&](auto mutate) {
    TrainConfig c = cfg;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lr = 0; }).validate(), UsageError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.s = 1.0; }).validate(), UsageError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lambda = -0.1; }).validate(), UsageError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.epochs = 0; }).validate(), UsageError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.val_fraction = 1.0; }).validate(), UsageError);

  const TrainConfig defaults;
  CHECK(defaults.lr == 1e-3);
  CHECK(defaults.epochs == 50);
  CHECK(defaults.lambda == 0.1);
  CHECK(defaults.s == 0.3);
  CHECK(defaults.batch_size == 32);
  CHECK(defaults.patience == 5);
}

TEST_CASE("train") {
  const SyntheticSplit& data = small_synth();

  SUBCASE("runs are deterministic") {
    const TrainConfig cfg = small_config(Arch::coffe, 16, 5);
    const TrainResult r1 = train(cfg, data.train_a, &data.train_b);
    const TrainResult r2 = train(cfg, data.train_a, &data.train_b);
    CHECK(encode_model(r1.params) == encode_model(r2.params));
    CHECK(to_json(r1.report).dump() == to_json(r2.report).dump());
    const TrainResult r3 = train(small_config(Arch::coffe, 16, 6), data.train_a, &data.train_b);
    CHECK(encode_model(r1.params) != encode_model(r3.params));
  }
  SUBCASE("report bookkeeping") {
    TrainConfig cfg = small_config(Arch::coffe, 16, 1);
    cfg.epochs = 6;
    const TrainResult r = train(cfg, data.train_a, &data.train_b);
    const TrainReport& rep = r.report;
    CHECK(rep.epochs.size() == rep.stopped_epoch);
    CHECK(rep.best_epoch >= 1);
    CHECK(rep.best_epoch <= rep.stopped_epoch);
    CHECK(rep.stopped_epoch <= cfg.epochs);
    for (const EpochLog& e : rep.epochs) {
      CHECK(e.train_cd >= 0.0);
      CHECK(e.val_cd >= 0.0);
      CHECK(std::abs(e.val_total - (e.val_ce + cfg.lambda * e.val_cd)) <= 1e-12);
      // Restored parameters never come from a worse epoch.
      CHECK(e.val_total >= rep.epochs[rep.best_epoch - 1].val_total);
    }
    const nlohmann::json j = to_json(rep);
    CHECK(!j.contains("wall_seconds"));
    CHECK(to_json(rep, true).contains("wall_seconds"));
    CHECK(j["epochs"]["val_total"].size() == rep.stopped_epoch);
  }
  SUBCASE("coffe at lambda 0 retraces concat") {
    TrainConfig cc = small_config(Arch::concat, 16, 9), cf = cc;
    cf.arch.arch = Arch::coffe;
    cf.lambda = 0.0;
    const TrainResult a = train(cc, data.train_a, &data.train_b);
    const TrainResult b = train(cf, data.train_a, &data.train_b);
    REQUIRE(a.report.epochs.size() == b.report.epochs.size());
    for (std::size_t e = 0; e < a.report.epochs.size(); ++e) {
      CHECK(a.report.epochs[e].train_total == b.report.epochs[e].train_total);
      CHECK(a.report.epochs[e].val_total == b.report.epochs[e].val_total);
    }
    for (std::size_t i = 0; i < a.params.layers.size(); ++i) {
      const auto x = a.params.layers[i].value.data(), y = b.params.layers[i].value.data();
      CHECK(std::equal(x.begin(), x.end(), y.begin()));
    }
  }
  SUBCASE("input errors") {
    EmbeddingDataset one_class = data.train_a;
    std::fill(one_class.labels.begin(), one_class.labels.end(), 3);
    CHECK_THROWS_AS(train(small_config(Arch::fcn, 16, 0), one_class), ValidationError);
    CHECK_THROWS_AS(train(small_config(Arch::fcn, 17, 0), data.train_a), DimensionError);
    CHECK_THROWS_AS(train(small_config(Arch::coffe, 16, 0), data.train_a), UsageError);
  }
}

TEST_CASE("evaluate") {
  const SyntheticSplit& data = small_synth();
  TrainConfig cfg = small_config(Arch::cnn, 16, 2);
  const TrainResult r = train(cfg, data.train_a);
  const MetricsReport m1 = evaluate(r.params, data.test_a);
  const MetricsReport m2 = evaluate(r.params, data.test_a);
  CHECK(to_json(m1).dump() == to_json(m2).dump());
  double mean = 0.0;
  for (double e : m1.eer_per_class) mean += e / 8.0;
  CHECK(std::abs(m1.eer_avg - mean) <= 1e-12);
  std::size_t total = 0;
  for (const auto& row : m1.confusion)
    for (std::size_t v : row) total += v;
  CHECK(total == data.test_a.count());

  const std::vector<double> probs = predict_proba(r.params, data.test_a);
  CHECK(probs.size() == data.test_a.count() * 8);
  CHECK_THROWS_AS(evaluate(r.params, synth_dataset(8, 20, 5, 1.0, 1).test_a), DimensionError);

  SUBCASE("well separated data is classified perfectly") {
    const SyntheticSplit easy = synth_dataset(8, 16, 10, 30.0, 4);
    TrainConfig fc = small_config(Arch::fcn, 16, 3);
    fc.epochs = 30;
    fc.lr = 1e-2;
    const MetricsReport m = evaluate(train(fc, easy.train_a).params, easy.test_a);
    CHECK(m.accuracy == 1.0);
    CHECK(m.eer_avg == 0.0);
    for (std::size_t c = 0; c < 8; ++c) CHECK(m.confusion[c][c] == 2);
  }
}
