#include "coffe/cli.hpp"

#include <charconv>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "byte_io.hpp"
#include "coffe/error.hpp"
#include "coffe/log.hpp"
#include "coffe/model.hpp"
#include "coffe/train.hpp"

namespace coffe::cli {

std::string projection_csv(const EmbeddingDataset& ds) {
  std::string out = "label";
  for (std::uint32_t d = 0; d < ds.dim; ++d) out += ",dim_" + std::to_string(d);
  out += '\n';
  char buf[64];
  for (std::size_t i = 0; i < ds.count(); ++i) {
    out += std::to_string(ds.labels[i]);
    for (float v : ds.row(i)) {
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      out += ',';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

void export_proj(const std::filesystem::path& features, const std::filesystem::path& out_csv) {
  detail::commit_outputs({{out_csv, projection_csv(read_embedding_file(features))}});
}

namespace {

struct SynthArgs {
  std::size_t dim = 0;
  std::size_t per_class = 0;
  double spread = 4.0;
  std::uint64_t seed = 0;
  std::string out_prefix;
};

struct TrainArgs {
  std::string arch = "cnn";
  std::string features_a, features_b;
  std::size_t epochs = 50;
  double lr = 1e-3;
  std::size_t batch = 32;
  double lambda = 0.1;
  double s = 0.3;
  std::size_t patience = 5;
  double val_fraction = 0.1;
  double dropout = 0.3;
  std::uint64_t seed = 0;
  std::string out, report;
};

struct EvalArgs {
  std::string model, features_a, features_b, report, confusion;
};

struct ExportArgs {
  std::string features_a, out;
};

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

int do_synth(const SynthArgs& a, std::ostream& out) {
  const SyntheticSplit split = synth_dataset(8, a.dim, a.per_class, a.spread, a.seed);
  const std::string p = a.out_prefix;
  detail::commit_outputs({{p + ".train.a.emb", encode_embeddings(split.train_a)},
                          {p + ".train.b.emb", encode_embeddings(split.train_b)},
                          {p + ".test.a.emb", encode_embeddings(split.test_a)},
                          {p + ".test.b.emb", encode_embeddings(split.test_b)}});
  out << "wrote " << split.train_a.count() << " train and " << split.test_a.count()
      << " test rows per view to " << p << ".{train,test}.{a,b}.emb\n";
  return kExitOk;
}

TrainConfig train_config(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.arch.arch = parse_arch(a.arch);
  cfg.lr = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.lambda = a.lambda;
  cfg.s = a.s;
  cfg.patience = a.patience;
  cfg.val_fraction = a.val_fraction;
  cfg.dropout_rate = a.dropout;
  cfg.seed = a.seed;
  return cfg;
}

// Flag-level checks that need no data; run before any file is opened.
void validate_train_flags(const TrainArgs& a) {
  TrainConfig cfg = train_config(a);
  if (is_fusion(cfg.arch.arch) && a.features_b.empty())
    throw UsageError("--arch " + a.arch + " requires --features-b");
  if (!is_fusion(cfg.arch.arch) && !a.features_b.empty())
    throw UsageError("--features-b is only valid for fusion architectures");
  // Placeholder dims large enough for any conv stack; the real ones come from the data.
  cfg.arch.input_dim_a = 1024;
  if (is_fusion(cfg.arch.arch)) cfg.arch.input_dim_b = 1024;
  cfg.validate();
}

int do_train(const TrainArgs& a, std::ostream& out) {
  validate_train_flags(a);
  TrainConfig cfg = train_config(a);
  const EmbeddingDataset da = read_embedding_file(a.features_a);
  EmbeddingDataset db;
  cfg.arch.input_dim_a = da.dim;
  if (is_fusion(cfg.arch.arch)) {
    db = read_embedding_file(a.features_b);
    cfg.arch.input_dim_b = db.dim;
  }
  const TrainResult result = train(cfg, da, is_fusion(cfg.arch.arch) ? &db : nullptr);
  log_message(LogLevel::info, "training took " + std::to_string(result.report.wall_seconds) + " s");
  std::vector<std::pair<std::filesystem::path, std::string>> outputs{
      {a.out, encode_model(result.params)}};
  if (!a.report.empty()) outputs.emplace_back(a.report, dump_json(to_json(result.report)));
  detail::commit_outputs(outputs);
  out << "arch=" << a.arch << " params=" << result.params.parameter_count()
      << " best_epoch=" << result.report.best_epoch
      << " stopped_epoch=" << result.report.stopped_epoch
      << " heldout_accuracy=" << result.report.heldout.accuracy << "\n";
  return kExitOk;
}

int do_eval(const EvalArgs& a, std::ostream& out) {
  const ModelParams params = read_model_file(a.model);
  const bool fusion = is_fusion(params.config.arch);
  if (fusion && a.features_b.empty())
    throw UsageError(std::string(arch_name(params.config.arch)) + " model requires --features-b");
  const EmbeddingDataset da = read_embedding_file(a.features_a);
  EmbeddingDataset db;
  if (fusion) db = read_embedding_file(a.features_b);
  const MetricsReport report = evaluate(params, da, fusion ? &db : nullptr);
  for (const std::string& w : report.warnings) log_message(LogLevel::error, "warning: " + w);
  std::vector<std::pair<std::filesystem::path, std::string>> outputs;
  if (!a.report.empty()) outputs.emplace_back(a.report, dump_json(to_json(report)));
  if (!a.confusion.empty()) outputs.emplace_back(a.confusion, confusion_csv(report.confusion));
  detail::commit_outputs(outputs);
  out << "accuracy=" << report.accuracy << " macro_f1=" << report.macro_f1
      << " eer_avg=" << report.eer_avg << "\n";
  return kExitOk;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Source attribution over foundation-model embeddings", "coffe"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* sc_synth = app.add_subcommand("synth", "generate paired synthetic embedding clusters");
  sc_synth->add_option("--dim", synth.dim, "embedding dimension")->required()->check(CLI::Range(8, 1 << 20));
  sc_synth->add_option("--per-class", synth.per_class, "samples per class")->required()->check(CLI::Range(5, 1 << 24));
  sc_synth->add_option("--spread", synth.spread, "distance of class means from the origin");
  sc_synth->add_option("--seed", synth.seed, "random seed");
  sc_synth->add_option("--out-prefix", synth.out_prefix, "output path prefix")->required();

  TrainArgs tr;
  auto* sc_train = app.add_subcommand("train", "train a classifier on embedding files");
  sc_train->add_option("--arch", tr.arch, "fcn | cnn | concat | coffe")
      ->check(CLI::IsMember({"fcn", "cnn", "concat", "coffe"}));
  sc_train->add_option("--features-a", tr.features_a, "EMB1 file (first view)")->required();
  sc_train->add_option("--features-b", tr.features_b, "EMB1 file (second view, fusion only)");
  sc_train->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber);
  sc_train->add_option("--lr", tr.lr)->check(CLI::PositiveNumber);
  sc_train->add_option("--batch", tr.batch)->check(CLI::PositiveNumber);
  sc_train->add_option("--lambda", tr.lambda)->check(CLI::NonNegativeNumber);
  sc_train->add_option("--s", tr.s, "Chernoff exponent in (0, 1)");
  sc_train->add_option("--patience", tr.patience)->check(CLI::PositiveNumber);
  sc_train->add_option("--val-fraction", tr.val_fraction);
  sc_train->add_option("--dropout", tr.dropout);
  sc_train->add_option("--seed", tr.seed);
  sc_train->add_option("--out", tr.out, "output CFM1 model")->required();
  sc_train->add_option("--report", tr.report, "training report JSON");

  EvalArgs ev;
  auto* sc_eval = app.add_subcommand("eval", "score a trained model on embedding files");
  sc_eval->add_option("--model", ev.model, "CFM1 model")->required();
  sc_eval->add_option("--features-a", ev.features_a)->required();
  sc_eval->add_option("--features-b", ev.features_b);
  sc_eval->add_option("--report", ev.report, "metrics JSON");
  sc_eval->add_option("--confusion", ev.confusion, "confusion matrix CSV");

  ExportArgs ex;
  auto* sc_export = app.add_subcommand("export-proj", "dump raw embeddings as CSV for projection");
  sc_export->add_option("--features-a", ex.features_a)->required();
  sc_export->add_option("--out", ex.out, "output CSV")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: usage: " << one_line(e.what()) << "\n";
    return kExitUsage;
  }

  try {
    if (sc_synth->parsed()) return do_synth(synth, out);
    if (sc_train->parsed()) return do_train(tr, out);
    if (sc_eval->parsed()) return do_eval(ev, out);
    if (sc_export->parsed()) {
      export_proj(ex.features_a, ex.out);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << one_line(e.what()) << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << "\n";
    return kExitDataError;
  }
  return kExitUsage;
}

}  // namespace coffe::cli
