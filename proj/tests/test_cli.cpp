#include <sstream>

#include "coffe/cli.hpp"
#include "coffe/dataset.hpp"
#include "coffe/model.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support/temp_dir.hpp"

using coffe::testing::TempDir;
namespace cli = coffe::cli;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("cli synth") {
  TempDir dir;
  const std::string prefix = (dir / "demo").string();
  const Outcome r = run({"synth", "--dim", "16", "--per-class", "10", "--seed", "7", "--out-prefix", prefix});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(dir.listing() == std::vector<std::string>{"demo.test.a.emb", "demo.test.b.emb",
                                                  "demo.train.a.emb", "demo.train.b.emb"});
  const coffe::EmbeddingDataset train_a = coffe::read_embedding_file(prefix + ".train.a.emb");
  CHECK(train_a.dim == 16);
  CHECK(train_a.count() == 64);

  const std::string again = (dir / "again").string();
  run({"synth", "--dim", "16", "--per-class", "10", "--seed", "7", "--out-prefix", again});
  for (const char* part : {".train.a.emb", ".test.b.emb"})
    CHECK(TempDir::read(prefix + part) == TempDir::read(again + part));

  SUBCASE("usage errors touch no files") {
    TempDir empty;
    const std::string p = (empty / "x").string();
    for (const auto& args : std::vector<std::vector<std::string>>{
             {"synth", "--dim", "16", "--per-class", "4", "--out-prefix", p},
             {"synth", "--dim", "16", "--per-class", "10", "--out-prefix", p, "--bogus"},
             {"synth", "--per-class", "10", "--out-prefix", p},
             {"nonsense"},
             {}}) {
      const Outcome bad = run(args);
      CHECK(bad.code == cli::kExitUsage);
      CHECK(bad.err.rfind("error: usage:", 0) == 0);
      CHECK(line_count(bad.err) == 1);
    }
    CHECK(empty.listing().empty());
  }
}

TEST_CASE("cli train, eval and export") {
  TempDir dir;
  const std::string d = dir.path().string() + "/";
  REQUIRE(run({"synth", "--dim", "16", "--per-class", "12", "--spread", "3", "--seed", "3",
               "--out-prefix", d + "demo"})
              .code == 0);
  const std::vector<std::string> train_args{
      "train", "--arch", "coffe", "--features-a", d + "demo.train.a.emb", "--features-b",
      d + "demo.train.b.emb", "--epochs", "3", "--lambda", "0.1", "--s", "0.3", "--seed", "7"};

  auto with = [](std::vector<std::string> base, std::initializer_list<std::string> extra) {
    base.insert(base.end(), extra);
    return base;
  };
  const Outcome t1 = run(with(train_args, {"--out", d + "m1.cfm", "--report", d + "r1.json"}));
  INFO(t1.err);
  REQUIRE(t1.code == 0);
  const Outcome t2 = run(with(train_args, {"--out", d + "m2.cfm", "--report", d + "r2.json"}));
  REQUIRE(t2.code == 0);
  CHECK(TempDir::read(d + "m1.cfm") == TempDir::read(d + "m2.cfm"));
  CHECK(TempDir::read(d + "r1.json") == TempDir::read(d + "r2.json"));

  const coffe::ModelParams model = coffe::read_model_file(d + "m1.cfm");
  CHECK(model.config.arch == coffe::Arch::coffe);
  CHECK(model.config.input_dim_a == 16);
  const nlohmann::json report = nlohmann::json::parse(TempDir::read(d + "r1.json"));
  CHECK(report["config"]["lambda"] == 0.1);
  CHECK(report["config"]["s"] == 0.3);
  CHECK(report["config"]["lr"] == 1e-3);
  CHECK(report["epochs"]["train_total"].size() == report["stopped_epoch"].get<std::size_t>());

  SUBCASE("eval writes metrics and an 8x8 confusion grid") {
    const std::vector<std::string> eval_args{"eval", "--model", d + "m1.cfm", "--features-a",
                                             d + "demo.test.a.emb", "--features-b",
                                             d + "demo.test.b.emb"};
    const Outcome e1 = run(with(eval_args, {"--report", d + "e1.json", "--confusion", d + "c1.csv"}));
    INFO(e1.err);
    REQUIRE(e1.code == 0);
    const Outcome e2 = run(with(eval_args, {"--report", d + "e2.json", "--confusion", d + "c2.csv"}));
    REQUIRE(e2.code == 0);
    CHECK(TempDir::read(d + "e1.json") == TempDir::read(d + "e2.json"));
    const std::string csv = TempDir::read(d + "c1.csv");
    CHECK(csv == TempDir::read(d + "c2.csv"));
    CHECK(line_count(csv) == 8);
    CHECK(std::count(csv.begin(), csv.end(), ',') == 8 * 7);
    const nlohmann::json m = nlohmann::json::parse(TempDir::read(d + "e1.json"));
    CHECK(m["eer_per_class"].size() == 8);
    CHECK(m["accuracy"].get<double>() > 0.125);

    const Outcome missing_b = run({"eval", "--model", d + "m1.cfm", "--features-a", d + "demo.test.a.emb"});
    CHECK(missing_b.code == cli::kExitUsage);
  }
  SUBCASE("export-proj") {
    const Outcome x1 = run({"export-proj", "--features-a", d + "demo.test.a.emb", "--out", d + "p1.csv"});
    REQUIRE(x1.code == 0);
    run({"export-proj", "--features-a", d + "demo.test.a.emb", "--out", d + "p2.csv"});
    const std::string csv = TempDir::read(d + "p1.csv");
    CHECK(csv == TempDir::read(d + "p2.csv"));
    const coffe::EmbeddingDataset ds = coffe::read_embedding_file(d + "demo.test.a.emb");
    CHECK(line_count(csv) == ds.count() + 1);
    CHECK(csv.rfind("label,dim_0,dim_1,", 0) == 0);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    for (std::size_t i = 0; std::getline(lines, line); ++i)
      CHECK(std::stoul(line.substr(0, line.find(','))) == ds.labels[i]);
  }
  SUBCASE("failures leave no partial outputs") {
    // Shared ids carry different labels in the two files, caught before any write.
    REQUIRE(run({"synth", "--dim", "20", "--per-class", "6", "--out-prefix", d + "wide"}).code == 0);
    const Outcome bad = run({"train", "--arch", "coffe", "--features-a", d + "demo.train.a.emb",
                             "--features-b", d + "wide.train.b.emb", "--epochs", "1", "--out",
                             d + "bad.cfm", "--report", d + "bad.json"});
    CHECK(bad.code == cli::kExitDataError);
    CHECK(bad.err.rfind("error: validation:", 0) == 0);
    CHECK(!std::filesystem::exists(d + "bad.cfm"));
    CHECK(!std::filesystem::exists(d + "bad.json"));

    // Unwritable report path: the model must not be committed either.
    const Outcome io = run(with(train_args, {"--out", d + "m3.cfm", "--report", d + "nodir/r.json"}));
    CHECK(io.code == cli::kExitDataError);
    CHECK(io.err.rfind("error: io:", 0) == 0);
    CHECK(!std::filesystem::exists(d + "m3.cfm"));

    const Outcome format = run({"export-proj", "--features-a", d + "m1.cfm", "--out", d + "p.csv"});
    CHECK(format.code == cli::kExitDataError);
    CHECK(format.err.rfind("error: format:", 0) == 0);
    CHECK(!std::filesystem::exists(d + "p.csv"));

    const Outcome flags = run({"train", "--arch", "cnn", "--features-a", d + "missing.emb", "--s",
                               "1.5", "--out", d + "x.cfm"});
    CHECK(flags.code == cli::kExitUsage);
    const Outcome arch = run({"train", "--arch", "rnn", "--features-a", d + "demo.train.a.emb",
                              "--out", d + "x.cfm"});
    CHECK(arch.code == cli::kExitUsage);
    const Outcome no_b = run({"train", "--arch", "concat", "--features-a", d + "demo.train.a.emb",
                              "--out", d + "x.cfm"});
    CHECK(no_b.code == cli::kExitUsage);
    CHECK(!std::filesystem::exists(d + "x.cfm"));
  }
}

TEST_CASE("projection_csv") {
  coffe::EmbeddingDataset ds;
  ds.dim = 3;
  ds.fm_name = "t";
  ds.labels = {2, 7};
  ds.vectors = {0.5f, -1.0f, 0.1f, 3.0f, 0.0f, 1e-3f};
  const std::string csv = cli::projection_csv(ds);
  CHECK(csv == "label,dim_0,dim_1,dim_2\n2,0.5,-1,0.1\n7,3,0,0.001\n");
}
