#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "coffe/cli.hpp"
#include "coffe/dataset.hpp"
#include "coffe/error.hpp"
#include "coffe/losses.hpp"
#include "coffe/metrics.hpp"
#include "coffe/model.hpp"
#include "coffe/train.hpp"

namespace py = pybind11;
using namespace coffe;

namespace {

std::vector<double> flatten_scores(const py::array_t<double, py::array::c_style | py::array::forcecast>& scores,
                                   std::size_t& n_classes) {
  if (scores.ndim() != 2) throw DimensionError("scores must be a 2-d array");
  n_classes = static_cast<std::size_t>(scores.shape(1));
  return {scores.data(), scores.data() + scores.size()};
}

py::array_t<float> vectors_array(const EmbeddingDataset& ds) {
  py::array_t<float> out({ds.count(), static_cast<std::size_t>(ds.dim)});
  std::copy(ds.vectors.begin(), ds.vectors.end(), out.mutable_data());
  return out;
}

void set_vectors(EmbeddingDataset& ds, const py::array_t<float, py::array::c_style | py::array::forcecast>& v) {
  if (v.ndim() != 2) throw DimensionError("vectors must be a 2-d array");
  ds.dim = static_cast<std::uint32_t>(v.shape(1));
  ds.vectors.assign(v.data(), v.data() + v.size());
}

TrainConfig config_from_kwargs(const std::string& arch, const py::kwargs& kw) {
  TrainConfig cfg;
  cfg.arch.arch = parse_arch(arch);
  for (const auto& [key, value] : kw) {
    const std::string k = py::str(key);
    if (k == "lr") cfg.lr = value.cast<double>();
    else if (k == "epochs") cfg.epochs = value.cast<std::size_t>();
    else if (k == "batch_size") cfg.batch_size = value.cast<std::size_t>();
    else if (k == "lambda_") cfg.lambda = value.cast<double>();
    else if (k == "s") cfg.s = value.cast<double>();
    else if (k == "patience") cfg.patience = value.cast<std::size_t>();
    else if (k == "val_fraction") cfg.val_fraction = value.cast<double>();
    else if (k == "dropout") cfg.dropout_rate = value.cast<double>();
    else if (k == "seed") cfg.seed = value.cast<std::uint64_t>();
    else throw UsageError("unknown training option '" + k + "'");
  }
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Chernoff-regularized fusion classifiers over precomputed embeddings";

  auto base = py::register_exception<Error>(m, "CoffeError", PyExc_RuntimeError);
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  using Labels = std::vector<std::size_t>;
  using Values = std::vector<double>;
  m.def(
      "chernoff_distance",
      [](const Values& p, const Values& q, double s) { return chernoff_distance(p, q, s); },
      py::arg("p"), py::arg("q"), py::arg("s") = 0.3);
  m.def("total_loss", py::overload_cast<double, double, double>(&total_loss), py::arg("ce"),
        py::arg("cd"), py::arg("lambda_") = 0.1);
  m.def(
      "accuracy", [](const Labels& preds, const Labels& labels) { return accuracy(preds, labels); },
      py::arg("preds"), py::arg("labels"));
  m.def(
      "macro_f1",
      [](const Labels& preds, const Labels& labels, std::size_t n) { return macro_f1(preds, labels, n); },
      py::arg("preds"), py::arg("labels"), py::arg("n_classes") = 8);
  m.def(
      "confusion_matrix",
      [](const Labels& preds, const Labels& labels, std::size_t n) {
        return confusion_matrix(preds, labels, n);
      },
      py::arg("preds"), py::arg("labels"), py::arg("n_classes") = 8);
  m.def(
      "equal_error_rate",
      [](const Values& pos, const Values& neg) { return equal_error_rate(pos, neg); },
      py::arg("positives"), py::arg("negatives"));
  m.def(
      "eer_one_vs_all",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& scores,
         const std::vector<std::size_t>& labels) {
        std::size_t n_classes = 0;
        const std::vector<double> flat = flatten_scores(scores, n_classes);
        const OneVsAllEer r = eer_one_vs_all(flat, labels, n_classes);
        return py::make_tuple(r.average, r.per_class);
      },
      py::arg("scores"), py::arg("labels"), "Returns (average, per_class); undefined classes are NaN.");
  m.def(
      "compute_metrics",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& scores,
         const std::vector<std::size_t>& labels) {
        std::size_t n_classes = 0;
        const std::vector<double> flat = flatten_scores(scores, n_classes);
        return to_json(compute_metrics(flat, labels, n_classes)).dump();
      },
      py::arg("scores"), py::arg("labels"), "Metrics report as a JSON string.");

  py::class_<EmbeddingDataset>(m, "EmbeddingDataset")
      .def(py::init([](const py::array_t<float, py::array::c_style | py::array::forcecast>& vectors,
                       std::vector<std::uint16_t> labels, std::string fm_name,
                       std::optional<std::vector<std::string>> class_names,
                       std::optional<std::vector<std::string>> sample_ids) {
             EmbeddingDataset ds;
             set_vectors(ds, vectors);
             ds.labels = std::move(labels);
             ds.fm_name = std::move(fm_name);
             if (class_names) ds.class_names = std::move(*class_names);
             ds.sample_ids = std::move(sample_ids);
             ds.validate();
             return ds;
           }),
           py::arg("vectors"), py::arg("labels"), py::arg("fm_name") = "",
           py::arg("class_names") = py::none(), py::arg("sample_ids") = py::none())
      .def_readonly("dim", &EmbeddingDataset::dim)
      .def_readonly("fm_name", &EmbeddingDataset::fm_name)
      .def_readonly("class_names", &EmbeddingDataset::class_names)
      .def_readonly("labels", &EmbeddingDataset::labels)
      .def_readonly("sample_ids", &EmbeddingDataset::sample_ids)
      .def_property_readonly("vectors", &vectors_array)
      .def("__len__", &EmbeddingDataset::count)
      .def("__eq__", [](const EmbeddingDataset& a, const EmbeddingDataset& b) { return a == b; })
      .def("to_bytes", [](const EmbeddingDataset& ds) { return py::bytes(encode_embeddings(ds)); })
      .def_static("from_bytes", [](const py::bytes& b) { return decode_embeddings(std::string(b)); });

  m.def("read_embedding_file", &read_embedding_file, py::arg("path"));
  m.def("write_embedding_file", &write_embedding_file, py::arg("dataset"), py::arg("path"));
  m.def(
      "synth_dataset",
      [](std::size_t dim, std::size_t per_class, double spread, std::uint64_t seed) {
        SyntheticSplit s = synth_dataset(8, dim, per_class, spread, seed);
        py::dict out;
        out["train_a"] = std::move(s.train_a);
        out["train_b"] = std::move(s.train_b);
        out["test_a"] = std::move(s.test_a);
        out["test_b"] = std::move(s.test_b);
        return out;
      },
      py::arg("dim"), py::arg("per_class"), py::arg("spread") = 4.0, py::arg("seed") = 0);

  py::class_<ModelParams>(m, "Model")
      .def_property_readonly("arch", [](const ModelParams& p) { return std::string(arch_name(p.config.arch)); })
      .def_property_readonly("parameter_count", &ModelParams::parameter_count)
      .def_property_readonly("config", [](const ModelParams& p) { return to_json(p.config).dump(); })
      .def("to_bytes", [](const ModelParams& p) { return py::bytes(encode_model(p)); })
      .def_static("from_bytes", [](const py::bytes& b) { return decode_model(std::string(b)); })
      .def("save", [](const ModelParams& p, const std::filesystem::path& path) { write_model_file(p, path); })
      .def_static("load", &read_model_file)
      .def(
          "predict_proba",
          [](const ModelParams& p, const EmbeddingDataset& a, const EmbeddingDataset* b) {
            const std::vector<double> probs = predict_proba(p, a, b);
            py::array_t<double> out({a.count(), p.config.n_classes});
            std::copy(probs.begin(), probs.end(), out.mutable_data());
            return out;
          },
          py::arg("a"), py::arg("b") = nullptr)
      .def(
          "evaluate",
          [](const ModelParams& p, const EmbeddingDataset& a, const EmbeddingDataset* b) {
            return to_json(evaluate(p, a, b)).dump();
          },
          py::arg("a"), py::arg("b") = nullptr, "Metrics report as a JSON string.");

  m.def(
      "parameter_count",
      [](const std::string& arch, std::size_t dim_a, std::optional<std::size_t> dim_b) {
        ArchConfig cfg;
        cfg.arch = parse_arch(arch);
        cfg.input_dim_a = dim_a;
        cfg.input_dim_b = dim_b;
        cfg.validate();
        std::size_t n = 0;
        for (const auto& [name, shape] : layer_manifest(cfg)) n += shape_numel(shape);
        return n;
      },
      py::arg("arch"), py::arg("dim_a"), py::arg("dim_b") = py::none());

  m.def(
      "train",
      [](const std::string& arch, const EmbeddingDataset& a, const EmbeddingDataset* b,
         const py::kwargs& kw) {
        TrainConfig cfg = config_from_kwargs(arch, kw);
        cfg.arch.input_dim_a = a.dim;
        if (b) cfg.arch.input_dim_b = b->dim;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(cfg, a, b);
        }
        return py::make_tuple(std::move(r.params), to_json(r.report).dump());
      },
      py::arg("arch"), py::arg("a"), py::arg("b") = nullptr,
      "Train and return (model, report_json). Options: lr, epochs, batch_size, lambda_, s, "
      "patience, val_fraction, dropout, seed.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
