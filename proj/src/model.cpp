#include "coffe/model.hpp"

#include <algorithm>
#include <cmath>

#include "byte_io.hpp"
#include "coffe/error.hpp"
#include "coffe/losses.hpp"
#include "coffe/rng.hpp"

namespace coffe {

std::string_view arch_name(Arch arch) {
  switch (arch) {
    case Arch::fcn: return "fcn";
    case Arch::cnn: return "cnn";
    case Arch::concat: return "concat";
    case Arch::coffe: return "coffe";
  }
  return "?";
}

Arch parse_arch(std::string_view name) {
  for (Arch a : {Arch::fcn, Arch::cnn, Arch::concat, Arch::coffe})
    if (arch_name(a) == name) return a;
  throw UsageError("unknown architecture '" + std::string(name) + "'");
}

std::size_t conv_stack_length(const ArchConfig& c, std::size_t dim) {
  std::size_t len = dim;
  for (int stage = 0; stage < 2; ++stage) {
    if (len < c.kernel || len - c.kernel + 1 < c.pool)
      throw DimensionError("input dim " + std::to_string(dim) +
                           " is too small for two conv(k=" + std::to_string(c.kernel) +
                           ")+pool(" + std::to_string(c.pool) + ") stages");
    len = (len - c.kernel + 1) / c.pool;
  }
  return len;
}

std::size_t conv_feature_width(const ArchConfig& c, std::size_t dim) {
  return c.conv_filters[1] * conv_stack_length(c, dim);
}

std::size_t head_input_width(const ArchConfig& c) {
  switch (c.arch) {
    case Arch::fcn: return c.input_dim_a;
    case Arch::cnn: return conv_feature_width(c, c.input_dim_a);
    case Arch::concat:
    case Arch::coffe:
      return conv_feature_width(c, c.input_dim_a) + conv_feature_width(c, c.input_dim_b.value());
  }
  return 0;
}

void ArchConfig::validate() const {
  if (input_dim_a == 0) throw UsageError("input_dim_a must be positive");
  if (is_fusion(arch)) {
    if (!input_dim_b) throw UsageError(std::string(arch_name(arch)) + " requires input_dim_b");
    if (*input_dim_b == 0) throw UsageError("input_dim_b must be positive");
  } else if (input_dim_b) {
    throw UsageError(std::string(arch_name(arch)) + " takes a single input; input_dim_b is set");
  }
  if (n_classes != 8) throw UsageError("n_classes must be 8, got " + std::to_string(n_classes));
  if (conv_filters[0] == 0 || conv_filters[1] == 0) throw UsageError("conv_filters must be positive");
  if (kernel == 0) throw UsageError("kernel must be positive");
  if (pool == 0) throw UsageError("pool must be positive");
  if (dense_width == 0) throw UsageError("dense_width must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw UsageError("dropout_rate must lie in [0, 1)");
  head_input_width(*this);  // throws DimensionError for inputs that are too short
}

nlohmann::json to_json(const ArchConfig& c) {
  nlohmann::json j;
  j["arch"] = arch_name(c.arch);
  j["input_dim_a"] = c.input_dim_a;
  j["input_dim_b"] = c.input_dim_b ? nlohmann::json(*c.input_dim_b) : nlohmann::json(nullptr);
  j["n_classes"] = c.n_classes;
  j["conv_filters"] = c.conv_filters;
  j["kernel"] = c.kernel;
  j["pool"] = c.pool;
  j["dense_width"] = c.dense_width;
  j["dropout_rate"] = c.dropout_rate;
  return j;
}

ArchConfig arch_config_from_json(const nlohmann::json& j) {
  ArchConfig c;
  try {
    c.arch = parse_arch(j.at("arch").get<std::string>());
    c.input_dim_a = j.at("input_dim_a").get<std::size_t>();
    if (!j.at("input_dim_b").is_null()) c.input_dim_b = j.at("input_dim_b").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.conv_filters = j.at("conv_filters").get<std::array<std::size_t, 2>>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.pool = j.at("pool").get<std::size_t>();
    c.dense_width = j.at("dense_width").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("architecture config: ") + e.what());
  }
  return c;
}

// ---- parameters -----------------------------------------------------------

const Tensor& ModelParams::get(std::string_view name) const {
  for (const NamedTensor& l : layers)
    if (l.name == name) return l.value;
  throw UsageError("model has no layer '" + std::string(name) + "'");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const NamedTensor& l : layers) n += l.value.numel();
  return n;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  out.reserve(layers.size());
  for (const NamedTensor& l : layers) out.push_back(l.value);
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy{config, {}};
  for (const NamedTensor& l : layers) {
    Tensor t = l.value.clone();
    t.set_requires_grad(l.value.requires_grad());
    copy.layers.push_back({l.name, std::move(t)});
  }
  return copy;
}

void ModelParams::zero_grad() {
  for (NamedTensor& l : layers) l.value.zero_grad();
}

std::vector<std::pair<std::string, Shape>> layer_manifest(const ArchConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> m;
  auto conv_stack = [&](const std::string& prefix) {
    m.emplace_back(prefix + "conv1.weight", Shape{c.conv_filters[0], 1, c.kernel});
    m.emplace_back(prefix + "conv1.bias", Shape{c.conv_filters[0]});
    m.emplace_back(prefix + "conv2.weight", Shape{c.conv_filters[1], c.conv_filters[0], c.kernel});
    m.emplace_back(prefix + "conv2.bias", Shape{c.conv_filters[1]});
  };
  if (c.arch == Arch::cnn) conv_stack("");
  if (is_fusion(c.arch)) {
    conv_stack("a.");
    conv_stack("b.");
  }
  m.emplace_back("dense1.weight", Shape{head_input_width(c), c.dense_width});
  m.emplace_back("dense1.bias", Shape{c.dense_width});
  m.emplace_back("out.weight", Shape{c.dense_width, c.n_classes});
  m.emplace_back("out.bias", Shape{c.n_classes});
  return m;
}

ModelParams init_params(const ArchConfig& config, std::uint64_t seed) {
  ModelParams params{config, {}};
  Rng rng(seed);
  for (auto& [name, shape] : layer_manifest(config)) {
    Tensor t = Tensor::zeros(shape, true);
    if (shape.size() > 1) {
      // conv [out x in x k] and dense [in x out] differ in where fan-in lives.
      const std::size_t fan_in = shape.size() == 3 ? shape[1] * shape[2] : shape[0];
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& v : t.mutable_data()) v = rng.normal() * stddev;
    }
    params.layers.push_back({name, std::move(t)});
  }
  return params;
}

// ---- forward --------------------------------------------------------------

namespace {

struct BatchView {
  Tensor x;           // [B x dim]
  bool single = false;
};

BatchView as_batch(Graph& g, const Tensor& x, std::size_t dim, const char* which) {
  if (x.rank() == 1) {
    if (x.extent(0) != dim)
      throw DimensionError(std::string(which) + ": expected dim " + std::to_string(dim) +
                           ", got " + std::to_string(x.extent(0)));
    return {reshape(g, x, {1, dim}), true};
  }
  if (x.rank() == 2) {
    if (x.extent(1) != dim)
      throw DimensionError(std::string(which) + ": expected dim " + std::to_string(dim) +
                           ", got " + std::to_string(x.extent(1)));
    return {x, false};
  }
  throw DimensionError(std::string(which) + ": expected [dim] or [B x dim], got " +
                       shape_str(x.shape()));
}

void require_arch(const ModelParams& p, std::initializer_list<Arch> allowed, const char* op) {
  if (std::find(allowed.begin(), allowed.end(), p.config.arch) == allowed.end())
    throw UsageError(std::string(op) + " called with " + std::string(arch_name(p.config.arch)) +
                     " parameters");
}

// [B x dim] -> [B x filters2 x T]
Tensor conv_branch(Graph& g, const Tensor& x, const ModelParams& p, const std::string& prefix) {
  const std::size_t batch = x.extent(0), dim = x.extent(1);
  const std::size_t pool = p.config.pool;
  Tensor h = reshape(g, x, {batch, 1, dim});
  h = maxpool1d(g, relu(g, conv1d(g, h, p.get(prefix + "conv1.weight"), p.get(prefix + "conv1.bias"))),
                pool);
  h = maxpool1d(g, relu(g, conv1d(g, h, p.get(prefix + "conv2.weight"), p.get(prefix + "conv2.bias"))),
                pool);
  return h;
}

Tensor dense_head(Graph& g, const Tensor& features, const ModelParams& p, const ForwardMode& mode) {
  Tensor h = relu(g, add_bias(g, matmul(g, features, p.get("dense1.weight")), p.get("dense1.bias")));
  if (mode.training) h = dropout(g, h, p.config.dropout_rate, mode.dropout_seed);
  return softmax(g, add_bias(g, matmul(g, h, p.get("out.weight")), p.get("out.bias")));
}

Tensor unbatch(Graph& g, const Tensor& probs, bool single) {
  return single ? reshape(g, probs, {probs.extent(1)}) : probs;
}

struct FusionFeatures {
  Tensor fa, fb;  // [B x filters2 x T]
  bool single = false;
};

FusionFeatures fusion_features(Graph& g, const Tensor& xa, const Tensor& xb, const ModelParams& p) {
  BatchView a = as_batch(g, xa, p.config.input_dim_a, "input a");
  BatchView b = as_batch(g, xb, p.config.input_dim_b.value(), "input b");
  if (a.x.extent(0) != b.x.extent(0) || a.single != b.single)
    throw DimensionError("fusion inputs have different batch sizes");
  return {conv_branch(g, a.x, p, "a."), conv_branch(g, b.x, p, "b."), a.single};
}

Tensor fusion_classifier(Graph& g, const FusionFeatures& f, const ModelParams& p,
                         const ForwardMode& mode) {
  Tensor joined = concat_cols(g, flatten(g, f.fa), flatten(g, f.fb));
  return unbatch(g, dense_head(g, joined, p, mode), f.single);
}

}  // namespace

Tensor fcn_forward(Graph& g, const Tensor& x, const ModelParams& p, const ForwardMode& mode) {
  require_arch(p, {Arch::fcn}, "fcn_forward");
  BatchView v = as_batch(g, x, p.config.input_dim_a, "fcn input");
  return unbatch(g, dense_head(g, v.x, p, mode), v.single);
}

Tensor cnn_forward(Graph& g, const Tensor& x, const ModelParams& p, const ForwardMode& mode) {
  require_arch(p, {Arch::cnn}, "cnn_forward");
  BatchView v = as_batch(g, x, p.config.input_dim_a, "cnn input");
  Tensor features = flatten(g, conv_branch(g, v.x, p, ""));
  return unbatch(g, dense_head(g, features, p, mode), v.single);
}

Tensor concat_forward(Graph& g, const Tensor& xa, const Tensor& xb, const ModelParams& p,
                      const ForwardMode& mode) {
  require_arch(p, {Arch::concat, Arch::coffe}, "concat_forward");
  return fusion_classifier(g, fusion_features(g, xa, xb, p), p, mode);
}

FusionOutput coffe_forward(Graph& g, const Tensor& xa, const Tensor& xb, const ModelParams& p,
                           double s, const ForwardMode& mode) {
  require_arch(p, {Arch::concat, Arch::coffe}, "coffe_forward");
  FusionFeatures f = fusion_features(g, xa, xb, p);
  const std::size_t steps = std::min(f.fa.shape().back(), f.fb.shape().back());
  Tensor da = softmax(g, flatten(g, narrow_last(g, f.fa, steps)));
  Tensor db = softmax(g, flatten(g, narrow_last(g, f.fb, steps)));
  Tensor cd = chernoff_distance(g, da, db, s);
  if (f.single) cd = reshape(g, cd, {});
  return {fusion_classifier(g, f, p, mode), cd};
}

FusionOutput forward(Graph& g, const ModelParams& p, const Tensor& xa, const Tensor* xb, double s,
                     const ForwardMode& mode) {
  switch (p.config.arch) {
    case Arch::fcn: return {fcn_forward(g, xa, p, mode), {}};
    case Arch::cnn: return {cnn_forward(g, xa, p, mode), {}};
    case Arch::concat:
    case Arch::coffe:
      if (!xb) throw UsageError("fusion architectures need a second input");
      if (p.config.arch == Arch::concat) return {concat_forward(g, xa, *xb, p, mode), {}};
      return coffe_forward(g, xa, *xb, p, s, mode);
  }
  throw UsageError("unknown architecture");
}

// ---- CFM1 -----------------------------------------------------------------

namespace {
constexpr std::string_view kModelMagic = "CFM1";
}

std::string encode_model(const ModelParams& params) {
  const auto manifest = layer_manifest(params.config);
  if (manifest.size() != params.layers.size())
    throw ValidationError("model layers do not match the architecture manifest");
  nlohmann::json header;
  header["config"] = to_json(params.config);
  header["parameter_count"] = params.parameter_count();
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const NamedTensor& l = params.layers[i];
    if (l.name != manifest[i].first || l.value.shape() != manifest[i].second)
      throw ValidationError("layer '" + l.name + "' does not match the architecture manifest");
    layers.push_back({{"name", l.name}, {"shape", l.value.shape()}});
  }
  header["layers"] = std::move(layers);
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.put_bytes(kModelMagic);
  w.put_uint<std::uint32_t>(kModelFormatVersion);
  w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  for (const NamedTensor& l : params.layers)
    for (double v : l.value.data()) w.put_f64(v);
  return std::move(w.str());
}

ModelParams decode_model(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.get_bytes(4, "magic") != kModelMagic) throw FormatError("not a CFM1 model file (bad magic)");
  const auto version = r.get_uint<std::uint32_t>("version");
  if (version != kModelFormatVersion)
    throw FormatError("unsupported CFM1 version " + std::to_string(version));
  const auto header_len = r.get_uint<std::uint32_t>("header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.get_bytes(header_len, "header"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("CFM1 header is not valid JSON: ") + e.what());
  }
  ModelParams params{arch_config_from_json(header.at("config")), {}};
  const auto manifest = layer_manifest(params.config);
  try {
    const auto& layers = header.at("layers");
    if (layers.size() != manifest.size())
      throw FormatError("CFM1 manifest has " + std::to_string(layers.size()) + " layers, expected " +
                        std::to_string(manifest.size()));
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const auto name = layers[i].at("name").get<std::string>();
      const auto shape = layers[i].at("shape").get<Shape>();
      if (name != manifest[i].first || shape != manifest[i].second)
        throw FormatError("CFM1 layer " + std::to_string(i) + " ('" + name +
                          "') does not match the architecture");
    }
    if (header.at("parameter_count").get<std::size_t>() != [&] {
          std::size_t n = 0;
          for (const auto& m : manifest) n += shape_numel(m.second);
          return n;
        }())
      throw FormatError("CFM1 parameter count does not match the manifest");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("CFM1 header: ") + e.what());
  }
  for (const auto& [name, shape] : manifest) {
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.get_f64("parameter values");
    params.layers.push_back({name, Tensor(shape, std::move(values), true)});
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after CFM1 payload");
  return params;
}

void write_model_file(const ModelParams& params, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_model(params));
}

ModelParams read_model_file(const std::filesystem::path& path) {
  return decode_model(detail::read_file(path));
}

}  // namespace coffe
