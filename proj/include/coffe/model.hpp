#pragma once

// The four downstream architectures.
//
//   fcn     x -> dense(128) -> ReLU -> dropout -> dense(8) -> softmax
//   cnn     x -> [conv(64,k3) -> ReLU -> pool2 -> conv(128,k3) -> ReLU -> pool2]
//             -> flatten -> fcn head
//   concat  (xa, xb) -> one conv stack per input (separate weights)
//             -> concatenated flattened features -> fcn head
//   coffe   concat plus a Chernoff-distance term between the softmax-normalized
//           flattened branch features; the distance only enters the loss.
//
// Inputs are [dim] (single sample) or [B x dim] (batch).

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coffe/tensor.hpp"
#include "json.hpp"

namespace coffe {

enum class Arch { fcn, cnn, concat, coffe };

std::string_view arch_name(Arch arch);
/// Throws UsageError for unknown names.
Arch parse_arch(std::string_view name);
constexpr bool is_fusion(Arch arch) { return arch == Arch::concat || arch == Arch::coffe; }

struct ArchConfig {
  Arch arch = Arch::cnn;
  std::size_t input_dim_a = 0;
  std::optional<std::size_t> input_dim_b;
  std::size_t n_classes = 8;
  std::array<std::size_t, 2> conv_filters{64, 128};
  std::size_t kernel = 3;
  std::size_t pool = 2;
  std::size_t dense_width = 128;
  double dropout_rate = 0.3;

  /// Throws UsageError / DimensionError when the configuration cannot be built.
  void validate() const;

  bool operator==(const ArchConfig&) const = default;
};

/// Time extent left after the two conv+pool stages; DimensionError if an
/// input of `dim` does not survive them.
std::size_t conv_stack_length(const ArchConfig& config, std::size_t dim);

/// Width of the flattened conv-stack output for an input of `dim`.
std::size_t conv_feature_width(const ArchConfig& config, std::size_t dim);

/// Width of the vector entering the dense head.
std::size_t head_input_width(const ArchConfig& config);

nlohmann::json to_json(const ArchConfig& config);
ArchConfig arch_config_from_json(const nlohmann::json& j);

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Learnable state of one architecture, in a stable layer order.
struct ModelParams {
  ArchConfig config;
  std::vector<NamedTensor> layers;

  const Tensor& get(std::string_view name) const;
  std::size_t parameter_count() const;
  std::vector<Tensor> tensors() const;
  /// Deep copy (fresh buffers, no gradients).
  ModelParams clone() const;
  void zero_grad();
};

/// Layer manifest (name, shape) the configuration implies, in order.
std::vector<std::pair<std::string, Shape>> layer_manifest(const ArchConfig& config);

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
ModelParams init_params(const ArchConfig& config, std::uint64_t seed);

struct ForwardMode {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

Tensor fcn_forward(Graph& g, const Tensor& x, const ModelParams& params,
                   const ForwardMode& mode = {});
Tensor cnn_forward(Graph& g, const Tensor& x, const ModelParams& params,
                   const ForwardMode& mode = {});
Tensor concat_forward(Graph& g, const Tensor& xa, const Tensor& xb, const ModelParams& params,
                      const ForwardMode& mode = {});

struct FusionOutput {
  Tensor probs;
  /// Scalar for single-sample input, [B] for a batch.
  Tensor cd;
};

/// The branch feature maps generally differ in length (e.g. 254 vs 190 time
/// steps for 1024- and 768-dim inputs). The distance is taken over the
/// shared leading time steps of each channel; the classifier consumes the
/// full features.
FusionOutput coffe_forward(Graph& g, const Tensor& xa, const Tensor& xb,
                           const ModelParams& params, double s, const ForwardMode& mode = {});

/// Dispatches on params.config.arch. `xb` is ignored by single-input
/// architectures; `cd` is left undefined unless arch == coffe.
FusionOutput forward(Graph& g, const ModelParams& params, const Tensor& xa, const Tensor* xb,
                     double s, const ForwardMode& mode = {});

// ---- CFM1 model container -------------------------------------------------
//
// "CFM1" | u32 version | u32 header length | UTF-8 JSON header
//   {"config": ArchConfig, "layers": [{"name", "shape"}...], "parameter_count"}
// | f64 little-endian values in manifest order.

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::string encode_model(const ModelParams& params);
ModelParams decode_model(std::string_view bytes);
void write_model_file(const ModelParams& params, const std::filesystem::path& path);
ModelParams read_model_file(const std::filesystem::path& path);

}  // namespace coffe
