#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coffe/tensor.hpp"

namespace coffe {

std::vector<std::string> default_class_names();  // A01 ... A08

/// One embedding per clip, produced by a single foundation model.
struct EmbeddingDataset {
  std::uint32_t dim = 0;
  std::string fm_name;
  std::vector<std::string> class_names = default_class_names();
  std::vector<std::uint16_t> labels;
  std::vector<float> vectors;  // row-major count x dim
  std::optional<std::vector<std::string>> sample_ids;

  std::size_t count() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const { return {vectors.data() + i * dim, dim}; }

  /// Throws ValidationError on any broken invariant (empty, label range,
  /// non-finite values, duplicate or missing ids).
  void validate() const;

  /// Copy of the given rows, in the given order.
  EmbeddingDataset subset(std::span<const std::size_t> rows) const;

  /// Rows as a float64 [rows x dim] tensor.
  Tensor batch(std::span<const std::size_t> rows) const;

  bool operator==(const EmbeddingDataset&) const = default;
};

// ---- EMB1 container ---------------------------------------------------------
//
// All integers little-endian:
//   "EMB1" | u32 version=1 | u32 dim | u64 count | u8 flags (bit0: ids)
//   | u16 len + fm_name | u16 n_classes, then per class u16 len + name
//   | count x u16 labels | [ids: per row u16 len + bytes] | count x dim x f32

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

std::string encode_embeddings(const EmbeddingDataset& ds);
EmbeddingDataset decode_embeddings(std::string_view bytes);
void write_embedding_file(const EmbeddingDataset& ds, const std::filesystem::path& path);
EmbeddingDataset read_embedding_file(const std::filesystem::path& path);

/// Two views of the same clips, row-aligned, with shared labels.
struct PairedDataset {
  EmbeddingDataset a;
  EmbeddingDataset b;
  std::size_t count() const { return a.count(); }
};

/// Inner join on sample ids, in the row order of `a`. When neither side has
/// ids the rows are joined by index and counts must agree.
PairedDataset pair_datasets(const EmbeddingDataset& a, const EmbeddingDataset& b);

struct SyntheticSplit {
  EmbeddingDataset train_a, train_b, test_a, test_b;
};

/// Per-axis standard deviation of the isotropic cluster noise.
inline constexpr double kSynthNoiseStd = 0.8;

/// Gaussian clusters with means spread * e_c and isotropic noise of std
/// kSynthNoiseStd, split 80/20 per class. View b is a fixed random rotation
/// of view a plus fresh noise of the same scale.
SyntheticSplit synth_dataset(std::size_t n_classes, std::size_t dim, std::size_t per_class,
                             double spread, std::uint64_t seed);

/// Row indices for one epoch: a permutation determined by (shuffle_seed,
/// epoch) cut into batches; the final short batch is kept.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t count, std::size_t batch_size,
                                                 std::uint64_t shuffle_seed, std::uint64_t epoch);

}  // namespace coffe
