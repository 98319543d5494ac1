#include "coffe/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <unordered_map>
#include <unordered_set>

#include "byte_io.hpp"
#include "coffe/error.hpp"
#include "coffe/rng.hpp"

namespace coffe {

namespace {

std::vector<std::string> numbered_class_names(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t c = 1; c <= n; ++c) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "A%02zu", c);
    names.emplace_back(buf);
  }
  return names;
}

}  // namespace

std::vector<std::string> default_class_names() { return numbered_class_names(8); }

void EmbeddingDataset::validate() const {
  if (dim == 0) throw ValidationError("embedding dim must be positive");
  if (labels.empty()) throw ValidationError("dataset is empty");
  if (class_names.empty()) throw ValidationError("dataset has no class names");
  if (vectors.size() != labels.size() * dim)
    throw ValidationError("vector storage holds " + std::to_string(vectors.size()) +
                          " values, expected " + std::to_string(labels.size() * dim));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= class_names.size())
      throw ValidationError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " exceeds the " + std::to_string(class_names.size()) + " classes");
  for (std::size_t i = 0; i < vectors.size(); ++i)
    if (!std::isfinite(vectors[i]))
      throw ValidationError("non-finite value at row " + std::to_string(i / dim));
  if (sample_ids) {
    if (sample_ids->size() != labels.size())
      throw ValidationError("sample id count does not match row count");
    std::unordered_set<std::string_view> seen;
    for (const std::string& id : *sample_ids)
      if (!seen.insert(id).second) throw ValidationError("duplicate sample id '" + id + "'");
  }
}

EmbeddingDataset EmbeddingDataset::subset(std::span<const std::size_t> rows) const {
  EmbeddingDataset out;
  out.dim = dim;
  out.fm_name = fm_name;
  out.class_names = class_names;
  out.labels.reserve(rows.size());
  out.vectors.reserve(rows.size() * dim);
  if (sample_ids) out.sample_ids.emplace();
  for (std::size_t r : rows) {
    if (r >= count()) throw UsageError("subset: row " + std::to_string(r) + " out of range");
    out.labels.push_back(labels[r]);
    auto v = row(r);
    out.vectors.insert(out.vectors.end(), v.begin(), v.end());
    if (sample_ids) out.sample_ids->push_back((*sample_ids)[r]);
  }
  return out;
}

Tensor EmbeddingDataset::batch(std::span<const std::size_t> rows) const {
  std::vector<double> data;
  data.reserve(rows.size() * dim);
  for (std::size_t r : rows) {
    if (r >= count()) throw UsageError("batch: row " + std::to_string(r) + " out of range");
    for (float v : row(r)) data.push_back(static_cast<double>(v));
  }
  return Tensor({rows.size(), dim}, std::move(data));
}

// ---- EMB1 -------------------------------------------------------------------

namespace {
constexpr std::string_view kEmbeddingMagic = "EMB1";
constexpr std::uint8_t kFlagSampleIds = 0x1;
}  // namespace

std::string encode_embeddings(const EmbeddingDataset& ds) {
  ds.validate();
  if (ds.class_names.size() > 0xffff) throw ValidationError("too many class names");
  detail::ByteWriter w;
  w.put_bytes(kEmbeddingMagic);
  w.put_uint<std::uint32_t>(kEmbeddingFormatVersion);
  w.put_uint<std::uint32_t>(ds.dim);
  w.put_uint<std::uint64_t>(ds.count());
  w.put_uint<std::uint8_t>(ds.sample_ids ? kFlagSampleIds : 0);
  w.put_short_string(ds.fm_name, "fm_name");
  w.put_uint<std::uint16_t>(static_cast<std::uint16_t>(ds.class_names.size()));
  for (const std::string& name : ds.class_names) w.put_short_string(name, "class name");
  for (std::uint16_t label : ds.labels) w.put_uint<std::uint16_t>(label);
  if (ds.sample_ids)
    for (const std::string& id : *ds.sample_ids) w.put_short_string(id, "sample id");
  for (float v : ds.vectors) w.put_f32(v);
  return std::move(w.str());
}

EmbeddingDataset decode_embeddings(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.get_bytes(4, "magic") != kEmbeddingMagic)
    throw FormatError("not an EMB1 embedding file (bad magic)");
  const auto version = r.get_uint<std::uint32_t>("version");
  if (version != kEmbeddingFormatVersion)
    throw FormatError("unsupported EMB1 version " + std::to_string(version));
  EmbeddingDataset ds;
  ds.dim = r.get_uint<std::uint32_t>("dim");
  const auto count = r.get_uint<std::uint64_t>("count");
  const auto flags = r.get_uint<std::uint8_t>("flags");
  if (flags & ~kFlagSampleIds) throw FormatError("unknown EMB1 flag bits");
  ds.fm_name = r.get_short_string("fm_name");
  const auto n_classes = r.get_uint<std::uint16_t>("class count");
  ds.class_names.clear();
  for (std::uint16_t c = 0; c < n_classes; ++c) ds.class_names.push_back(r.get_short_string("class name"));
  if (count > r.remaining() / 2) throw FormatError("truncated payload while reading labels");
  ds.labels.resize(count);
  for (auto& label : ds.labels) label = r.get_uint<std::uint16_t>("labels");
  if (flags & kFlagSampleIds) {
    ds.sample_ids.emplace();
    ds.sample_ids->reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) ds.sample_ids->push_back(r.get_short_string("sample ids"));
  }
  if (ds.dim != 0 && count > r.remaining() / 4 / ds.dim)
    throw FormatError("truncated payload: header declares " + std::to_string(count) + " rows of " +
                      std::to_string(ds.dim) + " values");
  ds.vectors.resize(count * ds.dim);
  for (float& v : ds.vectors) v = r.get_f32("vectors");
  if (r.remaining() != 0) throw FormatError("trailing bytes after EMB1 payload");
  ds.validate();
  return ds;
}

void write_embedding_file(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_embeddings(ds));
}

EmbeddingDataset read_embedding_file(const std::filesystem::path& path) {
  return decode_embeddings(detail::read_file(path));
}

// ---- pairing ----------------------------------------------------------------

PairedDataset pair_datasets(const EmbeddingDataset& a, const EmbeddingDataset& b) {
  if (a.count() == 0 || b.count() == 0) throw ValidationError("cannot pair an empty dataset");
  if (a.class_names != b.class_names)
    throw ValidationError("datasets use different class name lists");
  std::vector<std::size_t> rows_a, rows_b;
  if (!a.sample_ids && !b.sample_ids) {
    if (a.count() != b.count())
      throw ValidationError("index join needs equal row counts (" + std::to_string(a.count()) +
                            " vs " + std::to_string(b.count()) + ")");
    for (std::size_t i = 0; i < a.count(); ++i) {
      if (a.labels[i] != b.labels[i])
        throw ValidationError("label conflict at row " + std::to_string(i));
      rows_a.push_back(i);
      rows_b.push_back(i);
    }
  } else if (a.sample_ids && b.sample_ids) {
    std::unordered_map<std::string_view, std::size_t> index_b;
    for (std::size_t i = 0; i < b.count(); ++i) index_b.emplace((*b.sample_ids)[i], i);
    for (std::size_t i = 0; i < a.count(); ++i) {
      const std::string& id = (*a.sample_ids)[i];
      auto it = index_b.find(id);
      if (it == index_b.end()) continue;
      if (a.labels[i] != b.labels[it->second])
        throw ValidationError("label conflict for sample id '" + id + "'");
      rows_a.push_back(i);
      rows_b.push_back(it->second);
    }
  } else {
    throw ValidationError("one dataset has sample ids and the other does not");
  }
  if (rows_a.empty()) throw ValidationError("datasets share no sample ids");
  return {a.subset(rows_a), b.subset(rows_b)};
}

// ---- synthetic clusters -------------------------------------------------------

namespace {

// Gram-Schmidt on a Gaussian matrix; rows form an orthonormal basis.
std::vector<double> random_rotation(std::size_t dim, Rng& rng) {
  std::vector<double> q(dim * dim);
  for (std::size_t i = 0; i < dim; ++i) {
    double* row = q.data() + i * dim;
    double norm = 0.0;
    while (norm < 1e-8) {
      for (std::size_t j = 0; j < dim; ++j) row[j] = rng.normal();
      for (std::size_t k = 0; k < i; ++k) {
        const double* prev = q.data() + k * dim;
        double dot = 0.0;
        for (std::size_t j = 0; j < dim; ++j) dot += row[j] * prev[j];
        for (std::size_t j = 0; j < dim; ++j) row[j] -= dot * prev[j];
      }
      norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) norm += row[j] * row[j];
      norm = std::sqrt(norm);
    }
    for (std::size_t j = 0; j < dim; ++j) row[j] /= norm;
  }
  return q;
}

std::string synth_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn%06zu", index);
  return buf;
}

}  // namespace

SyntheticSplit synth_dataset(std::size_t n_classes, std::size_t dim, std::size_t per_class,
                             double spread, std::uint64_t seed) {
  if (n_classes < 2 || n_classes > 0xffff) throw UsageError("n_classes must lie in [2, 65535]");
  if (dim < n_classes) throw UsageError("dim must be at least n_classes");
  if (dim > 0xffffffffULL) throw UsageError("dim too large");
  if (per_class < 5) throw UsageError("per_class must be at least 5");
  if (!std::isfinite(spread)) throw UsageError("spread must be finite");

  Rng noise_a(mix_seed(seed, 1)), noise_b(mix_seed(seed, 2)), rot_rng(mix_seed(seed, 3)),
      split_rng(mix_seed(seed, 4));
  const std::vector<double> rotation = random_rotation(dim, rot_rng);
  const std::size_t n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(per_class)));

  auto empty_view = [&](const char* name) {
    EmbeddingDataset ds;
    ds.dim = static_cast<std::uint32_t>(dim);
    ds.fm_name = name;
    ds.class_names = n_classes == 8 ? default_class_names() : numbered_class_names(n_classes);
    ds.sample_ids.emplace();
    return ds;
  };
  SyntheticSplit out{empty_view("synth-a"), empty_view("synth-b"), empty_view("synth-a"),
                     empty_view("synth-b")};

  std::vector<double> xa(dim), xb(dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::vector<std::size_t> order = split_rng.permutation(per_class);
    std::vector<bool> in_train(per_class, false);
    for (std::size_t k = 0; k < n_train; ++k) in_train[order[k]] = true;
    for (std::size_t k = 0; k < per_class; ++k) {
      for (std::size_t j = 0; j < dim; ++j) xa[j] = kSynthNoiseStd * noise_a.normal() + (j == c ? spread : 0.0);
      for (std::size_t i = 0; i < dim; ++i) {
        const double* rrow = rotation.data() + i * dim;
        double acc = 0.0;
        for (std::size_t j = 0; j < dim; ++j) acc += rrow[j] * xa[j];
        xb[i] = acc + kSynthNoiseStd * noise_b.normal();
      }
      EmbeddingDataset& da = in_train[k] ? out.train_a : out.test_a;
      EmbeddingDataset& db = in_train[k] ? out.train_b : out.test_b;
      const std::string id = synth_id(c * per_class + k);
      for (EmbeddingDataset* d : {&da, &db}) {
        d->labels.push_back(static_cast<std::uint16_t>(c));
        d->sample_ids->push_back(id);
      }
      for (double v : xa) da.vectors.push_back(static_cast<float>(v));
      for (double v : xb) db.vectors.push_back(static_cast<float>(v));
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t count, std::size_t batch_size,
                                                 std::uint64_t shuffle_seed, std::uint64_t epoch) {
  if (batch_size == 0) throw UsageError("batch_size must be at least 1");
  Rng rng(mix_seed(shuffle_seed, epoch));
  const std::vector<std::size_t> order = rng.permutation(count);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace coffe
