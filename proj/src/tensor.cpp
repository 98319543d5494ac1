#include "coffe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "coffe/error.hpp"
#include "coffe/rng.hpp"

namespace coffe {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != data.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

const Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return *impl_;
}
Tensor::Impl& Tensor::impl() {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return *impl_;
}
Tensor::Impl& Tensor::shared() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::extent(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_str(s));
  return s[axis];
}
std::size_t Tensor::numel() const { return impl().data.size(); }
std::span<const double> Tensor::data() const { return impl().data; }
std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool on) { impl().requires_grad = on; }
bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const double> Tensor::grad() const { return impl().grad; }
std::span<double> Tensor::mutable_grad() const { return shared().grad; }

std::span<double> Tensor::ensure_grad() const {
  Impl& m = shared();
  if (m.grad.empty()) m.grad.assign(m.data.size(), 0.0);
  return m.grad;
}

void Tensor::zero_grad() const {
  Impl& m = shared();
  m.grad.assign(m.data.size(), 0.0);
}

void Tensor::clear_grad() const {
  Impl& m = shared();
  m.grad.clear();
  m.grad.shrink_to_fit();
}

Tensor Tensor::clone() const { return Tensor(shape(), impl().data, false); }

// ---- Graph ----------------------------------------------------------------

bool Graph::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void Graph::record(std::string name, std::vector<Tensor> inputs, Tensor output,
                   std::function<void()> backward) {
  output.set_requires_grad(true);
  nodes_.push_back({std::move(name), std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw UsageError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  for (Node& n : nodes_) {
    n.output.ensure_grad();
    for (Tensor& in : n.inputs)
      if (in.requires_grad()) in.ensure_grad();
  }
  Tensor seed = loss;
  if (!seed.requires_grad()) return;
  seed.ensure_grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

std::vector<std::string> Graph::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const Node& n : nodes_) names.push_back(n.name);
  return names;
}

// ---- ops ------------------------------------------------------------------

namespace {

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k)
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  check_finite("matmul", out);
  Tensor result({m, n}, std::move(out));
  if (g.tracks({&a, &b})) {
    g.record("matmul", {a, b}, result, [a, b, result, m, k, n]() mutable {
      std::span<const double> go = result.grad();
      if (a.requires_grad()) {
        std::span<double> ga = a.mutable_grad();
        std::span<const double> bd = b.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * bd[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        std::span<double> gb = b.mutable_grad();
        std::span<const double> ad = a.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            if (av == 0.0) continue;
            double* dst = gb.data() + p * n;
            const double* src = go.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) dst[j] += av * src[j];
          }
      }
    });
  }
  return result;
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", x, 2);
  require_rank("add_bias", bias, 1);
  const std::size_t m = x.extent(0), n = x.extent(1);
  if (bias.extent(0) != n)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs rows of " +
                         shape_str(x.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  std::span<const double> bd = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bd[j];
  check_finite("add_bias", out);
  Tensor result({m, n}, std::move(out));
  if (g.tracks({&x, &bias})) {
    g.record("add_bias", {x, bias}, result, [x, bias, result, m, n]() mutable {
      std::span<const double> go = result.grad();
      if (x.requires_grad()) {
        std::span<double> gx = x.mutable_grad();
        for (std::size_t i = 0; i < m * n; ++i) gx[i] += go[i];
      }
      if (bias.requires_grad()) {
        std::span<double> gb = bias.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
      }
    });
  }
  return result;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  check_finite("add", out);
  Tensor result(a.shape(), std::move(out));
  if (g.tracks({&a, &b})) {
    g.record("add", {a, b}, result, [a, b, result]() mutable {
      std::span<const double> go = result.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        std::span<double> gt = t->mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) gt[i] += go[i];
      }
    });
  }
  return result;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  check_finite("mul", out);
  Tensor result(a.shape(), std::move(out));
  if (g.tracks({&a, &b})) {
    g.record("mul", {a, b}, result, [a, b, result]() mutable {
      std::span<const double> go = result.grad();
      // a and b may alias (x * x); both contributions accumulate.
      if (a.requires_grad()) {
        std::span<double> ga = a.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        std::span<double> gb = b.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.data()[i];
      }
    });
  }
  return result;
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  check_finite("scale", out);
  Tensor result(x.shape(), std::move(out));
  if (g.tracks({&x})) {
    g.record("scale", {x}, result, [x, result, factor]() mutable {
      std::span<const double> go = result.grad();
      std::span<double> gx = x.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
    });
  }
  return result;
}

Tensor sum(Graph& g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  check_finite("sum", std::span<const double>(&acc, 1));
  Tensor result = Tensor::scalar(acc);
  if (g.tracks({&x})) {
    g.record("sum", {x}, result, [x, result]() mutable {
      const double go = result.grad()[0];
      for (double& v : x.mutable_grad()) v += go;
    });
  }
  return result;
}

Tensor mean(Graph& g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  acc /= n;
  check_finite("mean", std::span<const double>(&acc, 1));
  Tensor result = Tensor::scalar(acc);
  if (g.tracks({&x})) {
    g.record("mean", {x}, result, [x, result, n]() mutable {
      const double go = result.grad()[0] / n;
      for (double& v : x.mutable_grad()) v += go;
    });
  }
  return result;
}

Tensor relu(Graph& g, const Tensor& x) {
  std::vector<double> out(x.numel());
  std::span<const double> xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  check_finite("relu", out);
  Tensor result(x.shape(), std::move(out));
  if (g.tracks({&x})) {
    g.record("relu", {x}, result, [x, result]() mutable {
      std::span<const double> go = result.grad();
      std::span<const double> xd = x.data();
      std::span<double> gx = x.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (xd[i] > 0.0) gx[i] += go[i];
    });
  }
  return result;
}

Tensor softmax(Graph& g, const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2)
    throw DimensionError("softmax: expected rank 1 or 2, got " + shape_str(x.shape()));
  check_finite("softmax input", x.data());
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::span<const double> xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  check_finite("softmax", out);
  Tensor result(x.shape(), std::move(out));
  if (g.tracks({&x})) {
    g.record("softmax", {x}, result, [x, result, n, rows]() mutable {
      std::span<const double> go = result.grad();
      std::span<const double> y = result.data();
      std::span<double> gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t off = r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += go[off + j] * y[off + j];
        for (std::size_t j = 0; j < n; ++j) gx[off + j] += y[off + j] * (go[off + j] - dot);
      }
    });
  }
  return result;
}

Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (g.tracks({&x})) {
    g.record("reshape", {x}, result, [x, result]() mutable {
      std::span<const double> go = result.grad();
      std::span<double> gx = x.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  }
  return result;
}

Tensor flatten(Graph& g, const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("flatten: scalar input");
  const std::size_t batch = x.extent(0);
  return reshape(g, x, {batch, x.numel() / batch});
}

Tensor concat_cols(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank("concat_cols", a, 2);
  require_rank("concat_cols", b, 2);
  const std::size_t rows = a.extent(0);
  if (b.extent(0) != rows)
    throw DimensionError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const std::size_t na = a.extent(1), nb = b.extent(1), n = na + nb;
  std::vector<double> out(rows * n);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * na, na, out.data() + r * n);
    std::copy_n(b.data().data() + r * nb, nb, out.data() + r * n + na);
  }
  Tensor result({rows, n}, std::move(out));
  if (g.tracks({&a, &b})) {
    g.record("concat_cols", {a, b}, result, [a, b, result, rows, na, nb, n]() mutable {
      std::span<const double> go = result.grad();
      if (a.requires_grad()) {
        std::span<double> ga = a.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < na; ++j) ga[r * na + j] += go[r * n + j];
      }
      if (b.requires_grad()) {
        std::span<double> gb = b.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < nb; ++j) gb[r * nb + j] += go[r * n + na + j];
      }
    });
  }
  return result;
}

Tensor narrow_last(Graph& g, const Tensor& x, std::size_t length) {
  if (x.rank() < 1) throw DimensionError("narrow_last: scalar input");
  const std::size_t full = x.shape().back();
  if (length == 0 || length > full)
    throw DimensionError("narrow_last: length " + std::to_string(length) + " outside (0, " +
                         std::to_string(full) + "]");
  const std::size_t rows = x.numel() / full;
  Shape shape = x.shape();
  shape.back() = length;
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().data() + r * full, length, out.data() + r * length);
  Tensor result(std::move(shape), std::move(out));
  if (g.tracks({&x})) {
    g.record("narrow_last", {x}, result, [x, result, rows, full, length]() mutable {
      std::span<const double> go = result.grad();
      std::span<double> gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < length; ++t) gx[r * full + t] += go[r * length + t];
    });
  }
  return result;
}

Tensor conv1d(Graph& g, const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const bool batched = input.rank() == 3;
  if (!batched && input.rank() != 2)
    throw DimensionError("conv1d: input must be [C x L] or [B x C x L], got " +
                         shape_str(input.shape()));
  require_rank("conv1d weights", weights, 3);
  require_rank("conv1d bias", bias, 1);
  const std::size_t batch = batched ? input.extent(0) : 1;
  const std::size_t cin = input.extent(batched ? 1 : 0);
  const std::size_t len = input.extent(batched ? 2 : 1);
  const std::size_t cout = weights.extent(0), k = weights.extent(2);
  if (weights.extent(1) != cin)
    throw DimensionError("conv1d: weights " + shape_str(weights.shape()) + " vs input channels " +
                         std::to_string(cin));
  if (bias.extent(0) != cout)
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " vs " +
                         std::to_string(cout) + " filters");
  if (len < k)
    throw DimensionError("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                         std::to_string(k));
  const std::size_t olen = len - k + 1;

  std::vector<double> out(batch * cout * olen);
  const double* in = input.data().data();
  const double* w = weights.data().data();
  const double* bd = bias.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* dst = out.data() + (b * cout + o) * olen;
      std::fill_n(dst, olen, bd[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* src = in + (b * cin + c) * len;
        const double* wk = w + (o * cin + c) * k;
        for (std::size_t j = 0; j < k; ++j) {
          const double wv = wk[j];
          const double* s = src + j;
          for (std::size_t t = 0; t < olen; ++t) dst[t] += wv * s[t];
        }
      }
    }
  }
  check_finite("conv1d", out);
  Shape shape = batched ? Shape{batch, cout, olen} : Shape{cout, olen};
  Tensor result(std::move(shape), std::move(out));
  if (g.tracks({&input, &weights, &bias})) {
    g.record("conv1d", {input, weights, bias}, result,
             [input, weights, bias, result, batch, cin, len, cout, k, olen]() mutable {
               std::span<const double> go = result.grad();
               const double* in = input.data().data();
               const double* w = weights.data().data();
               double* gin = input.requires_grad() ? input.mutable_grad().data() : nullptr;
               double* gw = weights.requires_grad() ? weights.mutable_grad().data() : nullptr;
               double* gb = bias.requires_grad() ? bias.mutable_grad().data() : nullptr;
               for (std::size_t b = 0; b < batch; ++b) {
                 for (std::size_t o = 0; o < cout; ++o) {
                   const double* dy = go.data() + (b * cout + o) * olen;
                   if (gb) {
                     double acc = 0.0;
                     for (std::size_t t = 0; t < olen; ++t) acc += dy[t];
                     gb[o] += acc;
                   }
                   for (std::size_t c = 0; c < cin; ++c) {
                     const std::size_t ioff = (b * cin + c) * len;
                     const std::size_t woff = (o * cin + c) * k;
                     for (std::size_t j = 0; j < k; ++j) {
                       if (gw) {
                         const double* s = in + ioff + j;
                         double acc = 0.0;
                         for (std::size_t t = 0; t < olen; ++t) acc += dy[t] * s[t];
                         gw[woff + j] += acc;
                       }
                       if (gin) {
                         const double wv = w[woff + j];
                         double* d = gin + ioff + j;
                         for (std::size_t t = 0; t < olen; ++t) d[t] += wv * dy[t];
                       }
                     }
                   }
                 }
               }
             });
  }
  return result;
}

Tensor maxpool1d(Graph& g, const Tensor& input, std::size_t pool) {
  if (input.rank() < 1) throw DimensionError("maxpool1d: scalar input");
  if (pool < 1) throw UsageError("maxpool1d: pool size must be positive");
  const std::size_t len = input.shape().back();
  if (len < pool)
    throw DimensionError("maxpool1d: length " + std::to_string(len) + " shorter than pool " +
                         std::to_string(pool));
  const std::size_t olen = len / pool;
  const std::size_t rows = input.numel() / len;
  Shape shape = input.shape();
  shape.back() = olen;
  std::vector<double> out(rows * olen);
  std::vector<std::size_t> argmax(rows * olen);
  std::span<const double> xd = input.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < olen; ++t) {
      const std::size_t base = r * len + t * pool;
      std::size_t best = base;
      for (std::size_t j = 1; j < pool; ++j)
        if (xd[base + j] > xd[best]) best = base + j;
      out[r * olen + t] = xd[best];
      argmax[r * olen + t] = best;
    }
  Tensor result(std::move(shape), std::move(out));
  if (g.tracks({&input})) {
    g.record("maxpool1d", {input}, result,
             [input, result, argmax = std::move(argmax)]() mutable {
               std::span<const double> go = result.grad();
               std::span<double> gx = input.mutable_grad();
               for (std::size_t i = 0; i < go.size(); ++i) gx[argmax[i]] += go[i];
             });
  }
  return result;
}

Tensor dropout(Graph& g, const Tensor& x, double rate, std::uint64_t mask_seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  Rng rng(mask_seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  Tensor result(x.shape(), std::move(out));
  if (g.tracks({&x})) {
    g.record("dropout", {x}, result, [x, result, mask = std::move(mask)]() mutable {
      std::span<const double> go = result.grad();
      std::span<double> gx = x.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * mask[i];
    });
  }
  return result;
}

}  // namespace coffe
