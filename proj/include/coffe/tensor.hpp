#pragma once

// Dense row-major float64 tensors with a tape-based reverse-mode autodiff.
//
// A Tensor is a cheap shared handle: copies alias the same buffers. Ops take
// the Graph they record onto as their first argument; a Graph constructed with
// recording disabled turns every op into a plain forward computation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace coffe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Raw write access; reserved for leaf updates (optimizers, loaders).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Gradient buffers belong to the shared node, so a const handle may
  // still accumulate into them.
  std::span<double> mutable_grad() const;
  /// Allocates a zero gradient buffer if absent.
  std::span<double> ensure_grad() const;
  void zero_grad() const;
  void clear_grad() const;

  /// Deep copy of data (no gradient, no graph linkage).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
  const Impl& impl() const;
  Impl& impl();
  Impl& shared() const;
};

/// Ordered record of executed ops. `backward` replays the recorded closures
/// in exact reverse order.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// True when an op over `inputs` must be recorded.
  bool tracks(std::initializer_list<const Tensor*> inputs) const;

  /// Registers the backward closure of an op. `inputs` are the op operands
  /// that require gradients; they get zero buffers before the sweep runs.
  void record(std::string name, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards.
  void backward(const Tensor& loss);

  /// Names of recorded ops in execution order.
  std::vector<std::string> op_names() const;

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::string name;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Node> nodes_;
};

// ---- ops ----------------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
/// Adds a length-n bias to every row of an [m x n] matrix.
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias);
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double factor);
/// Sum of all elements -> scalar.
Tensor sum(Graph& g, const Tensor& x);
/// Mean of all elements -> scalar.
Tensor mean(Graph& g, const Tensor& x);
Tensor relu(Graph& g, const Tensor& x);
/// Softmax over the last axis (rank 1 or 2).
Tensor softmax(Graph& g, const Tensor& x);
Tensor reshape(Graph& g, const Tensor& x, Shape shape);
/// Collapses everything after the leading (batch) axis.
Tensor flatten(Graph& g, const Tensor& x);
/// [B x m], [B x n] -> [B x (m + n)]
Tensor concat_cols(Graph& g, const Tensor& a, const Tensor& b);
/// Keeps the first `length` positions of the last axis.
Tensor narrow_last(Graph& g, const Tensor& x, std::size_t length);

/// Valid 1-D convolution, stride 1.
/// input [C_in x L] or [B x C_in x L], weights [C_out x C_in x K], bias [C_out].
Tensor conv1d(Graph& g, const Tensor& input, const Tensor& weights, const Tensor& bias);

/// Non-overlapping max pooling over the last axis; a trailing remainder is
/// dropped and ties route the gradient to the first maximal element.
Tensor maxpool1d(Graph& g, const Tensor& input, std::size_t pool = 2);

/// Inverted dropout: kept elements are scaled by 1/(1-rate). The mask is a
/// pure function of `mask_seed`.
Tensor dropout(Graph& g, const Tensor& x, double rate, std::uint64_t mask_seed);

}  // namespace coffe
