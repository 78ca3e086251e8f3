#pragma once

// Tape-free reverse-mode differentiation. Every op result keeps its parents
// and a closure that pushes its output gradient back into them; backward()
// walks the graph in reverse topological order.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "enas/tensor.hpp"

namespace enas {

class RankError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IndexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingCalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
struct Node {
  BasicTensor<T> value;
  BasicTensor<T> grad;
  // Leaves only: elements that received a gradient contribution since the
  // last clear. The optimizer updates exactly these.
  std::vector<std::uint8_t> touched;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  T* grad_buffer();
  void mark_all_touched();
  void accumulate(const T* src);
  void clear_grad();
};

/// Shared handle to a graph node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(BasicTensor<T> value);
  static Var parameter(BasicTensor<T> value);

  const BasicTensor<T>& value() const { return node_->value; }
  /// Direct write access, for optimizers and weight loading only.
  BasicTensor<T>& mutable_value() { return node_->value; }
  const BasicTensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<std::uint8_t>& touched() const { return node_->touched; }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  void zero_grad() { node_->clear_grad(); }
  bool valid() const { return static_cast<bool>(node_); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// While alive on the current thread, ops record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

/// Populates gradients of every reachable node. Leaf gradients accumulate
/// across calls until cleared; interior gradients are recomputed each call.
template <class T>
void backward(const Var<T>& loss);

enum class NormMode { train, eval };

template <class T>
struct NormStats {
  std::vector<T> mean;
  std::vector<T> var;
  bool operator==(const NormStats&) const = default;
};

inline constexpr double kNormEpsilon = 1e-5;

// ---- layer ops -------------------------------------------------------------

/// NCHW convolution without bias. weight is [O, C/groups, k, k], k odd.
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, int stride, int padding, int groups);

/// Per-channel normalization over (N, H, W). In train mode the batch
/// statistics are used and optionally written to `batch_stats`; in eval mode
/// `calib` is required.
template <class T>
Var<T> normalize_batch(const Var<T>& input, const Var<T>& scale, const Var<T>& shift, NormMode mode,
                       const NormStats<T>* calib = nullptr, NormStats<T>* batch_stats = nullptr);

template <class T>
Var<T> hswish(const Var<T>& x);

template <class T>
Var<T> relu(const Var<T>& x);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> scale(const Var<T>& a, T factor);

/// Sum of all elements, shape {1}.
template <class T>
Var<T> sum(const Var<T>& a);

/// [N, C, H, W] -> [N, C]
template <class T>
Var<T> global_avg_pool(const Var<T>& x);

/// x [N, F], weight [K, F], optional bias [K] -> [N, K]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias);

/// Sub-box of `x`: along each axis keep [offsets[a], offsets[a] + sizes[a]).
/// Gradients scatter back into the source region only.
template <class T>
Var<T> crop(const Var<T>& x, std::span<const std::size_t> offsets, std::span<const std::size_t> sizes);

/// Same elements, new shape.
template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Rows [begin, begin + count) of axis 0.
template <class T>
Var<T> narrow_rows(const Var<T>& x, std::size_t begin, std::size_t count);

// ---- losses ----------------------------------------------------------------

enum class Reduction { mean, none };

/// -log softmax(logits)[target], max-subtracted. `mean` gives shape {1},
/// `none` gives shape {N}.
template <class T>
Var<T> cross_entropy_from_logits(const Var<T>& logits, std::span<const int> targets,
                                 Reduction reduction = Reduction::mean);

/// sum_i weight_i * CE_i / denominator, shape {1}.
template <class T>
Var<T> weighted_cross_entropy(const Var<T>& logits, std::span<const int> targets,
                              std::span<const T> row_weights, T denominator);

/// Row-wise softmax of an [N, K] tensor.
template <class T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits);

}  // namespace enas
