#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "salgrad/rng.hpp"
#include "salgrad/tensor.hpp"

namespace salgrad {

using TensorId = std::int32_t;

enum class OpKind : std::uint8_t {
  kLeaf,
  kConv2d,
  kBiasAddChannel,
  kRelu,
  kMaxPool2d,
  kLinear,
  kDropout,
  kLogSoftmax,
  kCrossEntropy,
  kKlDivergence,
  kReshape,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kSum,
};

const char* op_name(OpKind kind);

// One record of the computation: which op produced this tensor, from which
// parents, plus whatever forward state its backward rule needs.
template <typename T>
struct TapeNodeT {
  OpKind kind = OpKind::kLeaf;
  std::array<TensorId, 3> parents{-1, -1, -1};
  TensorT<T> value;
  std::vector<T> aux;             // dropout keep-scale per element
  std::vector<std::int64_t> iaux; // maxpool argmax / cross-entropy labels
  std::int64_t p0 = 0;            // stride / window / axis
  double s0 = 0.0;                // scale or added constant
};

// tensor-id -> gradient of identical shape. Ordered map so iteration (and
// therefore any downstream accumulation) is deterministic.
template <typename T>
class GradMapT {
 public:
  void set(TensorId id, TensorT<T> grad) { grads_[id] = std::move(grad); }
  bool contains(TensorId id) const { return grads_.count(id) != 0; }
  const TensorT<T>& at(TensorId id) const;
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<TensorId, TensorT<T>> grads_;
};

// Define-by-run reverse-mode tape over dense tensors. A tape is rebuilt per
// forward pass and owned by a single worker; independent tapes may run
// concurrently.
//
// Node ids are creation-ordered, so parents always precede children and one
// reverse sweep visits every node exactly once.
template <typename T>
class TapeT {
 public:
  TensorId leaf(TensorT<T> value);

  // Valid (unpadded) convolution, input NCHW against kernel OCKK.
  TensorId conv2d(TensorId input, TensorId kernel, int stride);
  // Adds a per-channel bias vector to an NCHW tensor.
  TensorId bias_add_channel(TensorId input, TensorId bias);
  TensorId relu(TensorId x);
  // Non-overlapping max pooling with square window (stride == window).
  TensorId max_pool2d(TensorId x, int window);
  // x: N x F, weight: O x F, bias: O.
  TensorId linear(TensorId x, TensorId weight, TensorId bias);
  // In train mode zeroes each element with probability p and scales survivors
  // by 1/(1-p); in eval mode the input id is returned untouched and rng may be
  // null.
  TensorId dropout(TensorId x, double p, bool train_mode, Rng* rng);
  // Row-wise log-softmax of an N x C tensor; axis must be 1.
  TensorId log_softmax(TensorId x, int axis);
  // Mean over the batch of -log_prob at the true class.
  TensorId cross_entropy(TensorId log_probs, std::span<const int> labels);
  // Mean over the batch of sum_c p*(log p - log q); both args are rows of
  // log-probabilities.
  TensorId kl_divergence(TensorId p_log, TensorId q_log);
  TensorId reshape(TensorId x, Shape new_shape);
  TensorId add(TensorId a, TensorId b);
  TensorId sub(TensorId a, TensorId b);
  TensorId mul(TensorId a, TensorId b);
  TensorId scale(TensorId x, double c);
  TensorId add_scalar(TensorId x, double c);
  TensorId sum(TensorId x);

  // Exact reverse-mode gradients of a scalar loss. Requested ids that are not
  // on a path to the loss get zero gradients.
  GradMapT<T> backward(TensorId loss, std::span<const TensorId> wrt) const;

  const TensorT<T>& value(TensorId id) const { return node(id).value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  const TapeNodeT<T>& node(TensorId id) const;
  TensorId push(TapeNodeT<T> node);
  std::vector<TapeNodeT<T>> nodes_;
};

using Tape = TapeT<float>;
using GradMap = GradMapT<float>;

// Number of worker threads used by tensor kernels (OpenMP). 0 = leave the
// runtime default. Affects speed only, never results.
void set_num_threads(int n);

extern template class TapeT<float>;
extern template class TapeT<double>;
extern template class GradMapT<float>;
extern template class GradMapT<double>;

}  // namespace salgrad
