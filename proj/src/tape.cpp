#include "salgrad/tape.hpp"

#include <cmath>
#include <cstring>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace salgrad {

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kBiasAddChannel: return "bias_add_channel";
    case OpKind::kRelu: return "relu";
    case OpKind::kMaxPool2d: return "max_pool2d";
    case OpKind::kLinear: return "linear";
    case OpKind::kDropout: return "dropout";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kKlDivergence: return "kl_divergence";
    case OpKind::kReshape: return "reshape";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kSum: return "sum";
  }
  return "?";
}

template <typename T>
const TensorT<T>& GradMapT<T>::at(TensorId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end())
    throw ContractError("grad map: no gradient for tensor id " +
                        std::to_string(id));
  return it->second;
}

template <typename T>
const TapeNodeT<T>& TapeT<T>::node(TensorId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw IndexError("tape: bad tensor id " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
TensorId TapeT<T>::push(TapeNodeT<T> n) {
  require_finite(n.value, op_name(n.kind));
  nodes_.push_back(std::move(n));
  return static_cast<TensorId>(nodes_.size() - 1);
}

template <typename T>
TensorId TapeT<T>::leaf(TensorT<T> value) {
  TapeNodeT<T> n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Kernels. Parallel loops only run over axes whose writes are disjoint, and
// every accumulation happens serially in a fixed order inside one parallel
// cell, so results are identical for any thread count.

namespace {

struct ConvDims {
  std::int64_t n, ic, h, w, oc, k, oh, ow, stride;
};

template <typename T>
ConvDims conv_dims(const TensorT<T>& in, const TensorT<T>& ker,
                   std::int64_t stride) {
  if (in.rank() != 4 || ker.rank() != 4)
    throw DimensionError("conv2d: need 4-d input and kernel, got " +
                         shape_str(in.shape) + " and " + shape_str(ker.shape));
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  ConvDims d{};
  d.n = in.dim(0);
  d.ic = in.dim(1);
  d.h = in.dim(2);
  d.w = in.dim(3);
  d.oc = ker.dim(0);
  d.k = ker.dim(2);
  d.stride = stride;
  if (ker.dim(1) != d.ic || ker.dim(2) != ker.dim(3) || d.h < d.k || d.w < d.k)
    throw DimensionError("conv2d: input " + shape_str(in.shape) +
                         " incompatible with kernel " + shape_str(ker.shape));
  d.oh = (d.h - d.k) / d.stride + 1;
  d.ow = (d.w - d.k) / d.stride + 1;
  return d;
}

// Fixed-shape lane reduction: deterministic summation tree that still
// vectorizes without fast-math.
template <typename T>
T dot_lanes(const T* a, const T* b, std::int64_t len) {
  T lanes[8] = {};
  std::int64_t i = 0;
  for (; i + 8 <= len; i += 8)
    for (int j = 0; j < 8; ++j) lanes[j] += a[i + j] * b[i + j];
  T tail = T(0);
  for (; i < len; ++i) tail += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

// Output channels are processed four at a time so each input load feeds four
// accumulation streams.
template <typename T>
void conv2d_forward(const TensorT<T>& in, const TensorT<T>& ker,
                    const ConvDims& d, TensorT<T>& out) {
  const std::int64_t plane_in = d.h * d.w;
  const std::int64_t plane_out = d.oh * d.ow;
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < d.n; ++n) {
    const T* in_base = in.ptr() + n * d.ic * plane_in;
    T* out_base = out.ptr() + n * d.oc * plane_out;
    std::int64_t oc = 0;
    for (; oc + 4 <= d.oc; oc += 4) {
      T* o0 = out_base + (oc + 0) * plane_out;
      T* o1 = out_base + (oc + 1) * plane_out;
      T* o2 = out_base + (oc + 2) * plane_out;
      T* o3 = out_base + (oc + 3) * plane_out;
      for (std::int64_t ic = 0; ic < d.ic; ++ic) {
        const T* in_plane = in_base + ic * plane_in;
        const T* k0 = ker.ptr() + ((oc + 0) * d.ic + ic) * d.k * d.k;
        const T* k1 = ker.ptr() + ((oc + 1) * d.ic + ic) * d.k * d.k;
        const T* k2 = ker.ptr() + ((oc + 2) * d.ic + ic) * d.k * d.k;
        const T* k3 = ker.ptr() + ((oc + 3) * d.ic + ic) * d.k * d.k;
        for (std::int64_t ky = 0; ky < d.k; ++ky) {
          for (std::int64_t kx = 0; kx < d.k; ++kx) {
            const T w0 = k0[ky * d.k + kx];
            const T w1 = k1[ky * d.k + kx];
            const T w2 = k2[ky * d.k + kx];
            const T w3 = k3[ky * d.k + kx];
            for (std::int64_t oy = 0; oy < d.oh; ++oy) {
              const T* r = in_plane + (oy * d.stride + ky) * d.w + kx;
              const std::int64_t row = oy * d.ow;
              if (d.stride == 1) {
                for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                  const T v = r[ox];
                  o0[row + ox] += w0 * v;
                  o1[row + ox] += w1 * v;
                  o2[row + ox] += w2 * v;
                  o3[row + ox] += w3 * v;
                }
              } else {
                for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                  const T v = r[ox * d.stride];
                  o0[row + ox] += w0 * v;
                  o1[row + ox] += w1 * v;
                  o2[row + ox] += w2 * v;
                  o3[row + ox] += w3 * v;
                }
              }
            }
          }
        }
      }
    }
    for (; oc < d.oc; ++oc) {
      T* out_plane = out_base + oc * plane_out;
      for (std::int64_t ic = 0; ic < d.ic; ++ic) {
        const T* in_plane = in_base + ic * plane_in;
        const T* kplane = ker.ptr() + (oc * d.ic + ic) * d.k * d.k;
        for (std::int64_t ky = 0; ky < d.k; ++ky)
          for (std::int64_t kx = 0; kx < d.k; ++kx) {
            const T wv = kplane[ky * d.k + kx];
            for (std::int64_t oy = 0; oy < d.oh; ++oy) {
              const T* r = in_plane + (oy * d.stride + ky) * d.w + kx;
              T* out_row = out_plane + oy * d.ow;
              for (std::int64_t ox = 0; ox < d.ow; ++ox)
                out_row[ox] += wv * r[ox * d.stride];
            }
          }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const TensorT<T>& gout, const TensorT<T>& ker,
                           const ConvDims& d, TensorT<T>& gin) {
  const std::int64_t plane_in = d.h * d.w;
  const std::int64_t plane_out = d.oh * d.ow;
#pragma omp parallel for schedule(static)
  for (std::int64_t cell = 0; cell < d.n * d.ic; ++cell) {
    const std::int64_t n = cell / d.ic;
    const std::int64_t ic = cell % d.ic;
    T* gin_plane = gin.ptr() + (n * d.ic + ic) * plane_in;
    const T* gout_base = gout.ptr() + n * d.oc * plane_out;
    std::int64_t oc = 0;
    for (; oc + 4 <= d.oc && d.stride == 1; oc += 4) {
      const T* g0 = gout_base + (oc + 0) * plane_out;
      const T* g1 = gout_base + (oc + 1) * plane_out;
      const T* g2 = gout_base + (oc + 2) * plane_out;
      const T* g3 = gout_base + (oc + 3) * plane_out;
      const T* k0 = ker.ptr() + ((oc + 0) * d.ic + ic) * d.k * d.k;
      const T* k1 = ker.ptr() + ((oc + 1) * d.ic + ic) * d.k * d.k;
      const T* k2 = ker.ptr() + ((oc + 2) * d.ic + ic) * d.k * d.k;
      const T* k3 = ker.ptr() + ((oc + 3) * d.ic + ic) * d.k * d.k;
      for (std::int64_t ky = 0; ky < d.k; ++ky) {
        for (std::int64_t kx = 0; kx < d.k; ++kx) {
          const T w0 = k0[ky * d.k + kx];
          const T w1 = k1[ky * d.k + kx];
          const T w2 = k2[ky * d.k + kx];
          const T w3 = k3[ky * d.k + kx];
          for (std::int64_t oy = 0; oy < d.oh; ++oy) {
            T* gin_row = gin_plane + (oy + ky) * d.w + kx;
            const std::int64_t row = oy * d.ow;
            for (std::int64_t ox = 0; ox < d.ow; ++ox)
              gin_row[ox] += w0 * g0[row + ox] + w1 * g1[row + ox] +
                             w2 * g2[row + ox] + w3 * g3[row + ox];
          }
        }
      }
    }
    for (; oc < d.oc; ++oc) {
      const T* gout_plane = gout_base + oc * plane_out;
      const T* kplane = ker.ptr() + (oc * d.ic + ic) * d.k * d.k;
      for (std::int64_t ky = 0; ky < d.k; ++ky) {
        for (std::int64_t kx = 0; kx < d.k; ++kx) {
          const T wv = kplane[ky * d.k + kx];
          for (std::int64_t oy = 0; oy < d.oh; ++oy) {
            T* gin_row = gin_plane + (oy * d.stride + ky) * d.w + kx;
            const T* gout_row = gout_plane + oy * d.ow;
            for (std::int64_t ox = 0; ox < d.ow; ++ox)
              gin_row[ox * d.stride] += wv * gout_row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_kernel(const TensorT<T>& in, const TensorT<T>& gout,
                            const ConvDims& d, TensorT<T>& gker) {
  const std::int64_t plane_in = d.h * d.w;
  const std::int64_t plane_out = d.oh * d.ow;
#pragma omp parallel for schedule(static)
  for (std::int64_t cell = 0; cell < d.oc * d.ic; ++cell) {
    const std::int64_t oc = cell / d.ic;
    const std::int64_t ic = cell % d.ic;
    T* gk_plane = gker.ptr() + (oc * d.ic + ic) * d.k * d.k;
    for (std::int64_t n = 0; n < d.n; ++n) {
      const T* in_plane = in.ptr() + (n * d.ic + ic) * plane_in;
      const T* gout_plane = gout.ptr() + (n * d.oc + oc) * plane_out;
      for (std::int64_t ky = 0; ky < d.k; ++ky) {
        for (std::int64_t kx = 0; kx < d.k; ++kx) {
          T acc = T(0);
          if (d.stride == 1) {
            for (std::int64_t oy = 0; oy < d.oh; ++oy)
              acc += dot_lanes(in_plane + (oy + ky) * d.w + kx,
                               gout_plane + oy * d.ow, d.ow);
          } else {
            for (std::int64_t oy = 0; oy < d.oh; ++oy) {
              const T* in_row = in_plane + (oy * d.stride + ky) * d.w + kx;
              const T* gout_row = gout_plane + oy * d.ow;
              for (std::int64_t ox = 0; ox < d.ow; ++ox)
                acc += in_row[ox * d.stride] * gout_row[ox];
            }
          }
          gk_plane[ky * d.k + kx] += acc;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
TensorId TapeT<T>::conv2d(TensorId input, TensorId kernel, int stride) {
  const auto& in = node(input).value;
  const auto& ker = node(kernel).value;
  const ConvDims d = conv_dims(in, ker, stride);
  TapeNodeT<T> n;
  n.kind = OpKind::kConv2d;
  n.parents = {input, kernel, -1};
  n.p0 = stride;
  n.value = TensorT<T>::zeros({d.n, d.oc, d.oh, d.ow});
  conv2d_forward(in, ker, d, n.value);
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::bias_add_channel(TensorId input, TensorId bias) {
  const auto& in = node(input).value;
  const auto& b = node(bias).value;
  if (in.rank() != 4 || b.rank() != 1 || b.dim(0) != in.dim(1))
    throw DimensionError("bias_add_channel: input " + shape_str(in.shape) +
                         " vs bias " + shape_str(b.shape));
  TapeNodeT<T> n;
  n.kind = OpKind::kBiasAddChannel;
  n.parents = {input, bias, -1};
  n.value = in;
  const std::int64_t plane = in.dim(2) * in.dim(3);
  const std::int64_t nc = in.dim(0) * in.dim(1);
  const std::int64_t chans = in.dim(1);
#pragma omp parallel for schedule(static)
  for (std::int64_t cell = 0; cell < nc; ++cell) {
    const T bv = b[cell % chans];
    T* row = n.value.ptr() + cell * plane;
    for (std::int64_t i = 0; i < plane; ++i) row[i] += bv;
  }
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::relu(TensorId x) {
  const auto& in = node(x).value;
  TapeNodeT<T> n;
  n.kind = OpKind::kRelu;
  n.parents = {x, -1, -1};
  n.value.shape = in.shape;
  n.value.data.resize(in.data.size());
  const std::int64_t total = in.numel();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < total; ++i)
    n.value[i] = in[i] > T(0) ? in[i] : T(0);
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::max_pool2d(TensorId x, int window) {
  const auto& in = node(x).value;
  if (in.rank() != 4)
    throw DimensionError("max_pool2d: need 4-d input, got " +
                         shape_str(in.shape));
  const std::int64_t w = window;
  if (w < 1 || in.dim(2) < w || in.dim(3) < w)
    throw DimensionError("max_pool2d: window " + std::to_string(window) +
                         " too large for input " + shape_str(in.shape));
  const std::int64_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::int64_t oh = H / w, ow = W / w;
  TapeNodeT<T> n;
  n.kind = OpKind::kMaxPool2d;
  n.parents = {x, -1, -1};
  n.p0 = w;
  n.value = TensorT<T>::zeros({N, C, oh, ow});
  n.iaux.resize(static_cast<std::size_t>(N * C * oh * ow));
#pragma omp parallel for schedule(static)
  for (std::int64_t plane = 0; plane < N * C; ++plane) {
    const T* in_plane = in.ptr() + plane * H * W;
    T* out_plane = n.value.ptr() + plane * oh * ow;
    std::int64_t* arg_plane = n.iaux.data() + plane * oh * ow;
    for (std::int64_t py = 0; py < oh; ++py) {
      for (std::int64_t px = 0; px < ow; ++px) {
        std::int64_t best = (py * w) * W + px * w;
        T best_v = in_plane[best];
        for (std::int64_t dy = 0; dy < w; ++dy) {
          for (std::int64_t dx = 0; dx < w; ++dx) {
            const std::int64_t idx = (py * w + dy) * W + (px * w + dx);
            if (in_plane[idx] > best_v) {  // ties keep the first (row-major)
              best_v = in_plane[idx];
              best = idx;
            }
          }
        }
        out_plane[py * ow + px] = best_v;
        arg_plane[py * ow + px] = plane * H * W + best;
      }
    }
  }
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::linear(TensorId x, TensorId weight, TensorId bias) {
  const auto& xv = node(x).value;
  const auto& wv = node(weight).value;
  const auto& bv = node(bias).value;
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 ||
      xv.dim(1) != wv.dim(1) || bv.dim(0) != wv.dim(0))
    throw DimensionError("linear: x " + shape_str(xv.shape) + ", weight " +
                         shape_str(wv.shape) + ", bias " + shape_str(bv.shape));
  const std::int64_t N = xv.dim(0), F = xv.dim(1), O = wv.dim(0);
  TapeNodeT<T> n;
  n.kind = OpKind::kLinear;
  n.parents = {x, weight, bias};
  n.value = TensorT<T>::zeros({N, O});
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < N; ++i) {
    const T* xrow = xv.ptr() + i * F;
    T* orow = n.value.ptr() + i * O;
    for (std::int64_t o = 0; o < O; ++o)
      orow[o] = bv[o] + dot_lanes(xrow, wv.ptr() + o * F, F);
  }
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::dropout(TensorId x, double p, bool train_mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0))
    throw ParameterError("dropout: p must be in [0,1), got " +
                         std::to_string(p));
  if (!train_mode) return x;  // eval mode is the identity, no node recorded
  if (rng == nullptr)
    throw ContractError("dropout: train mode needs an rng");
  const auto& in = node(x).value;
  TapeNodeT<T> n;
  n.kind = OpKind::kDropout;
  n.parents = {x, -1, -1};
  n.s0 = p;
  const std::int64_t total = in.numel();
  n.aux.resize(static_cast<std::size_t>(total));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::int64_t i = 0; i < total; ++i)  // serial: one RNG stream
    n.aux[static_cast<std::size_t>(i)] =
        rng->uniform01() >= p ? keep_scale : T(0);
  n.value.shape = in.shape;
  n.value.data.resize(in.data.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < total; ++i)
    n.value[i] = in[i] * n.aux[static_cast<std::size_t>(i)];
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::log_softmax(TensorId x, int axis) {
  const auto& in = node(x).value;
  if (in.rank() != 2 || axis != 1)
    throw ParameterError("log_softmax: expects an NxC tensor with axis=1, got " +
                         shape_str(in.shape) + " axis=" + std::to_string(axis));
  const std::int64_t N = in.dim(0), C = in.dim(1);
  TapeNodeT<T> n;
  n.kind = OpKind::kLogSoftmax;
  n.parents = {x, -1, -1};
  n.p0 = axis;
  n.value.shape = in.shape;
  n.value.data.resize(in.data.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < N; ++i) {
    const T* row = in.ptr() + i * C;
    T* out = n.value.ptr() + i * C;
    T m = row[0];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    T sum = T(0);
    for (std::int64_t c = 0; c < C; ++c) sum += std::exp(row[c] - m);
    const T lse = m + std::log(sum);
    for (std::int64_t c = 0; c < C; ++c) out[c] = row[c] - lse;
  }
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::cross_entropy(TensorId log_probs,
                                 std::span<const int> labels) {
  const auto& lp = node(log_probs).value;
  if (lp.rank() != 2)
    throw DimensionError("cross_entropy: log_probs must be NxC, got " +
                         shape_str(lp.shape));
  const std::int64_t N = lp.dim(0), C = lp.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(N));
  TapeNodeT<T> n;
  n.kind = OpKind::kCrossEntropy;
  n.parents = {log_probs, -1, -1};
  n.iaux.reserve(labels.size());
  double acc = 0.0;
  for (std::int64_t i = 0; i < N; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= C)
      throw IndexError("cross_entropy: label " + std::to_string(y) +
                       " out of range [0," + std::to_string(C) +
                       ") at sample " + std::to_string(i));
    n.iaux.push_back(y);
    acc -= static_cast<double>(lp.at2(i, y));
  }
  n.value = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(N)));
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::kl_divergence(TensorId p_log, TensorId q_log) {
  const auto& p = node(p_log).value;
  const auto& q = node(q_log).value;
  if (p.rank() != 2 || !p.same_shape(q))
    throw DimensionError("kl_divergence: p " + shape_str(p.shape) + " vs q " +
                         shape_str(q.shape));
  const std::int64_t N = p.dim(0);
  TapeNodeT<T> n;
  n.kind = OpKind::kKlDivergence;
  n.parents = {p_log, q_log, -1};
  double acc = 0.0;
  for (std::int64_t i = 0; i < p.numel(); ++i)
    acc += std::exp(static_cast<double>(p[i])) *
           (static_cast<double>(p[i]) - static_cast<double>(q[i]));
  n.value = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(N)));
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::reshape(TensorId x, Shape new_shape) {
  const auto& in = node(x).value;
  if (shape_numel(new_shape) != in.numel())
    throw DimensionError("reshape: " + shape_str(in.shape) + " to " +
                         shape_str(new_shape));
  TapeNodeT<T> n;
  n.kind = OpKind::kReshape;
  n.parents = {x, -1, -1};
  n.value.shape = std::move(new_shape);
  n.value.data = in.data;
  return push(std::move(n));
}

namespace {

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                        const char* what) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(what) + ": " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

}  // namespace

template <typename T>
TensorId TapeT<T>::add(TensorId a, TensorId b) {
  const auto& av = node(a).value;
  const auto& bv = node(b).value;
  require_same_shape(av, bv, "add");
  TapeNodeT<T> n;
  n.kind = OpKind::kAdd;
  n.parents = {a, b, -1};
  n.value.shape = av.shape;
  n.value.data.resize(av.data.size());
  for (std::int64_t i = 0; i < av.numel(); ++i) n.value[i] = av[i] + bv[i];
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::sub(TensorId a, TensorId b) {
  const auto& av = node(a).value;
  const auto& bv = node(b).value;
  require_same_shape(av, bv, "sub");
  TapeNodeT<T> n;
  n.kind = OpKind::kSub;
  n.parents = {a, b, -1};
  n.value.shape = av.shape;
  n.value.data.resize(av.data.size());
  for (std::int64_t i = 0; i < av.numel(); ++i) n.value[i] = av[i] - bv[i];
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::mul(TensorId a, TensorId b) {
  const auto& av = node(a).value;
  const auto& bv = node(b).value;
  require_same_shape(av, bv, "mul");
  TapeNodeT<T> n;
  n.kind = OpKind::kMul;
  n.parents = {a, b, -1};
  n.value.shape = av.shape;
  n.value.data.resize(av.data.size());
  for (std::int64_t i = 0; i < av.numel(); ++i) n.value[i] = av[i] * bv[i];
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::scale(TensorId x, double c) {
  const auto& in = node(x).value;
  TapeNodeT<T> n;
  n.kind = OpKind::kScale;
  n.parents = {x, -1, -1};
  n.s0 = c;
  n.value.shape = in.shape;
  n.value.data.resize(in.data.size());
  const T cv = static_cast<T>(c);
  for (std::int64_t i = 0; i < in.numel(); ++i) n.value[i] = cv * in[i];
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::add_scalar(TensorId x, double c) {
  const auto& in = node(x).value;
  TapeNodeT<T> n;
  n.kind = OpKind::kAddScalar;
  n.parents = {x, -1, -1};
  n.s0 = c;
  n.value.shape = in.shape;
  n.value.data.resize(in.data.size());
  const T cv = static_cast<T>(c);
  for (std::int64_t i = 0; i < in.numel(); ++i) n.value[i] = in[i] + cv;
  return push(std::move(n));
}

template <typename T>
TensorId TapeT<T>::sum(TensorId x) {
  const auto& in = node(x).value;
  TapeNodeT<T> n;
  n.kind = OpKind::kSum;
  n.parents = {x, -1, -1};
  T acc = T(0);
  for (std::int64_t i = 0; i < in.numel(); ++i) acc += in[i];
  n.value = TensorT<T>::scalar(acc);
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Reverse sweep

template <typename T>
GradMapT<T> TapeT<T>::backward(TensorId loss,
                               std::span<const TensorId> wrt) const {
  const auto& loss_node = node(loss);
  if (loss_node.value.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " +
                        shape_str(loss_node.value.shape));
  for (TensorId id : wrt) (void)node(id);  // validate ids

  // needed: ancestors of the loss; active: descendants of a requested id.
  // Gradients are only materialized on their intersection, so e.g. an
  // input-gradient pass never pays for weight gradients.
  std::vector<char> needed(nodes_.size(), 0);
  needed[static_cast<std::size_t>(loss)] = 1;
  for (TensorId id = loss; id >= 0; --id) {
    if (!needed[static_cast<std::size_t>(id)]) continue;
    for (TensorId p : nodes_[static_cast<std::size_t>(id)].parents)
      if (p >= 0) needed[static_cast<std::size_t>(p)] = 1;
  }
  std::vector<char> active(nodes_.size(), 0);
  for (TensorId id : wrt) active[static_cast<std::size_t>(id)] = 1;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (active[i]) continue;
    for (TensorId p : nodes_[i].parents)
      if (p >= 0 && active[static_cast<std::size_t>(p)]) {
        active[i] = 1;
        break;
      }
  }
  auto want = [&](TensorId id) {
    return id >= 0 && active[static_cast<std::size_t>(id)] &&
           needed[static_cast<std::size_t>(id)];
  };

  std::vector<TensorT<T>> grads(nodes_.size());
  auto grad_of = [&](TensorId id) -> TensorT<T>& {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.data.empty())
      g = TensorT<T>::zeros(nodes_[static_cast<std::size_t>(id)].value.shape);
    return g;
  };
  grad_of(loss)[0] = T(1);

  for (TensorId id = loss; id >= 0; --id) {
    if (!needed[static_cast<std::size_t>(id)]) continue;
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.kind == OpKind::kLeaf) continue;
    const auto& g = grads[static_cast<std::size_t>(id)];
    if (g.data.empty()) continue;

    switch (n.kind) {
      case OpKind::kConv2d: {
        const auto& in = node(n.parents[0]).value;
        const auto& ker = node(n.parents[1]).value;
        const ConvDims d = conv_dims(in, ker, n.p0);
        if (want(n.parents[0]))
          conv2d_backward_input(g, ker, d, grad_of(n.parents[0]));
        if (want(n.parents[1]))
          conv2d_backward_kernel(in, g, d, grad_of(n.parents[1]));
        break;
      }
      case OpKind::kBiasAddChannel: {
        if (want(n.parents[0])) {
          auto& gin = grad_of(n.parents[0]);
          const std::int64_t total = g.numel();
#pragma omp parallel for schedule(static)
          for (std::int64_t i = 0; i < total; ++i) gin[i] += g[i];
        }
        if (want(n.parents[1])) {
          auto& gb = grad_of(n.parents[1]);
          const std::int64_t chans = n.value.dim(1);
          const std::int64_t plane = n.value.dim(2) * n.value.dim(3);
          for (std::int64_t cell = 0; cell < n.value.dim(0) * chans; ++cell) {
            const T* grow = g.ptr() + cell * plane;
            T acc = T(0);
            for (std::int64_t i = 0; i < plane; ++i) acc += grow[i];
            gb[cell % chans] += acc;
          }
        }
        break;
      }
      case OpKind::kRelu: {
        if (!want(n.parents[0])) break;
        const auto& in = node(n.parents[0]).value;
        auto& gin = grad_of(n.parents[0]);
        const std::int64_t total = g.numel();
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i)
          if (in[i] > T(0)) gin[i] += g[i];
        break;
      }
      case OpKind::kMaxPool2d: {
        if (!want(n.parents[0])) break;
        auto& gin = grad_of(n.parents[0]);
        const std::int64_t planes = n.value.dim(0) * n.value.dim(1);
        const std::int64_t cells = n.value.dim(2) * n.value.dim(3);
#pragma omp parallel for schedule(static)
        for (std::int64_t plane = 0; plane < planes; ++plane)
          for (std::int64_t i = 0; i < cells; ++i) {
            const std::int64_t at = plane * cells + i;
            gin[n.iaux[static_cast<std::size_t>(at)]] += g[at];
          }
        break;
      }
      case OpKind::kLinear: {
        const auto& xv = node(n.parents[0]).value;
        const auto& wv = node(n.parents[1]).value;
        const TensorId bias_id = n.parents[2];
        const std::int64_t N = xv.dim(0), F = xv.dim(1), O = wv.dim(0);
        if (want(n.parents[0])) {
          auto& gx = grad_of(n.parents[0]);
#pragma omp parallel for schedule(static)
          for (std::int64_t i = 0; i < N; ++i) {
            T* gxrow = gx.ptr() + i * F;
            const T* grow = g.ptr() + i * O;
            for (std::int64_t o = 0; o < O; ++o) {
              const T go = grow[o];
              const T* wrow = wv.ptr() + o * F;
              for (std::int64_t f = 0; f < F; ++f) gxrow[f] += go * wrow[f];
            }
          }
        }
        if (want(n.parents[1]) || want(bias_id)) {
          auto& gw = grad_of(n.parents[1]);
          auto& gb = grad_of(bias_id);
#pragma omp parallel for schedule(static)
          for (std::int64_t o = 0; o < O; ++o) {
            T* gwrow = gw.ptr() + o * F;
            T bacc = T(0);
            for (std::int64_t i = 0; i < N; ++i) {
              const T go = g[i * O + o];
              bacc += go;
              const T* xrow = xv.ptr() + i * F;
              for (std::int64_t f = 0; f < F; ++f) gwrow[f] += go * xrow[f];
            }
            gb[o] += bacc;
          }
        }
        break;
      }
      case OpKind::kDropout: {
        if (!want(n.parents[0])) break;
        auto& gin = grad_of(n.parents[0]);
        const std::int64_t total = g.numel();
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i)
          gin[i] += g[i] * n.aux[static_cast<std::size_t>(i)];
        break;
      }
      case OpKind::kLogSoftmax: {
        if (!want(n.parents[0])) break;
        auto& gin = grad_of(n.parents[0]);
        const std::int64_t N = n.value.dim(0), C = n.value.dim(1);
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < N; ++i) {
          const T* grow = g.ptr() + i * C;
          const T* orow = n.value.ptr() + i * C;
          T* gi = gin.ptr() + i * C;
          T gsum = T(0);
          for (std::int64_t c = 0; c < C; ++c) gsum += grow[c];
          for (std::int64_t c = 0; c < C; ++c)
            gi[c] += grow[c] - std::exp(orow[c]) * gsum;
        }
        break;
      }
      case OpKind::kCrossEntropy: {
        if (!want(n.parents[0])) break;
        auto& gin = grad_of(n.parents[0]);
        const std::int64_t N = static_cast<std::int64_t>(n.iaux.size());
        const std::int64_t C = gin.dim(1);
        const T gs = g[0] / static_cast<T>(N);
        for (std::int64_t i = 0; i < N; ++i)
          gin[i * C + n.iaux[static_cast<std::size_t>(i)]] -= gs;
        break;
      }
      case OpKind::kKlDivergence: {
        const auto& p = node(n.parents[0]).value;
        const auto& q = node(n.parents[1]).value;
        const std::int64_t N = p.dim(0);
        const T gs = g[0] / static_cast<T>(N);
        if (want(n.parents[0])) {
          auto& gp = grad_of(n.parents[0]);
          for (std::int64_t i = 0; i < p.numel(); ++i)
            gp[i] += gs * std::exp(p[i]) * (p[i] - q[i] + T(1));
        }
        if (want(n.parents[1])) {
          auto& gq = grad_of(n.parents[1]);
          for (std::int64_t i = 0; i < p.numel(); ++i)
            gq[i] -= gs * std::exp(p[i]);
        }
        break;
      }
      case OpKind::kReshape: {
        if (!want(n.parents[0])) break;
        auto& gin = grad_of(n.parents[0]);
        const std::int64_t total = g.numel();
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) gin[i] += g[i];
        break;
      }
      case OpKind::kAdd: {
        if (want(n.parents[0])) {
          auto& ga = grad_of(n.parents[0]);
          for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (want(n.parents[1])) {
          auto& gb = grad_of(n.parents[1]);
          for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
        break;
      }
      case OpKind::kSub: {
        if (want(n.parents[0])) {
          auto& ga = grad_of(n.parents[0]);
          for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (want(n.parents[1])) {
          auto& gb = grad_of(n.parents[1]);
          for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
        break;
      }
      case OpKind::kMul: {
        const auto& av = node(n.parents[0]).value;
        const auto& bv = node(n.parents[1]).value;
        if (want(n.parents[0])) {
          auto& ga = grad_of(n.parents[0]);
          for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
        }
        if (want(n.parents[1])) {
          auto& gb = grad_of(n.parents[1]);
          for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
        }
        break;
      }
      case OpKind::kScale: {
        if (!want(n.parents[0])) break;
        auto& gin = grad_of(n.parents[0]);
        const T cv = static_cast<T>(n.s0);
        for (std::int64_t i = 0; i < g.numel(); ++i) gin[i] += cv * g[i];
        break;
      }
      case OpKind::kAddScalar: {
        if (!want(n.parents[0])) break;
        auto& gin = grad_of(n.parents[0]);
        for (std::int64_t i = 0; i < g.numel(); ++i) gin[i] += g[i];
        break;
      }
      case OpKind::kSum: {
        if (!want(n.parents[0])) break;
        auto& gin = grad_of(n.parents[0]);
        const T gs = g[0];
        for (std::int64_t i = 0; i < gin.numel(); ++i) gin[i] += gs;
        break;
      }
      case OpKind::kLeaf:
        break;
    }
  }

  GradMapT<T> out;
  for (TensorId id : wrt) {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.data.empty())
      out.set(id, TensorT<T>::zeros(node(id).value.shape));
    else
      out.set(id, g);
  }
  for (const auto& [id, g] : out) {
    (void)id;
    require_finite(g, "backward");
  }
  return out;
}

template class TapeT<float>;
template class TapeT<double>;
template class GradMapT<float>;
template class GradMapT<double>;

}  // namespace salgrad
