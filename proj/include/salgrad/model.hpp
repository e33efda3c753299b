#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "salgrad/tape.hpp"

namespace salgrad {

// Anything attacks and evaluation can query gradients through: stages its
// forward pass onto a caller-owned tape and hands back the logits id.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int num_classes() const = 0;
  // rng is consumed only in train mode and may be null otherwise.
  virtual TensorId stage(Tape& tape, TensorId input, bool train,
                         Rng* rng) const = 0;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  std::int64_t fan_in;
};

// The fixed MNIST classifier: conv(1->32,k3,s1) / relu / conv(32->64,k3,s1) /
// relu / maxpool2 / dropout .25 / fc(9216->128) / relu / dropout .5 /
// fc(128->10). The 9216 flatten width follows from 64x12x12 after the two
// valid 3x3 convolutions and one 2x2 pool on 28x28 inputs.
inline constexpr char kMnistArchId[] = "mnist_cnn_v1";
inline constexpr double kMnistDropout1 = 0.25;
inline constexpr double kMnistDropout2 = 0.5;

// Stages the architecture above from parameter leaves, in manifest order.
// Shared between the float training path and the 64-bit gradient-check path.
template <typename T>
TensorId stage_mnist_cnn(TapeT<T>& tape, std::span<const TensorId> params,
                         TensorId input, bool train, Rng* rng);

class Model final : public Classifier {
 public:
  static const std::vector<ParamSpec>& mnist_manifest();
  // Weights uniform in +-1/sqrt(fan_in), drawn from the seed in manifest
  // order; same seed, same bits.
  static Model build_mnist_cnn(std::uint64_t seed);

  const std::string& arch_id() const { return arch_id_; }
  std::uint64_t build_seed() const { return seed_; }
  std::uint32_t epochs_trained() const { return epochs_; }
  void set_epochs_trained(std::uint32_t e) { epochs_ = e; }

  std::size_t param_count() const { return params_.size(); }
  std::int64_t total_parameters() const;
  const Tensor& param(std::size_t i) const { return params_[i]; }
  Tensor& mutable_param(std::size_t i) { return params_[i]; }
  const std::string& param_name(std::size_t i) const;

  // Leaves for every parameter, manifest order. Stage once per tape and share
  // across forwards so gradients accumulate on one set of ids.
  std::vector<TensorId> stage_params(Tape& tape) const;
  TensorId stage_forward(Tape& tape, std::span<const TensorId> params,
                         TensorId input, bool train, Rng* rng) const;

  int num_classes() const override { return 10; }
  TensorId stage(Tape& tape, TensorId input, bool train,
                 Rng* rng) const override;

  // Convenience one-shot forward; eval mode is a pure function of
  // (params, batch).
  Tensor forward(const Tensor& batch, bool train = false,
                 Rng* rng = nullptr) const;

 private:
  friend Model load_checkpoint(const std::string& path);
  std::string arch_id_;
  std::uint64_t seed_ = 0;
  std::uint32_t epochs_ = 0;
  std::vector<Tensor> params_;
};

// Adadelta accumulators, one pair per parameter tensor, shapes mirrored.
struct AdadeltaState {
  double rho = 0.9;
  double eps = 1e-6;
  double lr = 0.1;
  std::vector<Tensor> square_avg;
  std::vector<Tensor> acc_delta;

  static AdadeltaState init(const Model& m, double lr, double rho = 0.9,
                            double eps = 1e-6);
};

// One optimizer step:
//   E[g^2]   <- rho E[g^2] + (1-rho) g^2
//   delta    =  sqrt(E[dx^2]+eps) / sqrt(E[g^2]+eps) * g
//   E[dx^2]  <- rho E[dx^2] + (1-rho) delta^2
//   p        <- p - lr * delta
// param_ids bind the grad map to the model's parameters, manifest order.
void adadelta_step(Model& model, const GradMap& grads,
                   std::span<const TensorId> param_ids, AdadeltaState& state);

// Checkpoint file: magic "SGCK", u32 version=1, length-prefixed arch id,
// u64 seed, u32 epoch, u32 tensor count, then per tensor a length-prefixed
// name, u32 rank, u32 dims and a raw little-endian f32 payload. Roundtrips
// are bit-exact.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace salgrad
