#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "salgrad/data.hpp"
#include "salgrad/model.hpp"

namespace salgrad {

enum class TrainMode { kRegular, kSaliency };

const char* train_mode_name(TrainMode m);

struct TrainConfig {
  TrainMode mode = TrainMode::kRegular;
  int epochs = 1;
  std::int64_t batch_size = 256;
  double lr = 0.1;
  double lambda = 1.0;        // weight of the KL term
  double mask_fraction = 0.5; // share of lowest-|gradient| pixels replaced
  std::uint64_t seed = 0;

  void validate() const;
};

// Original batch plus its masked twin; mask[i] is true where a pixel was
// replaced. Per image exactly floor(mask_fraction * pixels) entries are true.
struct MaskedBatch {
  Tensor original;
  Tensor masked;
  std::vector<std::uint8_t> mask;
};

// Gradient of the cross-entropy loss with respect to each input pixel,
// computed with dropout disabled.
Tensor input_gradients(const Classifier& c, const Tensor& batch,
                       std::span<const int> labels);

// Replaces, per image, the floor(K*P) pixels with the smallest |gradient| by
// i.i.d. draws from Uniform[min(image), max(image)]. Ties on |gradient| break
// toward the lower flat index; draws are consumed in ascending flat-index
// order of the replaced pixels.
MaskedBatch mask_low_gradient_pixels(const Tensor& batch, const Tensor& grads,
                                     double mask_fraction, Rng& rng);

// cross_entropy(f(X), y) + lambda * KL(f(X) || f(X~)), both forwards sharing
// one dropout mask. Returns the scalar loss value.
Tensor saliency_loss(const Classifier& c, const Tensor& batch,
                     const Tensor& masked, std::span<const int> labels,
                     double lambda, Rng& rng);

struct EpochMetrics {
  int epoch = 0;
  TrainMode mode = TrainMode::kRegular;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

// One pass over the dataset: shuffles, then per batch either the plain
// cross-entropy step or the gradient-sort / mask / joint-loss sequence,
// followed by an Adadelta update. `rng` carries determinism across epochs.
EpochMetrics train_epoch(Model& model, const Dataset& data,
                         const TrainConfig& config, AdadeltaState& state,
                         Rng& rng, int epoch_index);

// Full training run; appends one `epoch,mode,loss,train_acc` line per epoch
// to metrics (CSV rows, no header handling here).
std::vector<EpochMetrics> train(Model& model, const Dataset& data,
                                const TrainConfig& config);

std::string metrics_csv(std::span<const EpochMetrics> rows);

}  // namespace salgrad
