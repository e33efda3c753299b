#include "salgrad/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace salgrad {

const char* train_mode_name(TrainMode m) {
  return m == TrainMode::kRegular ? "regular" : "saliency";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ParameterError("train: epochs must be >= 1");
  if (batch_size < 1) throw ParameterError("train: batch_size must be >= 1");
  if (!(mask_fraction >= 0.0 && mask_fraction <= 1.0))
    throw ParameterError("train: mask_fraction must be in [0,1], got " +
                         std::to_string(mask_fraction));
  if (lambda < 0.0)
    throw ParameterError("train: lambda must be >= 0, got " +
                         std::to_string(lambda));
  if (lr <= 0.0) throw ParameterError("train: lr must be > 0");
}

Tensor input_gradients(const Classifier& c, const Tensor& batch,
                       std::span<const int> labels) {
  Tape tape;
  const TensorId x = tape.leaf(batch);
  const TensorId logits = c.stage(tape, x, /*train=*/false, nullptr);
  const TensorId lp = tape.log_softmax(logits, 1);
  const TensorId loss = tape.cross_entropy(lp, labels);
  const TensorId wrt[] = {x};
  return tape.backward(loss, wrt).at(x);
}

MaskedBatch mask_low_gradient_pixels(const Tensor& batch, const Tensor& grads,
                                     double mask_fraction, Rng& rng) {
  if (!(mask_fraction >= 0.0 && mask_fraction <= 1.0))
    throw ParameterError("mask_low_gradient_pixels: mask_fraction must be in "
                         "[0,1], got " + std::to_string(mask_fraction));
  if (!batch.same_shape(grads))
    throw DimensionError("mask_low_gradient_pixels: batch " +
                         shape_str(batch.shape) + " vs grads " +
                         shape_str(grads.shape));
  const std::int64_t n = batch.dim(0);
  const std::int64_t pixels = batch.numel() / n;
  // floor(K*P), nudged so decimal fractions like 0.7*10 land on the integer
  const std::int64_t replaced = static_cast<std::int64_t>(
      std::floor(mask_fraction * static_cast<double>(pixels) + 1e-9));

  MaskedBatch out;
  out.original = batch;
  out.masked = batch;
  out.mask.assign(static_cast<std::size_t>(batch.numel()), 0);

  std::vector<std::int64_t> order(static_cast<std::size_t>(pixels));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* img = batch.ptr() + i * pixels;
    const float* g = grads.ptr() + i * pixels;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [g](std::int64_t a, std::int64_t b) {
                const float ga = std::fabs(g[a]), gb = std::fabs(g[b]);
                return ga != gb ? ga < gb : a < b;
              });
    order.resize(static_cast<std::size_t>(replaced));
    std::sort(order.begin(), order.end());  // draw in flat-index order

    float lo = img[0], hi = img[0];
    for (std::int64_t p = 1; p < pixels; ++p) {
      lo = std::min(lo, img[p]);
      hi = std::max(hi, img[p]);
    }
    float* masked = out.masked.ptr() + i * pixels;
    for (std::int64_t p : order) {
      masked[p] = rng.uniform_float(lo, hi);
      out.mask[static_cast<std::size_t>(i * pixels + p)] = 1;
    }
    order.resize(static_cast<std::size_t>(pixels));
  }
  return out;
}

namespace {

struct StagedLoss {
  TensorId loss;
  TensorId log_probs;  // log-probabilities of the unmasked forward
};

// Eq-style joint objective on an existing tape. Both forwards replay the
// same dropout masks by re-seeding from dropout_seed; with lambda == 0 the
// masked branch algebraically vanishes and is not staged.
StagedLoss stage_joint_loss(Tape& tape, const Model& model,
                            std::span<const TensorId> params, TensorId x,
                            TensorId x_masked, std::span<const int> labels,
                            double lambda, std::uint64_t dropout_seed) {
  Rng drop_rng(dropout_seed);
  const TensorId logits =
      model.stage_forward(tape, params, x, /*train=*/true, &drop_rng);
  const TensorId lp = tape.log_softmax(logits, 1);
  const TensorId ce = tape.cross_entropy(lp, labels);
  if (lambda == 0.0) return {ce, lp};

  Rng drop_rng_masked(dropout_seed);
  const TensorId logits_masked = model.stage_forward(
      tape, params, x_masked, /*train=*/true, &drop_rng_masked);
  const TensorId lp_masked = tape.log_softmax(logits_masked, 1);
  const TensorId kl = tape.kl_divergence(lp, lp_masked);
  return {tape.add(ce, tape.scale(kl, lambda)), lp};
}

std::int64_t count_correct(const Tensor& log_probs,
                           std::span<const int> labels) {
  const std::int64_t n = log_probs.dim(0), c = log_probs.dim(1);
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = log_probs.ptr() + i * c;
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return correct;
}

}  // namespace

Tensor saliency_loss(const Classifier& c, const Tensor& batch,
                     const Tensor& masked, std::span<const int> labels,
                     double lambda, Rng& rng) {
  if (!batch.same_shape(masked))
    throw DimensionError("saliency_loss: batch " + shape_str(batch.shape) +
                         " vs masked " + shape_str(masked.shape));
  Tape tape;
  const std::uint64_t dropout_seed = rng.next_u64();
  Rng drop_rng(dropout_seed);
  const TensorId lp = tape.log_softmax(
      c.stage(tape, tape.leaf(batch), /*train=*/true, &drop_rng), 1);
  TensorId loss = tape.cross_entropy(lp, labels);
  if (lambda != 0.0) {
    Rng drop_rng_masked(dropout_seed);
    const TensorId lp_masked = tape.log_softmax(
        c.stage(tape, tape.leaf(masked), /*train=*/true, &drop_rng_masked), 1);
    loss = tape.add(loss, tape.scale(tape.kl_divergence(lp, lp_masked), lambda));
  }
  return tape.value(loss);
}

EpochMetrics train_epoch(Model& model, const Dataset& data,
                         const TrainConfig& config, AdadeltaState& state,
                         Rng& rng, int epoch_index) {
  config.validate();
  if (data.size() == 0) throw ParameterError("train_epoch: empty dataset");

  const auto index_batches =
      batch_indices(data.size(), config.batch_size, rng.next_u64());

  double loss_sum = 0.0;
  std::int64_t correct = 0;
  for (const auto& idx : index_batches) {
    const Batch b = gather(data, idx);

    Tape tape;
    const auto params = model.stage_params(tape);
    StagedLoss staged{};
    if (config.mode == TrainMode::kSaliency) {
      const Tensor gx = input_gradients(model, b.images, b.labels);
      const std::uint64_t dropout_seed = rng.next_u64();
      const MaskedBatch mb =
          mask_low_gradient_pixels(b.images, gx, config.mask_fraction, rng);
      const TensorId x = tape.leaf(b.images);
      const TensorId xm = tape.leaf(mb.masked);
      staged = stage_joint_loss(tape, model, params, x, xm, b.labels,
                                config.lambda, dropout_seed);
    } else {
      const std::uint64_t dropout_seed = rng.next_u64();
      const TensorId x = tape.leaf(b.images);
      staged = stage_joint_loss(tape, model, params, x, x, b.labels,
                                /*lambda=*/0.0, dropout_seed);
    }

    const GradMap grads = tape.backward(staged.loss, params);
    adadelta_step(model, grads, params, state);

    const std::int64_t bn = static_cast<std::int64_t>(idx.size());
    loss_sum += static_cast<double>(tape.value(staged.loss)[0]) *
                static_cast<double>(bn);
    correct += count_correct(tape.value(staged.log_probs), b.labels);
  }

  EpochMetrics m;
  m.epoch = epoch_index;
  m.mode = config.mode;
  m.mean_loss = loss_sum / static_cast<double>(data.size());
  m.train_accuracy =
      static_cast<double>(correct) / static_cast<double>(data.size());
  return m;
}

std::vector<EpochMetrics> train(Model& model, const Dataset& data,
                                const TrainConfig& config) {
  config.validate();
  AdadeltaState state = AdadeltaState::init(model, config.lr);
  Rng rng(config.seed);
  std::vector<EpochMetrics> metrics;
  for (int e = 1; e <= config.epochs; ++e) {
    metrics.push_back(train_epoch(model, data, config, state, rng, e));
    model.set_epochs_trained(static_cast<std::uint32_t>(e));
  }
  return metrics;
}

std::string metrics_csv(std::span<const EpochMetrics> rows) {
  std::string out = "epoch,mode,loss,train_acc\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%s,%.6f,%.6f\n", r.epoch,
                  train_mode_name(r.mode), r.mean_loss, r.train_accuracy);
    out += line;
  }
  return out;
}

}  // namespace salgrad
