#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "salgrad/model.hpp"

namespace salgrad {

enum class AttackKind { kFgsm, kBim, kPgd, kMim };

const char* attack_name(AttackKind k);
std::optional<AttackKind> parse_attack(const std::string& name);
std::span<const AttackKind> all_attacks();

struct AttackSpec {
  AttackKind kind = AttackKind::kFgsm;
  double epsilon = 0.0;  // L-inf budget in pixel units
  double alpha = 0.0;    // per-step size (iterative kinds)
  int steps = 1;
  double mu = 1.0;       // momentum decay (mim)
  std::uint64_t seed = 0;

  void validate() const;
};

// Paperless step counts are project defaults: 10 steps at eps/4 for BIM and
// MIM, 40 steps at eps/20 for PGD, mu = 1.
AttackSpec default_spec(AttackKind kind, double epsilon, std::uint64_t seed);

struct AdversarialBatch {
  Tensor adversarial;
  Tensor original;
  std::vector<float> perturbation_norm;  // per-sample L-inf distance
  int degenerate_steps = 0;  // (step, sample) events with a zero-norm gradient
};

// Elementwise clamp to [x_orig - eps, x_orig + eps] intersected with [0,1].
Tensor project(const Tensor& x_adv, const Tensor& x_orig, double epsilon);

// One signed-gradient step of size epsilon, then valid-range clamp.
AdversarialBatch fgsm(const Classifier& c, const Tensor& x,
                      std::span<const int> y, double epsilon);

// Iterative signed steps with projection after every step; x0 = x.
AdversarialBatch bim(const Classifier& c, const Tensor& x,
                     std::span<const int> y, double epsilon, double alpha,
                     int steps);

// BIM from a random start: x0 = project(x + Uniform[-eps,eps]).
AdversarialBatch pgd(const Classifier& c, const Tensor& x,
                     std::span<const int> y, double epsilon, double alpha,
                     int steps, Rng& rng);
// Same with caller-provided initial noise (a zero tensor reduces to bim).
AdversarialBatch pgd_from(const Classifier& c, const Tensor& x,
                          std::span<const int> y, double epsilon, double alpha,
                          int steps, const Tensor& init_noise);

// Momentum accumulation of L2-normalized gradients (per sample), signed step
// of size alpha, projection each step. Zero-norm gradients skip normalization
// and are counted in degenerate_steps.
AdversarialBatch mim(const Classifier& c, const Tensor& x,
                     std::span<const int> y, double epsilon, double alpha,
                     int steps, double mu);

AdversarialBatch run_attack(const Classifier& c, const Tensor& x,
                            std::span<const int> y, const AttackSpec& spec);

// Same attack applied chunk by chunk (bounded tape memory). Chunk RNG is
// derived from (spec.seed, chunk index), so results depend only on the spec
// and the chunk size, never on scheduling.
AdversarialBatch run_attack_chunked(const Classifier& c, const Tensor& x,
                                    std::span<const int> y,
                                    const AttackSpec& spec,
                                    std::int64_t chunk_size = 256);

// Grayscale [0,1] image as a binary (P5) PGM file.
void write_pgm(const std::string& path, const float* image, std::int64_t h,
               std::int64_t w);

}  // namespace salgrad
