#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "salgrad/attacks.hpp"
#include "salgrad/data.hpp"
#include "salgrad/model.hpp"

namespace salgrad {

struct CurvePoint {
  double epsilon = 0.0;
  std::int64_t n_samples = 0;
  std::int64_t n_correct = 0;
  double accuracy = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

// Accuracy-vs-epsilon series for one (model, attack) pair. Epsilons are
// strictly increasing and the grid includes eps = 0.
struct RobustnessCurve {
  std::string model_label;
  std::string attack;
  std::vector<CurvePoint> points;

  bool operator==(const RobustnessCurve&) const = default;
};

std::vector<int> predict(const Classifier& c, const Tensor& images,
                         std::int64_t batch_size = 256);

// Top-1 accuracy over the full dataset, eval mode.
double accuracy(const Classifier& c, const Dataset& ds);

// `start:end:step` grid, snapped to short decimal values so CSV writes
// re-parse to identical doubles. Must start at 0.
std::vector<double> parse_eps_grid(const std::string& spec);
std::vector<double> eps_grid(double start, double end, double step);

struct SweepOptions {
  std::vector<double> grid;        // must start at 0
  std::int64_t max_samples = 1000; // evaluation subset for the sweep
  std::uint64_t seed = 0;
  // Optional overrides of the per-attack defaults (<=0 keeps the default).
  int pgd_steps = 0;
  int bim_steps = 0;
  double alpha = 0.0;
  double mu = -1.0;
};

// For each attack and eps: generate adversarials on the evaluation subset and
// measure accuracy. Hard invariants enforced per cell: containment within
// eps + 1e-6 and [0,1], and bitwise identity of the eps=0 batch. Cell RNG is
// derived from (seed, attack, eps), so any execution order gives the same
// curves.
std::vector<RobustnessCurve> robustness_sweep(const Classifier& c,
                                              const Dataset& ds,
                                              std::span<const AttackKind> kinds,
                                              const SweepOptions& opt,
                                              const std::string& model_label);

// CSV columns: model,attack,epsilon,n_samples,n_correct,accuracy.
std::string curves_csv(std::span<const RobustnessCurve> curves);
void write_csv(std::span<const RobustnessCurve> curves, const std::string& path);
std::vector<RobustnessCurve> parse_csv(const std::string& text);
std::vector<RobustnessCurve> read_csv(const std::string& path);

// One panel per attack, eps on x, accuracy on y, one polyline per model.
std::string curves_svg(std::span<const RobustnessCurve> curves);
void render_svg(std::span<const RobustnessCurve> curves, const std::string& path);

// Per (attack, eps) sign and magnitude of accuracy(label_a) - accuracy(label_b);
// one line per grid point, used for the paired saliency-vs-regular report.
std::string comparison_summary(std::span<const RobustnessCurve> curves,
                               const std::string& label_a,
                               const std::string& label_b);

}  // namespace salgrad
