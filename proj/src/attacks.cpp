#include "salgrad/attacks.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iostream>

#include "salgrad/saliency.hpp"

namespace salgrad {

const char* attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kBim: return "bim";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kMim: return "mim";
  }
  return "?";
}

std::optional<AttackKind> parse_attack(const std::string& name) {
  if (name == "fgsm") return AttackKind::kFgsm;
  if (name == "bim") return AttackKind::kBim;
  if (name == "pgd") return AttackKind::kPgd;
  if (name == "mim") return AttackKind::kMim;
  return std::nullopt;
}

std::span<const AttackKind> all_attacks() {
  static const std::array<AttackKind, 4> kinds = {
      AttackKind::kFgsm, AttackKind::kBim, AttackKind::kPgd, AttackKind::kMim};
  return kinds;
}

void AttackSpec::validate() const {
  if (epsilon < 0.0)
    throw ParameterError("attack: epsilon must be >= 0, got " +
                         std::to_string(epsilon));
  if (kind != AttackKind::kFgsm) {
    if (alpha <= 0.0)
      throw ParameterError("attack: alpha must be > 0 for iterative attacks");
    if (steps < 1) throw ParameterError("attack: steps must be >= 1");
    if (alpha > epsilon && epsilon > 0.0)
      std::cerr << "warning: " << attack_name(kind) << " alpha " << alpha
                << " exceeds epsilon " << epsilon << "\n";
  }
  if (mu < 0.0) throw ParameterError("attack: mu must be >= 0");
}

AttackSpec default_spec(AttackKind kind, double epsilon, std::uint64_t seed) {
  AttackSpec s;
  s.kind = kind;
  s.epsilon = epsilon;
  s.seed = seed;
  s.mu = 1.0;
  switch (kind) {
    case AttackKind::kFgsm:
      s.alpha = epsilon;
      s.steps = 1;
      break;
    case AttackKind::kBim:
    case AttackKind::kMim:
      s.alpha = epsilon / 4.0;
      s.steps = 10;
      break;
    case AttackKind::kPgd:
      s.alpha = epsilon / 20.0;
      s.steps = 40;
      break;
  }
  // a zero-budget iterative attack still needs a positive step size
  if (s.kind != AttackKind::kFgsm && s.alpha <= 0.0) s.alpha = 1e-6;
  return s;
}

namespace {

inline float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

// Single compiled step routine shared by every attack so the reduction
// identities (bim(1, eps) == fgsm, ...) stay bitwise under FP contraction.
void signed_step_inplace(Tensor& x, const Tensor& direction, float step) {
  for (std::int64_t i = 0; i < x.numel(); ++i)
    x[i] += step * sign_of(direction[i]);
}

void project_inplace(Tensor& x_adv, const Tensor& x_orig, float eps) {
  for (std::int64_t i = 0; i < x_adv.numel(); ++i) {
    const float lo = std::max(x_orig[i] - eps, 0.0f);
    const float hi = std::min(x_orig[i] + eps, 1.0f);
    x_adv[i] = std::min(std::max(x_adv[i], lo), hi);
  }
}

void clamp01_inplace(Tensor& x) {
  for (std::int64_t i = 0; i < x.numel(); ++i)
    x[i] = std::min(std::max(x[i], 0.0f), 1.0f);
}

AdversarialBatch finish(Tensor adv, const Tensor& orig, int degenerate) {
  AdversarialBatch out;
  out.degenerate_steps = degenerate;
  const std::int64_t n = orig.dim(0);
  const std::int64_t pixels = orig.numel() / n;
  out.perturbation_norm.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    float m = 0.0f;
    const float* a = adv.ptr() + i * pixels;
    const float* o = orig.ptr() + i * pixels;
    for (std::int64_t p = 0; p < pixels; ++p)
      m = std::max(m, std::fabs(a[p] - o[p]));
    out.perturbation_norm[static_cast<std::size_t>(i)] = m;
  }
  out.adversarial = std::move(adv);
  out.original = orig;
  return out;
}

// Normalizes each sample's gradient slice by its L2 norm; zero-norm slices
// are left untouched and counted.
int l2_normalize_per_sample(Tensor& g, std::int64_t n) {
  const std::int64_t pixels = g.numel() / n;
  int degenerate = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    float* row = g.ptr() + i * pixels;
    double sq = 0.0;
    for (std::int64_t p = 0; p < pixels; ++p)
      sq += static_cast<double>(row[p]) * static_cast<double>(row[p]);
    const float norm = static_cast<float>(std::sqrt(sq));
    if (norm == 0.0f) {
      ++degenerate;
      continue;
    }
    for (std::int64_t p = 0; p < pixels; ++p) row[p] /= norm;
  }
  return degenerate;
}

AdversarialBatch iterate_signed(const Classifier& c, const Tensor& x,
                                std::span<const int> y, double epsilon,
                                double alpha, int steps, bool momentum,
                                double mu, Tensor x0) {
  const float eps_f = static_cast<float>(epsilon);
  const float alpha_f = static_cast<float>(alpha);
  Tensor adv = std::move(x0);
  Tensor g_acc;
  if (momentum) g_acc = Tensor::zeros(x.shape);
  int degenerate = 0;
  for (int s = 0; s < steps; ++s) {
    Tensor g = input_gradients(c, adv, y);
    if (momentum) {
      degenerate += l2_normalize_per_sample(g, x.dim(0));
      const float mu_f = static_cast<float>(mu);
      for (std::int64_t i = 0; i < g_acc.numel(); ++i)
        g_acc[i] = mu_f * g_acc[i] + g[i];
      signed_step_inplace(adv, g_acc, alpha_f);
    } else {
      signed_step_inplace(adv, g, alpha_f);
    }
    project_inplace(adv, x, eps_f);
  }
  return finish(std::move(adv), x, degenerate);
}

}  // namespace

Tensor project(const Tensor& x_adv, const Tensor& x_orig, double epsilon) {
  if (!x_adv.same_shape(x_orig))
    throw DimensionError("project: " + shape_str(x_adv.shape) + " vs " +
                         shape_str(x_orig.shape));
  if (epsilon < 0.0) throw ParameterError("project: epsilon must be >= 0");
  Tensor out = x_adv;
  project_inplace(out, x_orig, static_cast<float>(epsilon));
  return out;
}

AdversarialBatch fgsm(const Classifier& c, const Tensor& x,
                      std::span<const int> y, double epsilon) {
  if (epsilon < 0.0) throw ParameterError("fgsm: epsilon must be >= 0");
  const Tensor g = input_gradients(c, x, y);
  Tensor adv = x;
  signed_step_inplace(adv, g, static_cast<float>(epsilon));
  clamp01_inplace(adv);
  return finish(std::move(adv), x, 0);
}

AdversarialBatch bim(const Classifier& c, const Tensor& x,
                     std::span<const int> y, double epsilon, double alpha,
                     int steps) {
  return iterate_signed(c, x, y, epsilon, alpha, steps, /*momentum=*/false,
                        0.0, x);
}

AdversarialBatch pgd_from(const Classifier& c, const Tensor& x,
                          std::span<const int> y, double epsilon, double alpha,
                          int steps, const Tensor& init_noise) {
  if (!init_noise.same_shape(x))
    throw DimensionError("pgd: noise " + shape_str(init_noise.shape) +
                         " vs batch " + shape_str(x.shape));
  Tensor x0 = x;
  for (std::int64_t i = 0; i < x0.numel(); ++i) x0[i] += init_noise[i];
  project_inplace(x0, x, static_cast<float>(epsilon));
  return iterate_signed(c, x, y, epsilon, alpha, steps, /*momentum=*/false,
                        0.0, std::move(x0));
}

AdversarialBatch pgd(const Classifier& c, const Tensor& x,
                     std::span<const int> y, double epsilon, double alpha,
                     int steps, Rng& rng) {
  Tensor noise = Tensor::zeros(x.shape);
  for (std::int64_t i = 0; i < noise.numel(); ++i)
    noise[i] = rng.uniform_float(static_cast<float>(-epsilon),
                                 static_cast<float>(epsilon));
  return pgd_from(c, x, y, epsilon, alpha, steps, noise);
}

AdversarialBatch mim(const Classifier& c, const Tensor& x,
                     std::span<const int> y, double epsilon, double alpha,
                     int steps, double mu) {
  return iterate_signed(c, x, y, epsilon, alpha, steps, /*momentum=*/true, mu,
                        x);
}

AdversarialBatch run_attack(const Classifier& c, const Tensor& x,
                            std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case AttackKind::kFgsm:
      return fgsm(c, x, y, spec.epsilon);
    case AttackKind::kBim:
      return bim(c, x, y, spec.epsilon, spec.alpha, spec.steps);
    case AttackKind::kPgd: {
      Rng rng(spec.seed);
      return pgd(c, x, y, spec.epsilon, spec.alpha, spec.steps, rng);
    }
    case AttackKind::kMim:
      return mim(c, x, y, spec.epsilon, spec.alpha, spec.steps, spec.mu);
  }
  throw ParameterError("attack: unknown kind");
}

AdversarialBatch run_attack_chunked(const Classifier& c, const Tensor& x,
                                    std::span<const int> y,
                                    const AttackSpec& spec,
                                    std::int64_t chunk_size) {
  if (chunk_size < 1)
    throw ParameterError("run_attack_chunked: chunk_size must be >= 1");
  const std::int64_t n = x.dim(0);
  if (n <= chunk_size) return run_attack(c, x, y, spec);

  const std::int64_t px = x.numel() / n;
  AdversarialBatch out;
  out.original = x;
  out.adversarial = Tensor::zeros(x.shape);
  out.perturbation_norm.reserve(static_cast<std::size_t>(n));
  std::int64_t chunk_index = 0;
  for (std::int64_t start = 0; start < n; start += chunk_size, ++chunk_index) {
    const std::int64_t stop = std::min(n, start + chunk_size);
    Tensor cx = Tensor::zeros({stop - start, x.dim(1), x.dim(2), x.dim(3)});
    std::copy_n(x.ptr() + start * px, (stop - start) * px, cx.ptr());
    const std::span<const int> cy(y.data() + start,
                                  static_cast<std::size_t>(stop - start));
    AttackSpec chunk_spec = spec;
    chunk_spec.seed =
        mix_seed(spec.seed, static_cast<std::uint64_t>(chunk_index));
    const AdversarialBatch adv = run_attack(c, cx, cy, chunk_spec);
    std::copy_n(adv.adversarial.ptr(), (stop - start) * px,
                out.adversarial.ptr() + start * px);
    out.perturbation_norm.insert(out.perturbation_norm.end(),
                                 adv.perturbation_norm.begin(),
                                 adv.perturbation_norm.end());
    out.degenerate_steps += adv.degenerate_steps;
  }
  return out;
}

void write_pgm(const std::string& path, const float* image, std::int64_t h,
               std::int64_t w) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("pgm: cannot write " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  for (std::int64_t i = 0; i < h * w; ++i) {
    const float v = std::min(1.0f, std::max(0.0f, image[i]));
    f.put(static_cast<char>(
        static_cast<unsigned char>(std::lround(v * 255.0f))));
  }
  if (!f) throw IoError("pgm: write failed for " + path);
}

}  // namespace salgrad
