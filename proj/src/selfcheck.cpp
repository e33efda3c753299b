#include "salgrad/selfcheck.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "salgrad/attacks.hpp"
#include "salgrad/data.hpp"

namespace salgrad {

namespace {

double eval_cnn_loss(const std::vector<DTensor>& values,
                     std::span<const int> labels) {
  TapeT<double> tape;
  std::vector<TensorId> ids;
  for (const auto& v : values) ids.push_back(tape.leaf(v));
  const std::span<const TensorId> params(ids.data() + 1, ids.size() - 1);
  const TensorId logits =
      stage_mnist_cnn(tape, params, ids.front(), /*train=*/false, nullptr);
  const TensorId loss =
      tape.cross_entropy(tape.log_softmax(logits, 1), labels);
  return static_cast<double>(tape.value(loss)[0]);
}

}  // namespace

double cnn_loss_fd_error(const Model& model, const Tensor& batch,
                         std::span<const int> labels, int n_coords, double h,
                         std::uint64_t seed) {
  std::vector<DTensor> values;
  values.push_back(widen(batch));
  for (std::size_t i = 0; i < model.param_count(); ++i)
    values.push_back(widen(model.param(i)));

  // analytic gradients for every leaf
  TapeT<double> tape;
  std::vector<TensorId> ids;
  for (const auto& v : values) ids.push_back(tape.leaf(v));
  const std::span<const TensorId> params(ids.data() + 1, ids.size() - 1);
  const TensorId logits =
      stage_mnist_cnn(tape, params, ids.front(), false, nullptr);
  const TensorId loss =
      tape.cross_entropy(tape.log_softmax(logits, 1), labels);
  const GradMapT<double> grads = tape.backward(loss, ids);

  double scale = 1.0;
  for (const TensorId id : ids) {
    const DTensor& g = grads.at(id);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      scale = std::max(scale, std::abs(g[i]));
  }

  // coordinates sampled proportionally to tensor size
  std::int64_t total = 0;
  for (const auto& v : values) total += v.numel();

  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < n_coords; ++k) {
    std::int64_t flat = rng.below(total);
    std::size_t t = 0;
    while (flat >= values[t].numel()) {
      flat -= values[t].numel();
      ++t;
    }
    const double orig = values[t][flat];
    values[t][flat] = orig + h;
    const double up = eval_cnn_loss(values, labels);
    values[t][flat] = orig - h;
    const double down = eval_cnn_loss(values, labels);
    values[t][flat] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double an = grads.at(ids[t])[flat];
    worst = std::max(worst, std::abs(an - fd) / scale);
  }
  return worst;
}

namespace {

std::filesystem::path temp_file(const char* stem) {
  static int counter = 0;
  return std::filesystem::temp_directory_path() /
         (std::string(stem) + "." + std::to_string(::getpid()) + "." +
          std::to_string(counter++));
}

SelfCheckItem check(const std::string& name, bool ok, std::string detail) {
  return {name, ok, std::move(detail)};
}

std::string errfmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

SelfCheckReport run_selfcheck(int gradcheck_points) {
  SelfCheckReport report;
  constexpr double kTol = 1e-4;

  for (const auto& c : standard_gradcheck_cases()) {
    const GradCheckResult r =
        run_gradcheck_case(c, gradcheck_points, 1e-4, 20250809);
    report.items.push_back(check(
        "gradcheck." + r.name, r.passed(kTol),
        "max rel err " + errfmt(r.max_rel_error) + " over " +
            std::to_string(r.points) + " points"));
  }

  {
    const Model model = Model::build_mnist_cnn(7);
    const Dataset probe = synthetic_two_class(2, 99);
    const double err =
        cnn_loss_fd_error(model, probe.images, probe.labels, 20, 1e-5, 31337);
    report.items.push_back(check("gradcheck.cnn_loss", err < kTol,
                                 "max rel err " + errfmt(err) +
                                     " over 20 sampled coordinates"));
  }

  {
    const Model model = Model::build_mnist_cnn(21);
    Rng rng(5150);
    Tensor x = Tensor::zeros({4, 1, 28, 28});
    for (std::int64_t i = 0; i < x.numel(); ++i)
      x[i] = rng.uniform_float(0.0f, 1.0f);
    std::vector<int> y;
    for (int i = 0; i < 4; ++i) y.push_back(static_cast<int>(rng.below(10)));

    const double eps = 0.2;
    const AdversarialBatch f = fgsm(model, x, y, eps);
    const AdversarialBatch b1 = bim(model, x, y, eps, eps, 1);
    report.items.push_back(check(
        "attacks.bim1_equals_fgsm",
        bitwise_equal(f.adversarial, b1.adversarial), "bitwise"));

    const AdversarialBatch b = bim(model, x, y, eps, eps / 4.0, 6);
    const AdversarialBatch m = mim(model, x, y, eps, eps / 4.0, 6, 0.0);
    report.items.push_back(check("attacks.mim_mu0_equals_bim",
                                 bitwise_equal(b.adversarial, m.adversarial),
                                 "bitwise"));

    const Tensor zero_noise = Tensor::zeros(x.shape);
    const AdversarialBatch p =
        pgd_from(model, x, y, eps, eps / 4.0, 6, zero_noise);
    report.items.push_back(check("attacks.pgd_zero_init_equals_bim",
                                 bitwise_equal(b.adversarial, p.adversarial),
                                 "bitwise"));
  }

  {
    const Dataset small = synthetic_two_class(16, 3);
    // quantize onto the u8 grid so the byte roundtrip is exact
    Dataset grid = small;
    for (std::int64_t i = 0; i < grid.images.numel(); ++i)
      grid.images[i] =
          static_cast<float>(std::lround(grid.images[i] * 255.0f)) / 255.0f;
    const auto ipath = temp_file("selfcheck_images.idx");
    const auto lpath = temp_file("selfcheck_labels.idx");
    bool ok = false;
    std::string detail = "bitwise";
    try {
      save_idx(grid, ipath.string(), lpath.string());
      const Dataset back = load_idx(ipath.string(), lpath.string());
      ok = bitwise_equal(back.images, grid.images) && back.labels == grid.labels;
    } catch (const Error& e) {
      detail = e.what();
    }
    std::filesystem::remove(ipath);
    std::filesystem::remove(lpath);
    report.items.push_back(check("data.idx_roundtrip", ok, detail));
  }

  {
    const Model model = Model::build_mnist_cnn(77);
    const auto path = temp_file("selfcheck_ckpt.bin");
    bool ok = false;
    std::string detail = "bitwise";
    try {
      save_checkpoint(model, path.string());
      const Model back = load_checkpoint(path.string());
      ok = back.arch_id() == model.arch_id() &&
           back.build_seed() == model.build_seed();
      for (std::size_t i = 0; ok && i < model.param_count(); ++i)
        ok = bitwise_equal(back.param(i), model.param(i));
    } catch (const Error& e) {
      detail = e.what();
    }
    std::filesystem::remove(path);
    report.items.push_back(check("model.checkpoint_roundtrip", ok, detail));
  }

  return report;
}

}  // namespace salgrad
