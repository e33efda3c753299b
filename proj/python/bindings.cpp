#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "salgrad/attacks.hpp"
#include "salgrad/data.hpp"
#include "salgrad/eval.hpp"
#include "salgrad/model.hpp"
#include "salgrad/saliency.hpp"
#include "salgrad/selfcheck.hpp"

namespace py = pybind11;
using namespace salgrad;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const FloatArray& a) {
  Shape shape;
  for (py::ssize_t d = 0; d < a.ndim(); ++d)
    shape.push_back(static_cast<std::int64_t>(a.shape(d)));
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<float> array_from(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

Dataset dataset_from(const FloatArray& images, const std::vector<int>& labels) {
  Dataset ds;
  ds.images = tensor_from(images);
  if (ds.images.rank() != 4)
    throw ParameterError("images must be N x C x H x W");
  ds.labels = labels;
  ds.name = "array";
  ds.split = "test";
  if (ds.size() != static_cast<std::int64_t>(labels.size()))
    throw ParameterError("images and labels disagree on the sample count");
  return ds;
}

AttackSpec spec_from(const std::string& kind, double eps,
                     std::optional<double> alpha, std::optional<int> steps,
                     std::optional<double> mu, std::uint64_t seed) {
  const auto parsed = parse_attack(kind);
  if (!parsed)
    throw ParameterError("unknown attack '" + kind +
                         "' (valid: fgsm, bim, pgd, mim)");
  AttackSpec spec = default_spec(*parsed, eps, seed);
  if (alpha) spec.alpha = *alpha;
  if (steps) spec.steps = *steps;
  if (mu) spec.mu = *mu;
  return spec;
}

TrainConfig config_from(const std::string& mode, int epochs,
                        std::int64_t batch_size, double lr, double lambda,
                        double mask_fraction, std::uint64_t seed) {
  TrainConfig config;
  if (mode == "regular") config.mode = TrainMode::kRegular;
  else if (mode == "saliency") config.mode = TrainMode::kSaliency;
  else throw ParameterError("mode must be 'regular' or 'saliency'");
  config.epochs = epochs;
  config.batch_size = batch_size;
  config.lr = lr;
  config.lambda = lambda;
  config.mask_fraction = mask_fraction;
  config.seed = seed;
  config.validate();
  return config;
}

py::list curves_to_py(const std::vector<RobustnessCurve>& curves) {
  py::list out;
  for (const auto& c : curves) {
    py::dict d;
    d["model"] = c.model_label;
    d["attack"] = c.attack;
    py::list pts;
    for (const auto& p : c.points) {
      py::dict pd;
      pd["epsilon"] = p.epsilon;
      pd["n_samples"] = p.n_samples;
      pd["n_correct"] = p.n_correct;
      pd["accuracy"] = p.accuracy;
      pts.append(pd);
    }
    d["points"] = pts;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "saliency-guided training and white-box adversarial attacks on a "
            "small CNN, with reverse-mode autodiff underneath";

  py::register_exception<ParameterError>(m, "ParameterError",
                                         PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError",
                                         PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  py::class_<Model>(m, "Model")
      .def_static("build_mnist_cnn", &Model::build_mnist_cnn, py::arg("seed"))
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save",
           [](const Model& self, const std::string& path) {
             save_checkpoint(self, path);
           },
           py::arg("path"))
      .def_property_readonly("arch_id", &Model::arch_id)
      .def_property_readonly("seed", &Model::build_seed)
      .def_property_readonly("epochs_trained", &Model::epochs_trained)
      .def_property_readonly("n_parameters", &Model::total_parameters)
      .def("forward",
           [](const Model& self, const FloatArray& batch) {
             return array_from(self.forward(tensor_from(batch)));
           },
           py::arg("batch"), "Eval-mode logits for an N x 1 x 28 x 28 batch.")
      .def("predict",
           [](const Model& self, const FloatArray& batch) {
             return predict(self, tensor_from(batch));
           },
           py::arg("batch"))
      .def("__repr__", [](const Model& self) {
        return "<salgrad.Model arch=" + self.arch_id() + " params=" +
               std::to_string(self.total_parameters()) + ">";
      });

  m.def("set_num_threads", &set_num_threads, py::arg("n"));

  m.def(
      "synthetic_two_class",
      [](std::int64_t n, std::uint64_t seed) {
        const Dataset ds = synthetic_two_class(n, seed);
        return py::make_tuple(array_from(ds.images), ds.labels);
      },
      py::arg("n"), py::arg("seed"),
      "Deterministic linearly separable 28x28 two-class set.");

  m.def(
      "load_idx",
      [](const std::string& images_path, const std::string& labels_path) {
        const Dataset ds = load_idx(images_path, labels_path);
        return py::make_tuple(array_from(ds.images), ds.labels);
      },
      py::arg("images_path"), py::arg("labels_path"));

  m.def(
      "train_model",
      [](const FloatArray& images, const std::vector<int>& labels,
         const std::string& mode, int epochs, std::int64_t batch_size,
         double lr, double lambda, double mask_fraction, std::uint64_t seed) {
        const Dataset ds = dataset_from(images, labels);
        const TrainConfig config = config_from(mode, epochs, batch_size, lr,
                                               lambda, mask_fraction, seed);
        Model model = Model::build_mnist_cnn(seed);
        const auto metrics = train(model, ds, config);
        py::list rows;
        for (const auto& e : metrics)
          rows.append(py::make_tuple(e.epoch, train_mode_name(e.mode),
                                     e.mean_loss, e.train_accuracy));
        return py::make_tuple(std::move(model), rows);
      },
      py::arg("images"), py::arg("labels"), py::arg("mode") = "regular",
      py::arg("epochs") = 1, py::arg("batch_size") = 256,
      py::arg("lr") = 0.1, py::arg("lambda_") = 1.0,
      py::arg("mask_fraction") = 0.5, py::arg("seed") = 0,
      "Trains the fixed MNIST CNN; returns (model, per-epoch metrics).");

  m.def(
      "input_gradients",
      [](const Model& model, const FloatArray& batch,
         const std::vector<int>& labels) {
        return array_from(
            input_gradients(model, tensor_from(batch), labels));
      },
      py::arg("model"), py::arg("batch"), py::arg("labels"),
      "Gradient of the cross-entropy loss with respect to every pixel.");

  m.def(
      "mask_low_gradient_pixels",
      [](const FloatArray& batch, const FloatArray& grads,
         double mask_fraction, std::uint64_t seed) {
        Rng rng(seed);
        const MaskedBatch mb = mask_low_gradient_pixels(
            tensor_from(batch), tensor_from(grads), mask_fraction, rng);
        py::array_t<std::uint8_t> mask(
            std::vector<py::ssize_t>(mb.masked.shape.begin(),
                                     mb.masked.shape.end()));
        std::copy(mb.mask.begin(), mb.mask.end(), mask.mutable_data());
        return py::make_tuple(array_from(mb.masked), mask);
      },
      py::arg("batch"), py::arg("grads"), py::arg("mask_fraction"),
      py::arg("seed") = 0);

  m.def(
      "attack",
      [](const Model& model, const FloatArray& x, const std::vector<int>& y,
         const std::string& kind, double eps, std::optional<double> alpha,
         std::optional<int> steps, std::optional<double> mu,
         std::uint64_t seed) {
        const AttackSpec spec = spec_from(kind, eps, alpha, steps, mu, seed);
        const AdversarialBatch adv =
            run_attack_chunked(model, tensor_from(x), y, spec);
        return py::make_tuple(array_from(adv.adversarial),
                              adv.perturbation_norm);
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("kind") = "fgsm",
      py::arg("eps") = 0.3, py::arg("alpha") = std::nullopt,
      py::arg("steps") = std::nullopt, py::arg("mu") = std::nullopt,
      py::arg("seed") = 0,
      "Adversarial batch and per-sample L-inf perturbation norms.");

  m.def(
      "accuracy",
      [](const Model& model, const FloatArray& images,
         const std::vector<int>& labels) {
        return accuracy(model, dataset_from(images, labels));
      },
      py::arg("model"), py::arg("images"), py::arg("labels"));

  m.def(
      "robustness_sweep",
      [](const Model& model, const FloatArray& images,
         const std::vector<int>& labels, const std::vector<std::string>& kinds,
         const std::vector<double>& grid, std::int64_t max_samples,
         std::uint64_t seed, const std::string& label) {
        std::vector<AttackKind> parsed;
        for (const auto& k : kinds) {
          const auto kind = parse_attack(k);
          if (!kind) throw ParameterError("unknown attack '" + k + "'");
          parsed.push_back(*kind);
        }
        SweepOptions opt;
        opt.grid = grid;
        opt.max_samples = max_samples;
        opt.seed = seed;
        return curves_to_py(robustness_sweep(
            model, dataset_from(images, labels), parsed, opt, label));
      },
      py::arg("model"), py::arg("images"), py::arg("labels"),
      py::arg("attacks") = std::vector<std::string>{"fgsm", "bim", "pgd",
                                                    "mim"},
      py::arg("eps_grid") = std::vector<double>{0.0, 0.05, 0.1, 0.15, 0.2,
                                                0.25, 0.3},
      py::arg("max_samples") = 1000, py::arg("seed") = 0,
      py::arg("label") = "model");

  m.def("eps_grid", &eps_grid, py::arg("start"), py::arg("end"),
        py::arg("step"));

  m.def(
      "render_svg",
      [](const std::string& curves_csv_path, const std::string& svg_path) {
        render_svg(read_csv(curves_csv_path), svg_path);
      },
      py::arg("curves_csv_path"), py::arg("svg_path"));

  m.def(
      "selfcheck",
      [](int points) {
        const SelfCheckReport report = run_selfcheck(points);
        py::list items;
        for (const auto& i : report.items)
          items.append(py::make_tuple(i.name, i.passed, i.detail));
        return py::make_tuple(report.all_passed(), items);
      },
      py::arg("points") = 5,
      "Gradient, reduction-identity and roundtrip checks; returns "
      "(all_passed, items).");
}
