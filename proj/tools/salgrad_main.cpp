#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "salgrad/attacks.hpp"
#include "salgrad/data.hpp"
#include "salgrad/eval.hpp"
#include "salgrad/model.hpp"
#include "salgrad/saliency.hpp"
#include "salgrad/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace salgrad;

namespace {

// exit codes: 0 ok, 1 usage, 2 runtime, 3 invariant violation
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitInvariant = 3;

std::string default_data_dir() {
  const char* env = std::getenv("SALGRAD_DATA_DIR");
  return env ? env : ".";
}

fs::path find_idx_file(const fs::path& dir, const std::string& stem) {
  // accept both the hyphenated and the dotted spelling of the classic names
  const fs::path hyphen = dir / stem;
  if (fs::exists(hyphen)) return hyphen;
  std::string dotted = stem;
  const auto pos = dotted.rfind("-idx");
  if (pos != std::string::npos) dotted[pos] = '.';
  const fs::path alt = dir / dotted;
  if (fs::exists(alt)) return alt;
  return hyphen;  // let load_idx report the canonical name
}

Dataset load_split(const std::string& dataset, const std::string& data_dir,
                   const std::string& split, std::int64_t synthetic_size,
                   std::uint64_t seed) {
  if (dataset == "synthetic") {
    Dataset ds = synthetic_two_class(
        synthetic_size, mix_seed(seed, split == "train" ? 0x7261 : 0x7465));
    ds.split = split;
    return ds;
  }
  if (dataset == "mnist") {
    const fs::path dir(data_dir);
    const std::string img = split == "train" ? "train-images-idx3-ubyte"
                                             : "t10k-images-idx3-ubyte";
    const std::string lab = split == "train" ? "train-labels-idx1-ubyte"
                                             : "t10k-labels-idx1-ubyte";
    Dataset ds = load_idx(find_idx_file(dir, img).string(),
                          find_idx_file(dir, lab).string());
    ds.split = split;
    return ds;
  }
  throw ParameterError("unknown dataset '" + dataset +
                       "' (use mnist or synthetic)");
}

std::string ckpt_label(const std::string& path) {
  return fs::path(path).stem().string();
}

struct CommonFlags {
  std::string dataset = "mnist";
  std::string data_dir = default_data_dir();
  std::int64_t synthetic_size = 4096;
  std::uint64_t seed = 0;
  int threads = 0;
  bool print_config = false;
};

void add_common(CLI::App* cmd, CommonFlags& c) {
  cmd->add_option("--dataset", c.dataset, "mnist or synthetic")
      ->check(CLI::IsMember({"mnist", "synthetic"}))
      ->capture_default_str();
  cmd->add_option("--data-dir", c.data_dir,
                  "IDX directory (default $SALGRAD_DATA_DIR)")
      ->capture_default_str();
  cmd->add_option("--synthetic-size", c.synthetic_size,
                  "sample count for --dataset synthetic")
      ->capture_default_str();
  cmd->add_option("--seed", c.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--threads", c.threads, "worker threads (0 = hardware)")
      ->capture_default_str();
  cmd->add_flag("--print-config", c.print_config,
                "print the resolved config line and exit");
}

// Fully-resolved config line; every run is reproducible from it.
int emit_config(const std::string& line, bool print_only) {
  std::cout << "config: " << line << "\n";
  return print_only ? 0 : -1;
}

int cmd_train(const CommonFlags& common, const std::string& mode_name,
              int epochs, std::int64_t batch_size, double lr, double lambda,
              double mask_fraction, std::int64_t train_subset,
              const std::string& out_path, const std::string& metrics_path,
              bool print_only) {
  std::ostringstream cfg;
  cfg << "train --dataset " << common.dataset << " --data-dir "
      << common.data_dir << " --mode " << mode_name << " --epochs " << epochs
      << " --batch-size " << batch_size << " --lr " << lr << " --lambda "
      << lambda << " --mask-fraction " << mask_fraction << " --train-subset "
      << train_subset << " --synthetic-size " << common.synthetic_size
      << " --seed " << common.seed << " --threads " << common.threads
      << " --out " << out_path << " --metrics " << metrics_path;
  if (emit_config(cfg.str(), print_only) == 0) return 0;

  TrainConfig config;
  config.mode =
      mode_name == "saliency" ? TrainMode::kSaliency : TrainMode::kRegular;
  config.epochs = epochs;
  config.batch_size = batch_size;
  config.lr = lr;
  config.lambda = lambda;
  config.mask_fraction = mask_fraction;
  config.seed = common.seed;
  config.validate();

  Dataset data = load_split(common.dataset, common.data_dir, "train",
                            common.synthetic_size, common.seed);
  if (train_subset > 0 && train_subset < data.size())
    data = subset(data, train_subset, mix_seed(common.seed, 0x5b5e7ULL));

  Model model = Model::build_mnist_cnn(common.seed);
  const auto metrics = train(model, data, config);

  save_checkpoint(model, out_path);
  std::ofstream mf(metrics_path, std::ios::trunc);
  if (!mf) throw IoError("train: cannot write metrics to " + metrics_path);
  mf << metrics_csv(metrics);

  std::printf("trained %s for %d epochs on %lld samples; final loss %.6f, "
              "train acc %.4f\n",
              mode_name.c_str(), epochs, static_cast<long long>(data.size()),
              metrics.back().mean_loss, metrics.back().train_accuracy);
  std::printf("checkpoint: %s\nmetrics: %s\n", out_path.c_str(),
              metrics_path.c_str());
  return 0;
}

int cmd_attack(const CommonFlags& common, const std::string& ckpt,
               const std::string& attack, double eps,
               std::optional<double> alpha, std::optional<int> steps,
               double mu, std::int64_t samples, const std::string& dump_dir,
               bool print_only) {
  const auto kind = parse_attack(attack);
  if (!kind)
    throw CLI::ValidationError("--attack",
                               "unknown attack '" + attack +
                                   "' (valid: fgsm, bim, pgd, mim)");
  AttackSpec spec = default_spec(*kind, eps, common.seed);
  if (alpha) spec.alpha = *alpha;
  if (steps) spec.steps = *steps;
  spec.mu = mu;

  std::ostringstream cfg;
  cfg << "attack --ckpt " << ckpt << " --attack " << attack << " --eps " << eps
      << " --alpha " << spec.alpha << " --steps " << spec.steps << " --mu "
      << spec.mu << " --samples " << samples << " --dataset " << common.dataset
      << " --data-dir " << common.data_dir << " --synthetic-size "
      << common.synthetic_size << " --seed " << common.seed << " --threads "
      << common.threads;
  if (!dump_dir.empty()) cfg << " --dump-dir " << dump_dir;
  if (emit_config(cfg.str(), print_only) == 0) return 0;

  const Model model = load_checkpoint(ckpt);
  Dataset data = load_split(common.dataset, common.data_dir, "test",
                            common.synthetic_size, common.seed);
  if (samples > 0 && samples < data.size())
    data = subset(data, samples, mix_seed(common.seed, 0xe7a1ULL));

  const AdversarialBatch adv =
      run_attack_chunked(model, data.images, data.labels, spec);
  const std::vector<int> pred = predict(model, adv.adversarial);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == data.labels[i]) ++correct;
  const double acc =
      static_cast<double>(correct) / static_cast<double>(data.size());

  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    const std::int64_t h = adv.adversarial.dim(2), w = adv.adversarial.dim(3);
    char eps_s[32];
    std::snprintf(eps_s, sizeof(eps_s), "%g", eps);
    for (std::int64_t i = 0; i < adv.adversarial.dim(0); ++i) {
      std::ostringstream name;
      name << "adv_" << attack << "_" << eps_s << "_" << i << ".pgm";
      write_pgm((fs::path(dump_dir) / name.str()).string(),
                adv.adversarial.ptr() + i * h * w, h, w);
    }
    std::printf("dumped %lld PGM images to %s\n",
                static_cast<long long>(adv.adversarial.dim(0)),
                dump_dir.c_str());
  }

  std::printf("%s,%s,%g,%.6f\n", ckpt_label(ckpt).c_str(), attack.c_str(),
              eps, acc);
  return 0;
}

int cmd_sweep(const CommonFlags& common, const std::string& ckpt,
              std::string label, const std::string& ckpt_baseline,
              std::string label_baseline, const std::string& attacks_flag,
              const std::string& grid_spec, std::int64_t samples,
              int pgd_steps, int bim_steps, const std::string& out_path,
              bool print_only) {
  std::ostringstream cfg;
  cfg << "sweep --ckpt " << ckpt;
  if (!ckpt_baseline.empty()) cfg << " --ckpt-baseline " << ckpt_baseline;
  cfg << " --attacks " << attacks_flag << " --eps-grid " << grid_spec
      << " --samples " << samples << " --pgd-steps " << pgd_steps
      << " --bim-steps " << bim_steps << " --dataset " << common.dataset
      << " --data-dir " << common.data_dir << " --synthetic-size "
      << common.synthetic_size << " --seed " << common.seed << " --threads "
      << common.threads << " --out " << out_path;
  if (emit_config(cfg.str(), print_only) == 0) return 0;

  std::vector<AttackKind> kinds;
  std::stringstream ss(attacks_flag);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto kind = parse_attack(item);
    if (!kind)
      throw CLI::ValidationError("--attacks",
                                 "unknown attack '" + item +
                                     "' (valid: fgsm, bim, pgd, mim)");
    kinds.push_back(*kind);
  }
  if (kinds.empty()) throw CLI::ValidationError("--attacks", "empty list");

  SweepOptions opt;
  opt.grid = parse_eps_grid(grid_spec);
  opt.max_samples = samples;
  opt.seed = common.seed;
  opt.pgd_steps = pgd_steps;
  opt.bim_steps = bim_steps;

  const Dataset data = load_split(common.dataset, common.data_dir, "test",
                                  common.synthetic_size, common.seed);

  if (label.empty()) label = ckpt_label(ckpt);
  const Model model = load_checkpoint(ckpt);
  std::vector<RobustnessCurve> curves =
      robustness_sweep(model, data, kinds, opt, label);

  if (!ckpt_baseline.empty()) {
    if (label_baseline.empty()) label_baseline = ckpt_label(ckpt_baseline);
    const Model baseline = load_checkpoint(ckpt_baseline);
    const auto more = robustness_sweep(baseline, data, kinds, opt,
                                       label_baseline);
    curves.insert(curves.end(), more.begin(), more.end());
    std::cout << comparison_summary(curves, label, label_baseline);
  }

  write_csv(curves, out_path);
  std::printf("sweep: %zu curves x %zu eps points over %lld samples -> %s\n",
              curves.size(), opt.grid.size(),
              static_cast<long long>(std::min<std::int64_t>(samples,
                                                            data.size())),
              out_path.c_str());
  return 0;
}

int cmd_report(const std::string& in_path, const std::string& out_path,
               bool print_only) {
  std::ostringstream cfg;
  cfg << "report --in " << in_path << " --out " << out_path;
  if (emit_config(cfg.str(), print_only) == 0) return 0;

  const auto curves = read_csv(in_path);
  render_svg(curves, out_path);
  std::printf("report: %zu curves -> %s\n", curves.size(), out_path.c_str());
  return 0;
}

int cmd_selfcheck(int points, bool print_only) {
  std::ostringstream cfg;
  cfg << "selfcheck --points " << points;
  if (emit_config(cfg.str(), print_only) == 0) return 0;

  const SelfCheckReport report = run_selfcheck(points);
  for (const auto& item : report.items)
    std::printf("%-36s %s  (%s)\n", item.name.c_str(),
                item.passed ? "PASS" : "FAIL", item.detail.c_str());
  if (!report.all_passed()) {
    std::printf("selfcheck: FAILED\n");
    return kExitInvariant;
  }
  std::printf("selfcheck: all %zu checks passed\n", report.items.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saliency-guided training and adversarial robustness lab"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a classifier");
  CommonFlags train_common;
  std::string mode = "regular";
  int epochs = 100;
  std::int64_t batch_size = 256;
  double lr = 0.1, lambda = 1.0, mask_fraction = 0.5;
  std::int64_t train_subset = 0;
  std::string train_out = "model.ckpt", metrics_path = "metrics.csv";
  add_common(train_cmd, train_common);
  train_cmd->add_option("--mode", mode, "regular or saliency")
      ->check(CLI::IsMember({"regular", "saliency"}))
      ->capture_default_str();
  train_cmd->add_option("--epochs", epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", batch_size)->capture_default_str();
  train_cmd->add_option("--lr", lr, "Adadelta learning rate")
      ->capture_default_str();
  auto* lambda_opt =
      train_cmd->add_option("--lambda", lambda, "KL weight (saliency mode)")
          ->capture_default_str();
  auto* mask_opt =
      train_cmd
          ->add_option("--mask-fraction", mask_fraction,
                       "share of lowest-|gradient| pixels masked")
          ->capture_default_str();
  train_cmd->add_option("--train-subset", train_subset,
                        "train on a random subset of this size (0 = all)")
      ->capture_default_str();
  train_cmd->add_option("--out", train_out, "checkpoint path")
      ->capture_default_str();
  train_cmd->add_option("--metrics", metrics_path, "per-epoch CSV path")
      ->capture_default_str();

  // attack
  auto* attack_cmd =
      app.add_subcommand("attack", "evaluate one attack at one epsilon");
  CommonFlags attack_common;
  std::string ckpt, attack_name_flag = "fgsm", dump_dir;
  double eps = 0.3, mu = 1.0;
  std::optional<double> alpha;
  std::optional<int> steps;
  std::int64_t attack_samples = 1000;
  add_common(attack_cmd, attack_common);
  attack_cmd->add_option("--ckpt", ckpt, "checkpoint to attack")->required();
  attack_cmd->add_option("--attack", attack_name_flag, "fgsm|bim|pgd|mim")
      ->capture_default_str();
  attack_cmd->add_option("--eps", eps, "L-inf budget")->capture_default_str();
  attack_cmd->add_option("--alpha", alpha, "per-step size (default per kind)");
  attack_cmd->add_option("--steps", steps, "iterations (default per kind)");
  attack_cmd->add_option("--mu", mu, "momentum decay for mim")
      ->capture_default_str();
  attack_cmd->add_option("--samples", attack_samples, "evaluation subset size")
      ->capture_default_str();
  attack_cmd->add_option("--dump-dir", dump_dir,
                         "write adversarial images as PGM files here");

  // sweep
  auto* sweep_cmd =
      app.add_subcommand("sweep", "accuracy-vs-epsilon curves as CSV");
  CommonFlags sweep_common;
  std::string sweep_ckpt, sweep_label, sweep_ckpt_baseline,
      sweep_label_baseline;
  std::string attacks_flag = "fgsm,bim,pgd,mim", grid_spec = "0:0.3:0.05";
  std::int64_t sweep_samples = 1000;
  int pgd_steps = 0, bim_steps = 0;
  std::string sweep_out = "curves.csv";
  add_common(sweep_cmd, sweep_common);
  sweep_cmd->add_option("--ckpt", sweep_ckpt, "checkpoint")->required();
  sweep_cmd->add_option("--label", sweep_label,
                        "curve label (default: checkpoint stem)");
  sweep_cmd->add_option("--ckpt-baseline", sweep_ckpt_baseline,
                        "second checkpoint for a paired comparison");
  sweep_cmd->add_option("--label-baseline", sweep_label_baseline,
                        "label for the baseline curves");
  sweep_cmd->add_option("--attacks", attacks_flag, "comma list")
      ->capture_default_str();
  sweep_cmd->add_option("--eps-grid", grid_spec, "start:end:step")
      ->capture_default_str();
  sweep_cmd->add_option("--samples", sweep_samples)->capture_default_str();
  sweep_cmd->add_option("--pgd-steps", pgd_steps, "override PGD step count");
  sweep_cmd->add_option("--bim-steps", bim_steps,
                        "override BIM/MIM step count");
  sweep_cmd->add_option("--out", sweep_out, "curves CSV path")
      ->capture_default_str();

  // report
  auto* report_cmd = app.add_subcommand("report", "render curves CSV as SVG");
  std::string report_in = "curves.csv", report_out = "curves.svg";
  bool report_print_config = false;
  report_cmd->add_option("--in", report_in)->capture_default_str();
  report_cmd->add_option("--out", report_out)->capture_default_str();
  report_cmd->add_flag("--print-config", report_print_config,
                       "print the resolved config line and exit");

  // selfcheck
  auto* selfcheck_cmd = app.add_subcommand(
      "selfcheck", "gradient, reduction-identity and roundtrip checks");
  int selfcheck_points = 10;
  bool selfcheck_print_config = false;
  selfcheck_cmd
      ->add_option("--points", selfcheck_points,
                   "random points per gradient check")
      ->capture_default_str();
  selfcheck_cmd->add_flag("--print-config", selfcheck_print_config,
                          "print the resolved config line and exit");

  try {
    app.parse(argc, argv);

    if (train_cmd->parsed()) {
      if (mode == "regular" && lambda_opt->count() > 0)
        throw CLI::ValidationError("--lambda",
                                   "only valid with --mode saliency");
      if (mode == "regular" && mask_opt->count() > 0)
        throw CLI::ValidationError("--mask-fraction",
                                   "only valid with --mode saliency");
      set_num_threads(train_common.threads);
      return cmd_train(train_common, mode, epochs, batch_size, lr, lambda,
                       mask_fraction, train_subset, train_out, metrics_path,
                       train_common.print_config);
    }
    if (attack_cmd->parsed()) {
      set_num_threads(attack_common.threads);
      return cmd_attack(attack_common, ckpt, attack_name_flag, eps, alpha,
                        steps, mu, attack_samples, dump_dir,
                        attack_common.print_config);
    }
    if (sweep_cmd->parsed()) {
      set_num_threads(sweep_common.threads);
      return cmd_sweep(sweep_common, sweep_ckpt, sweep_label,
                       sweep_ckpt_baseline, sweep_label_baseline, attacks_flag,
                       grid_spec, sweep_samples, pgd_steps, bim_steps,
                       sweep_out, sweep_common.print_config);
    }
    if (report_cmd->parsed())
      return cmd_report(report_in, report_out, report_print_config);
    if (selfcheck_cmd->parsed())
      return cmd_selfcheck(selfcheck_points, selfcheck_print_config);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
