#include "salgrad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace salgrad {

std::vector<int> predict(const Classifier& c, const Tensor& images,
                         std::int64_t batch_size) {
  const std::int64_t n = images.dim(0);
  const std::int64_t px = images.numel() / n;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t stop = std::min(n, start + batch_size);
    Tensor batch = Tensor::zeros(
        {stop - start, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.ptr() + start * px, (stop - start) * px, batch.ptr());
    Tape tape;
    const TensorId logits = c.stage(tape, tape.leaf(batch), false, nullptr);
    const Tensor& lv = tape.value(logits);
    const std::int64_t classes = lv.dim(1);
    for (std::int64_t i = 0; i < stop - start; ++i) {
      const float* row = lv.ptr() + i * classes;
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < classes; ++j)
        if (row[j] > row[best]) best = j;
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

double accuracy(const Classifier& c, const Dataset& ds) {
  if (ds.size() == 0) throw ParameterError("accuracy: empty dataset");
  const std::vector<int> pred = predict(c, ds.images);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == ds.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

namespace {

double snap(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return std::strtod(buf, nullptr);
}

std::string format_eps(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::vector<double> eps_grid(double start, double end, double step) {
  if (step <= 0.0) throw ParameterError("eps grid: step must be > 0");
  if (end < start) throw ParameterError("eps grid: end < start");
  std::vector<double> grid;
  for (int i = 0;; ++i) {
    const double v = snap(start + i * step);
    if (v > end + 1e-12) break;
    grid.push_back(v);
  }
  return grid;
}

std::vector<double> parse_eps_grid(const std::string& spec) {
  double start = 0.0, end = 0.0, step = 0.0;
  char extra = 0;
  if (std::sscanf(spec.c_str(), "%lf:%lf:%lf%c", &start, &end, &step, &extra) != 3)
    throw ParameterError("eps grid: expected start:end:step, got '" + spec + "'");
  return eps_grid(start, end, step);
}

std::vector<RobustnessCurve> robustness_sweep(const Classifier& c,
                                              const Dataset& ds,
                                              std::span<const AttackKind> kinds,
                                              const SweepOptions& opt,
                                              const std::string& model_label) {
  if (opt.grid.empty() || opt.grid.front() != 0.0)
    throw ParameterError("sweep: eps grid must start at 0");
  for (std::size_t i = 1; i < opt.grid.size(); ++i)
    if (opt.grid[i] <= opt.grid[i - 1])
      throw ParameterError("sweep: eps grid must be strictly increasing");

  const Dataset eval_set =
      opt.max_samples < ds.size()
          ? subset(ds, opt.max_samples, mix_seed(opt.seed, 0x5eedULL))
          : ds;
  const std::int64_t n = eval_set.size();

  std::vector<RobustnessCurve> curves;
  for (const AttackKind kind : kinds) {
    RobustnessCurve curve;
    curve.model_label = model_label;
    curve.attack = attack_name(kind);
    for (const double eps : opt.grid) {
      AttackSpec spec = default_spec(kind, eps, 0);
      if (opt.alpha > 0.0) spec.alpha = opt.alpha;
      if (kind == AttackKind::kPgd && opt.pgd_steps > 0)
        spec.steps = opt.pgd_steps;
      if ((kind == AttackKind::kBim || kind == AttackKind::kMim) &&
          opt.bim_steps > 0)
        spec.steps = opt.bim_steps;
      if (kind == AttackKind::kMim && opt.mu >= 0.0) spec.mu = opt.mu;
      // Cell RNG depends only on (seed, attack, eps): execution order and
      // parallelism cannot change results.
      std::uint64_t eps_bits;
      std::memcpy(&eps_bits, &eps, sizeof(eps));
      spec.seed = mix_seed(mix_seed(opt.seed, static_cast<std::uint64_t>(kind)),
                           eps_bits);

      const AdversarialBatch adv =
          run_attack_chunked(c, eval_set.images, eval_set.labels, spec);

      const float tol = static_cast<float>(eps) + 1e-6f;
      for (float d : adv.perturbation_norm)
        if (d > tol)
          throw InvariantError("sweep: containment violated for " +
                               curve.attack + " at eps " + format_eps(eps));
      for (std::int64_t i = 0; i < adv.adversarial.numel(); ++i)
        if (adv.adversarial[i] < 0.0f || adv.adversarial[i] > 1.0f)
          throw InvariantError("sweep: adversarial pixel outside [0,1] for " +
                               curve.attack);
      if (eps == 0.0 && !bitwise_equal(adv.adversarial, eval_set.images))
        throw InvariantError(
            "sweep: eps=0 attack did not return the inputs bitwise (" +
            curve.attack + ")");

      const std::vector<int> pred = predict(c, adv.adversarial);
      std::int64_t correct = 0;
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == eval_set.labels[i]) ++correct;

      CurvePoint pt;
      pt.epsilon = eps;
      pt.n_samples = n;
      pt.n_correct = correct;
      pt.accuracy = static_cast<double>(correct) / static_cast<double>(n);
      curve.points.push_back(pt);
    }
    // soft check only: small non-monotonic jitter is legitimate
    for (std::size_t i = 1; i < curve.points.size(); ++i)
      if (curve.points[i].accuracy > curve.points[i - 1].accuracy + 0.02)
        std::cerr << "note: " << model_label << "/" << curve.attack
                  << " accuracy rises " << curve.points[i - 1].accuracy
                  << " -> " << curve.points[i].accuracy << " at eps "
                  << format_eps(curve.points[i].epsilon)
                  << " (beyond the 2-point slack)\n";
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::string curves_csv(std::span<const RobustnessCurve> curves) {
  std::string out = "model,attack,epsilon,n_samples,n_correct,accuracy\n";
  char line[256];
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      std::snprintf(line, sizeof(line), "%s,%s,%s,%lld,%lld,%.6f\n",
                    c.model_label.c_str(), c.attack.c_str(),
                    format_eps(p.epsilon).c_str(),
                    static_cast<long long>(p.n_samples),
                    static_cast<long long>(p.n_correct), p.accuracy);
      out += line;
    }
  return out;
}

void write_csv(std::span<const RobustnessCurve> curves,
               const std::string& path) {
  if (curves.empty()) throw ParameterError("write_csv: no curves");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_csv: cannot open " + path);
  f << curves_csv(curves);
  if (!f) throw IoError("write_csv: write failed for " + path);
}

std::vector<RobustnessCurve> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "model,attack,epsilon,n_samples,n_correct,accuracy")
    throw IoError("curves csv: bad header");
  std::vector<RobustnessCurve> curves;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string model, attack, field;
    CurvePoint pt;
    try {
      if (!std::getline(row, model, ',') || !std::getline(row, attack, ','))
        throw IoError("short row");
      if (!std::getline(row, field, ',')) throw IoError("missing epsilon");
      pt.epsilon = std::stod(field);
      if (!std::getline(row, field, ',')) throw IoError("missing n_samples");
      pt.n_samples = std::stoll(field);
      if (!std::getline(row, field, ',')) throw IoError("missing n_correct");
      pt.n_correct = std::stoll(field);
      if (!std::getline(row, field, ',')) throw IoError("missing accuracy");
    } catch (const std::exception&) {
      throw IoError("curves csv: malformed row " + std::to_string(lineno) +
                    ": '" + line + "'");
    }
    // accuracy is derived state; recompute so the roundtrip is exact
    const double written = std::strtod(field.c_str(), nullptr);
    pt.accuracy =
        static_cast<double>(pt.n_correct) / static_cast<double>(pt.n_samples);
    if (std::fabs(written - pt.accuracy) > 5e-7)
      throw IoError("curves csv: inconsistent accuracy at row " +
                    std::to_string(lineno));
    if (curves.empty() || curves.back().model_label != model ||
        curves.back().attack != attack) {
      RobustnessCurve c;
      c.model_label = model;
      c.attack = attack;
      curves.push_back(std::move(c));
    }
    curves.back().points.push_back(pt);
  }
  return curves;
}

std::vector<RobustnessCurve> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("curves csv: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_csv(text);
}

// ---------------------------------------------------------------------------
// SVG rendering

namespace {

constexpr int kPanelW = 320;
constexpr int kPanelH = 260;
constexpr int kMarginL = 48;
constexpr int kMarginR = 16;
constexpr int kMarginT = 36;
constexpr int kMarginB = 44;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

std::string curves_svg(std::span<const RobustnessCurve> curves) {
  if (curves.empty()) throw ParameterError("curves_svg: no curves");

  // group by attack, preserving first-seen order; collect model labels
  std::vector<std::string> attacks;
  std::vector<std::string> labels;
  for (const auto& c : curves) {
    if (std::find(attacks.begin(), attacks.end(), c.attack) == attacks.end())
      attacks.push_back(c.attack);
    if (std::find(labels.begin(), labels.end(), c.model_label) == labels.end())
      labels.push_back(c.model_label);
  }

  double eps_max = 0.0;
  for (const auto& c : curves)
    for (const auto& p : c.points) eps_max = std::max(eps_max, p.epsilon);
  if (eps_max == 0.0) eps_max = 1.0;

  const int width = kMarginL + static_cast<int>(attacks.size()) * kPanelW +
                    kMarginR;
  const int height = kMarginT + kPanelH + kMarginB;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "  <rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";

  for (std::size_t a = 0; a < attacks.size(); ++a) {
    const double x0 = kMarginL + static_cast<double>(a) * kPanelW;
    const double y0 = kMarginT;
    const double plot_w = kPanelW - 40;
    const double plot_h = kPanelH - 10;
    auto map_x = [&](double eps) { return x0 + eps / eps_max * plot_w; };
    auto map_y = [&](double acc) { return y0 + (1.0 - acc) * plot_h; };

    svg << "  <g class=\"panel\" data-attack=\"" << attacks[a] << "\">\n";
    svg << "    <rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\""
        << fmt(plot_w) << "\" height=\"" << fmt(plot_h)
        << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    svg << "    <text x=\"" << fmt(x0 + plot_w / 2) << "\" y=\""
        << fmt(y0 - 10) << "\" text-anchor=\"middle\" font-family=\"sans-serif\""
        << " font-size=\"13\">" << attacks[a] << "</text>\n";

    // y ticks at 0, .25, .5, .75, 1
    for (int t = 0; t <= 4; ++t) {
      const double acc = t * 0.25;
      svg << "    <line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(map_y(acc))
          << "\" x2=\"" << fmt(x0 + plot_w) << "\" y2=\"" << fmt(map_y(acc))
          << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
      if (a == 0)
        svg << "    <text x=\"" << fmt(x0 - 6) << "\" y=\""
            << fmt(map_y(acc) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\""
            << " font-size=\"10\">" << fmt(acc) << "</text>\n";
    }
    // x ticks from the first curve of this attack
    for (const auto& c : curves) {
      if (c.attack != attacks[a]) continue;
      for (const auto& p : c.points)
        svg << "    <text x=\"" << fmt(map_x(p.epsilon)) << "\" y=\""
            << fmt(y0 + plot_h + 14)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\""
            << " font-size=\"10\">" << fmt(p.epsilon) << "</text>\n";
      break;
    }
    svg << "    <text x=\"" << fmt(x0 + plot_w / 2) << "\" y=\""
        << fmt(y0 + plot_h + 30)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\""
        << " font-size=\"11\">epsilon</text>\n";

    for (const auto& c : curves) {
      if (c.attack != attacks[a]) continue;
      const std::size_t li = static_cast<std::size_t>(
          std::find(labels.begin(), labels.end(), c.model_label) -
          labels.begin());
      svg << "    <polyline fill=\"none\" stroke=\""
          << kPalette[li % std::size(kPalette)] << "\" stroke-width=\"2\""
          << " data-model=\"" << c.model_label << "\" points=\"";
      for (const auto& p : c.points)
        svg << fmt(map_x(p.epsilon)) << "," << fmt(map_y(p.accuracy)) << " ";
      svg << "\"/>\n";
    }
    svg << "  </g>\n";
  }

  // legend
  for (std::size_t li = 0; li < labels.size(); ++li) {
    const double lx = kMarginL + 10 + static_cast<double>(li) * 140;
    const double ly = kMarginT + kPanelH + 28;
    svg << "  <line x1=\"" << fmt(lx) << "\" y1=\"" << fmt(ly) << "\" x2=\""
        << fmt(lx + 24) << "\" y2=\"" << fmt(ly) << "\" stroke=\""
        << kPalette[li % std::size(kPalette)] << "\" stroke-width=\"2\"/>\n";
    svg << "  <text x=\"" << fmt(lx + 30) << "\" y=\"" << fmt(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << labels[li]
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void render_svg(std::span<const RobustnessCurve> curves,
                const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("render_svg: cannot open " + path);
  f << curves_svg(curves);
  if (!f) throw IoError("render_svg: write failed for " + path);
}

std::string comparison_summary(std::span<const RobustnessCurve> curves,
                               const std::string& label_a,
                               const std::string& label_b) {
  auto find_curve = [&](const std::string& label,
                        const std::string& attack) -> const RobustnessCurve* {
    for (const auto& c : curves)
      if (c.model_label == label && c.attack == attack) return &c;
    return nullptr;
  };
  std::vector<std::string> attacks;
  for (const auto& c : curves)
    if (std::find(attacks.begin(), attacks.end(), c.attack) == attacks.end())
      attacks.push_back(c.attack);

  std::string out;
  char line[256];
  for (const auto& attack : attacks) {
    const RobustnessCurve* a = find_curve(label_a, attack);
    const RobustnessCurve* b = find_curve(label_b, attack);
    if (!a || !b) continue;
    for (std::size_t i = 0; i < a->points.size() && i < b->points.size(); ++i) {
      const double delta = a->points[i].accuracy - b->points[i].accuracy;
      std::snprintf(line, sizeof(line),
                    "delta(%s-%s) attack=%s eps=%s delta=%+.4f (%s %.4f, %s "
                    "%.4f)\n",
                    label_a.c_str(), label_b.c_str(), attack.c_str(),
                    format_eps(a->points[i].epsilon).c_str(), delta,
                    label_a.c_str(), a->points[i].accuracy, label_b.c_str(),
                    b->points[i].accuracy);
      out += line;
    }
  }
  return out;
}

}  // namespace salgrad
