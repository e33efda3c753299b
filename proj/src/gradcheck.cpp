#include "salgrad/gradcheck.hpp"

#include <cmath>

namespace salgrad {

double relative_gradient_error(const DTensor& analytic, const DTensor& fd) {
  if (!analytic.same_shape(fd))
    throw DimensionError("relative_gradient_error: " +
                         shape_str(analytic.shape) + " vs " +
                         shape_str(fd.shape));
  double scale = 1.0;
  for (std::int64_t i = 0; i < analytic.numel(); ++i)
    scale = std::max({scale, std::abs(analytic[i]), std::abs(fd[i])});
  double worst = 0.0;
  for (std::int64_t i = 0; i < analytic.numel(); ++i)
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / scale);
  return worst;
}

DTensor central_differences(const std::function<double(const DTensor&)>& f,
                            const DTensor& x, double h) {
  DTensor g = DTensor::zeros(x.shape);
  DTensor probe = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

GradCheckResult run_gradcheck_case(const GradCheckCase& c, int points, double h,
                                   std::uint64_t seed) {
  GradCheckResult r;
  r.name = c.name;
  r.points = points;
  Rng rng(mix_seed(seed, std::hash<std::string>{}(c.name)));
  for (int p = 0; p < points; ++p) {
    const DTensor x = c.make_input(rng);
    TapeT<double> tape;
    auto [loss_id, x_id] = c.stage(tape, x);
    const TensorId wrt[] = {x_id};
    const DTensor analytic = tape.backward(loss_id, wrt).at(x_id);
    auto f = [&](const DTensor& probe) {
      TapeT<double> t;
      auto [lid, unused] = c.stage(t, probe);
      (void)unused;
      return static_cast<double>(t.value(lid)[0]);
    };
    const DTensor fd = central_differences(f, x, h);
    r.max_rel_error = std::max(r.max_rel_error,
                               relative_gradient_error(analytic, fd));
  }
  return r;
}

namespace {

DTensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  DTensor t = DTensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, so relu kinks are never within h of a probe.
DTensor random_tensor_off_zero(Rng& rng, Shape shape, double margin) {
  DTensor t = DTensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double mag = margin + rng.uniform(0.0, 1.0);
    t[i] = rng.uniform01() < 0.5 ? -mag : mag;
  }
  return t;
}

// Pool inputs need a clear per-window leader or the max is not differentiable
// at the probe scale; resample until every 2x2 window has a margin.
DTensor random_pool_input(Rng& rng, Shape shape, double min_gap) {
  for (;;) {
    DTensor t = random_tensor(rng, shape, -1.0, 1.0);
    const std::int64_t N = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    bool ok = true;
    for (std::int64_t plane = 0; plane < N * C && ok; ++plane) {
      const double* p = t.ptr() + plane * H * W;
      for (std::int64_t py = 0; py + 2 <= H && ok; py += 2)
        for (std::int64_t px = 0; px + 2 <= W && ok; px += 2) {
          double best = -1e30, second = -1e30;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double v = p[(py + dy) * W + px + dx];
              if (v > best) {
                second = best;
                best = v;
              } else if (v > second) {
                second = v;
              }
            }
          ok = best - second > min_gap;
        }
    }
    if (ok) return t;
  }
}

// Scalarize an op output against a fixed random functional so the check
// exercises the full output gradient, not just its sum.
TensorId dot_with(TapeT<double>& tape, TensorId x, const DTensor& w) {
  return tape.sum(tape.mul(x, tape.leaf(w)));
}

DTensor fixed_weights(Shape shape, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xabcdefULL));
  return random_tensor(rng, std::move(shape), -1.0, 1.0);
}

}  // namespace

std::vector<GradCheckCase> standard_gradcheck_cases() {
  std::vector<GradCheckCase> cases;

  // conv2d, gradient w.r.t. the input
  {
    const Shape in_shape{1, 2, 6, 6};
    const DTensor kernel = fixed_weights({3, 2, 3, 3}, 11);
    const DTensor w = fixed_weights({1, 3, 4, 4}, 12);
    cases.push_back(
        {"conv2d_input",
         [=](Rng& rng) { return random_tensor(rng, in_shape, -1.0, 1.0); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           const TensorId out = t.conv2d(xid, t.leaf(kernel), 1);
           return std::make_pair(dot_with(t, out, w), xid);
         }});
  }
  // conv2d, gradient w.r.t. the kernel (stride 2 to cover the strided path)
  {
    const DTensor input = fixed_weights({2, 2, 7, 7}, 13);
    const DTensor w = fixed_weights({2, 3, 3, 3}, 14);
    cases.push_back(
        {"conv2d_kernel",
         [=](Rng& rng) { return random_tensor(rng, {3, 2, 3, 3}, -1.0, 1.0); },
         [=](TapeT<double>& t, const DTensor& k) {
           const TensorId kid = t.leaf(k);
           const TensorId out = t.conv2d(t.leaf(input), kid, 2);
           return std::make_pair(dot_with(t, out, w), kid);
         }});
  }
  // bias_add_channel
  {
    const DTensor input = fixed_weights({2, 3, 4, 4}, 15);
    const DTensor w = fixed_weights({2, 3, 4, 4}, 16);
    cases.push_back(
        {"bias_add_channel",
         [=](Rng& rng) { return random_tensor(rng, {3}, -1.0, 1.0); },
         [=](TapeT<double>& t, const DTensor& b) {
           const TensorId bid = t.leaf(b);
           const TensorId out = t.bias_add_channel(t.leaf(input), bid);
           return std::make_pair(dot_with(t, out, w), bid);
         }});
  }
  // relu (inputs kept away from the kink at 0)
  {
    const DTensor w = fixed_weights({2, 8}, 17);
    cases.push_back(
        {"relu",
         [=](Rng& rng) { return random_tensor_off_zero(rng, {2, 8}, 0.05); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           return std::make_pair(dot_with(t, t.relu(xid), w), xid);
         }});
  }
  // max_pool2d (windows kept away from ties)
  {
    const DTensor w = fixed_weights({1, 2, 3, 3}, 18);
    cases.push_back(
        {"max_pool2d",
         [=](Rng& rng) { return random_pool_input(rng, {1, 2, 6, 6}, 0.01); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           return std::make_pair(dot_with(t, t.max_pool2d(xid, 2), w), xid);
         }});
  }
  // linear w.r.t. each of x, weight, bias
  {
    const DTensor xf = fixed_weights({4, 5}, 19);
    const DTensor wf = fixed_weights({3, 5}, 20);
    const DTensor bf = fixed_weights({3}, 21);
    const DTensor w = fixed_weights({4, 3}, 22);
    cases.push_back(
        {"linear_x",
         [=](Rng& rng) { return random_tensor(rng, {4, 5}, -1.0, 1.0); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           const TensorId out = t.linear(xid, t.leaf(wf), t.leaf(bf));
           return std::make_pair(dot_with(t, out, w), xid);
         }});
    cases.push_back(
        {"linear_weight",
         [=](Rng& rng) { return random_tensor(rng, {3, 5}, -1.0, 1.0); },
         [=](TapeT<double>& t, const DTensor& wv) {
           const TensorId wid = t.leaf(wv);
           const TensorId out = t.linear(t.leaf(xf), wid, t.leaf(bf));
           return std::make_pair(dot_with(t, out, w), wid);
         }});
    cases.push_back(
        {"linear_bias",
         [=](Rng& rng) { return random_tensor(rng, {3}, -1.0, 1.0); },
         [=](TapeT<double>& t, const DTensor& b) {
           const TensorId bid = t.leaf(b);
           const TensorId out = t.linear(t.leaf(xf), t.leaf(wf), bid);
           return std::make_pair(dot_with(t, out, w), bid);
         }});
  }
  // dropout in train mode with a frozen mask: linear, so exactly checkable
  {
    const DTensor w = fixed_weights({3, 6}, 23);
    cases.push_back(
        {"dropout_train",
         [=](Rng& rng) { return random_tensor(rng, {3, 6}, -1.0, 1.0); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           Rng mask_rng(424242);  // same mask for every probe
           const TensorId out = t.dropout(xid, 0.5, true, &mask_rng);
           return std::make_pair(dot_with(t, out, w), xid);
         }});
  }
  // log_softmax
  {
    const DTensor w = fixed_weights({3, 7}, 24);
    cases.push_back(
        {"log_softmax",
         [=](Rng& rng) { return random_tensor(rng, {3, 7}, -3.0, 3.0); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           return std::make_pair(dot_with(t, t.log_softmax(xid, 1), w), xid);
         }});
  }
  // cross_entropy of log-softmaxed logits
  {
    const std::vector<int> labels{1, 0, 3, 2};
    cases.push_back(
        {"cross_entropy",
         [=](Rng& rng) { return random_tensor(rng, {4, 4}, -2.0, 2.0); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           const TensorId lp = t.log_softmax(xid, 1);
           return std::make_pair(t.cross_entropy(lp, labels), xid);
         }});
  }
  // kl_divergence w.r.t. both arguments, through log_softmax heads
  {
    const DTensor qfix = fixed_weights({3, 5}, 25);
    const DTensor pfix = fixed_weights({3, 5}, 26);
    cases.push_back(
        {"kl_divergence_p",
         [=](Rng& rng) { return random_tensor(rng, {3, 5}, -2.0, 2.0); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           const TensorId p = t.log_softmax(xid, 1);
           const TensorId q = t.log_softmax(t.leaf(qfix), 1);
           return std::make_pair(t.kl_divergence(p, q), xid);
         }});
    cases.push_back(
        {"kl_divergence_q",
         [=](Rng& rng) { return random_tensor(rng, {3, 5}, -2.0, 2.0); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           const TensorId p = t.log_softmax(t.leaf(pfix), 1);
           const TensorId q = t.log_softmax(xid, 1);
           return std::make_pair(t.kl_divergence(p, q), xid);
         }});
  }
  // reshape + elementwise chain: covers add, sub, mul, scale, add_scalar, sum
  {
    const DTensor a = fixed_weights({2, 6}, 27);
    cases.push_back(
        {"elementwise_chain",
         [=](Rng& rng) { return random_tensor(rng, {3, 4}, -1.0, 1.0); },
         [=](TapeT<double>& t, const DTensor& x) {
           const TensorId xid = t.leaf(x);
           const TensorId r = t.reshape(xid, {2, 6});
           const TensorId aid = t.leaf(a);
           const TensorId u = t.mul(t.add(r, aid), t.sub(r, aid));
           const TensorId v = t.add_scalar(t.scale(u, 0.5), 1.25);
           return std::make_pair(t.sum(t.mul(v, v)), xid);
         }});
  }
  return cases;
}

}  // namespace salgrad
