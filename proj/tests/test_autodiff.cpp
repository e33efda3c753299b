#include <cmath>
#include <limits>
#include <string>

#include "doctest.h"
#include "salgrad/gradcheck.hpp"
#include "salgrad/tape.hpp"
#include "test_util.hpp"

using namespace salgrad;

namespace {

// Independent quadruple-loop convolution, the oracle for the tape op.
DTensor naive_conv2d(const DTensor& in, const DTensor& ker, int stride) {
  const std::int64_t n = in.dim(0), ic = in.dim(1), h = in.dim(2),
                     w = in.dim(3);
  const std::int64_t oc = ker.dim(0), k = ker.dim(2);
  const std::int64_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  DTensor out = DTensor::zeros({n, oc, oh, ow});
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t o = 0; o < oc; ++o)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::int64_t c = 0; c < ic; ++c)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx)
                acc += in.at4(ni, c, oy * stride + ky, ox * stride + kx) *
                       ker.at4(o, c, ky, kx);
          out.at4(ni, o, oy, ox) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d: unit kernel is the identity") {
  Tape tape;
  const TensorId x = tape.leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  const TensorId k = tape.leaf(Tensor({1, 1, 1, 1}, {1}));
  const TensorId out = tape.conv2d(x, k, 1);
  CHECK(tape.value(out).shape == Shape{1, 1, 2, 2});
  CHECK(bitwise_equal(tape.value(out), tape.value(x)));
}

TEST_CASE("conv2d: all-ones 3x3 against all-ones 3x3 sums nine ones") {
  Tape tape;
  const TensorId x = tape.leaf(Tensor::full({1, 1, 3, 3}, 1.0f));
  const TensorId k = tape.leaf(Tensor::full({1, 1, 3, 3}, 1.0f));
  const TensorId out = tape.conv2d(x, k, 1);
  CHECK(tape.value(out).shape == Shape{1, 1, 1, 1});
  CHECK(tape.value(out)[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: random 5x5 matches the quadruple-loop oracle") {
  Rng rng(42);
  DTensor x = DTensor::zeros({1, 1, 5, 5});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);
  DTensor k = DTensor::zeros({2, 1, 3, 3});
  for (std::int64_t i = 0; i < k.numel(); ++i) k[i] = rng.uniform(-1, 1);

  for (int stride : {1, 2}) {
    TapeT<double> tape;
    const TensorId out = tape.conv2d(tape.leaf(x), tape.leaf(k), stride);
    const DTensor expect = naive_conv2d(x, k, stride);
    CHECK(max_abs_diff(tape.value(out), expect) < 1e-6);
  }
}

TEST_CASE("conv2d: shape mismatch reports both shapes") {
  Tape tape;
  const TensorId x = tape.leaf(Tensor::zeros({1, 1, 2, 2}));
  const TensorId k = tape.leaf(Tensor::zeros({1, 1, 3, 3}));
  try {
    tape.conv2d(x, k, 1);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x1x2x2]") != std::string::npos);
    CHECK(msg.find("[1x1x3x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(
      tape.conv2d(x, tape.leaf(Tensor::zeros({1, 2, 1, 1})), 1),
      DimensionError);  // channel mismatch
}

TEST_CASE("relu follows the definition") {
  Tape tape;
  const TensorId out = tape.relu(tape.leaf(Tensor({3}, {-1, 0, 2})));
  CHECK(tape.value(out).data == std::vector<float>{0, 0, 2});
}

TEST_CASE("max_pool2d picks window maxima and routes gradients to them") {
  Tape tape;
  const TensorId x = tape.leaf(
      Tensor({1, 1, 4, 4}, {1, 2, 8, 3,    //
                            4, 0, 1, 1,    //
                            9, 1, 0, 0,    //
                            1, 1, 0, 7}));
  const TensorId out = tape.max_pool2d(x, 2);
  CHECK(tape.value(out).shape == Shape{1, 1, 2, 2});
  CHECK(tape.value(out).data == std::vector<float>{4, 8, 9, 7});

  const TensorId loss = tape.sum(out);
  const TensorId wrt[] = {x};
  const Tensor gx = tape.backward(loss, wrt).at(x);
  CHECK(gx.data == std::vector<float>{0, 0, 1, 0,  //
                                      1, 0, 0, 0,  //
                                      1, 0, 0, 0,  //
                                      0, 0, 0, 1});
}

TEST_CASE("dropout: p=0 train and eval mode are the identity") {
  Rng rng(1);
  Tape tape;
  const TensorId x = tape.leaf(Tensor({4}, {0.5f, -1.0f, 2.0f, 0.0f}));

  const TensorId train0 = tape.dropout(x, 0.0, true, &rng);
  CHECK(bitwise_equal(tape.value(train0), tape.value(x)));

  const TensorId eval = tape.dropout(x, 0.5, false, nullptr);
  CHECK(eval == x);  // eval mode returns the input id untouched

  CHECK_THROWS_AS(tape.dropout(x, 1.0, true, &rng), ParameterError);
  CHECK_THROWS_AS(tape.dropout(x, 1.5, false, nullptr), ParameterError);
}

TEST_CASE("dropout: train mode zeroes or rescales by exactly 1/(1-p)") {
  Rng rng(7);
  Tape tape;
  const TensorId x = tape.leaf(Tensor::full({1000}, 1.0f));
  const TensorId out = tape.dropout(x, 0.25, true, &rng);
  std::int64_t kept = 0;
  for (std::int64_t i = 0; i < 1000; ++i) {
    const float v = tape.value(out)[i];
    CHECK((v == 0.0f || v == doctest::Approx(1.0f / 0.75f)));
    if (v != 0.0f) ++kept;
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
}

TEST_CASE("log_softmax: symmetry, shift robustness, direct formula") {
  TapeT<double> tape;
  const TensorId a = tape.log_softmax(tape.leaf(DTensor({1, 2}, {0, 0})), 1);
  CHECK(tape.value(a)[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(tape.value(a)[1] == doctest::Approx(std::log(0.5)).epsilon(1e-12));

  const TensorId b =
      tape.log_softmax(tape.leaf(DTensor({1, 2}, {1000, 1000})), 1);
  CHECK(tape.value(b).all_finite());
  CHECK(tape.value(b)[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));

  const DTensor z({1, 3}, {1, 2, 3});
  const TensorId c = tape.log_softmax(tape.leaf(z), 1);
  double lse = 0.0;
  for (int i = 0; i < 3; ++i) lse += std::exp(z[i]);
  lse = std::log(lse);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(tape.value(c)[i] - (z[i] - lse)) < 1e-9);
}

TEST_CASE("log_softmax: shift invariance property") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    DTensor z = DTensor::zeros({2, 6});
    for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = rng.uniform(-5, 5);
    const double shift = rng.uniform(-100, 100);
    DTensor zs = z;
    for (std::int64_t i = 0; i < z.numel(); ++i) zs[i] += shift;
    TapeT<double> tape;
    const TensorId a = tape.log_softmax(tape.leaf(z), 1);
    const TensorId b = tape.log_softmax(tape.leaf(zs), 1);
    CHECK(max_abs_diff(tape.value(a), tape.value(b)) < 1e-9);
  }
}

TEST_CASE("cross_entropy: perfect, uniform and hand-computed batches") {
  TapeT<double> tape;
  // near-one-hot prediction at the true class
  const TensorId sharp =
      tape.log_softmax(tape.leaf(DTensor({1, 3}, {30, 0, 0})), 1);
  const std::vector<int> y0{0};
  CHECK(tape.value(tape.cross_entropy(sharp, y0))[0] < 1e-9);

  // uniform 10-class prediction
  DTensor uniform = DTensor::full({1, 10}, std::log(0.1));
  const std::vector<int> y1{7};
  CHECK(tape.value(tape.cross_entropy(tape.leaf(uniform), y1))[0] ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // batch of two hand-set rows: mean of the per-sample values
  const DTensor rows({2, 2}, {std::log(0.8), std::log(0.2),  //
                              std::log(0.3), std::log(0.7)});
  const std::vector<int> y2{0, 1};
  const double expect = 0.5 * (-std::log(0.8) - std::log(0.7));
  CHECK(tape.value(tape.cross_entropy(tape.leaf(rows), y2))[0] ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("cross_entropy: out-of-range label identifies the sample") {
  Tape tape;
  const TensorId lp = tape.leaf(Tensor::full({3, 4}, -1.0f));
  const std::vector<int> labels{0, 7, 1};
  try {
    tape.cross_entropy(lp, labels);
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("label 7") != std::string::npos);
    CHECK(msg.find("sample 1") != std::string::npos);
  }
}

TEST_CASE("kl_divergence: zero at equality, direct value, asymmetric") {
  TapeT<double> tape;
  const DTensor p({1, 2}, {std::log(0.5), std::log(0.5)});
  const DTensor q({1, 2}, {std::log(0.25), std::log(0.75)});

  const TensorId same = tape.kl_divergence(tape.leaf(p), tape.leaf(p));
  CHECK(std::abs(tape.value(same)[0]) < 1e-12);

  // direct summation oracle: 0.5 ln 2 + 0.5 ln(2/3)
  const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  const TensorId pq = tape.kl_divergence(tape.leaf(p), tape.leaf(q));
  CHECK(tape.value(pq)[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(tape.value(pq)[0] == doctest::Approx(0.14384).epsilon(1e-4));

  const double swapped = 0.25 * std::log(0.5) + 0.75 * std::log(1.5);
  const TensorId qp = tape.kl_divergence(tape.leaf(q), tape.leaf(p));
  CHECK(tape.value(qp)[0] == doctest::Approx(swapped).epsilon(1e-9));
  CHECK(tape.value(qp)[0] != doctest::Approx(tape.value(pq)[0]).epsilon(1e-3));
}

TEST_CASE("kl_divergence property: zero on identical random distributions") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    DTensor z = DTensor::zeros({3, 5});
    for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = rng.uniform(-4, 4);
    TapeT<double> tape;
    const TensorId lp = tape.log_softmax(tape.leaf(z), 1);
    CHECK(std::abs(tape.value(tape.kl_divergence(lp, lp))[0]) < 1e-12);
  }
}

TEST_CASE("backward: sum gives all-ones gradient") {
  Tape tape;
  const TensorId x = tape.leaf(Tensor({2, 3}, {1, -2, 3, 4, -5, 6}));
  const TensorId loss = tape.sum(x);
  const TensorId wrt[] = {x};
  const Tensor g = tape.backward(loss, wrt).at(x);
  CHECK(g.data == std::vector<float>(6, 1.0f));
}

TEST_CASE("backward: (w.x - 1)^2 hand differentiation") {
  // w = [1,2], x = [1,1]: d/dx = 2(w.x - 1) w = [4, 8]
  TapeT<double> tape;
  const TensorId x = tape.leaf(DTensor({1, 2}, {1, 1}));
  const TensorId w = tape.leaf(DTensor({1, 2}, {1, 2}));
  const TensorId b = tape.leaf(DTensor({1}, {0}));
  const TensorId lin = tape.linear(x, w, b);
  const TensorId diff = tape.add_scalar(lin, -1.0);
  const TensorId loss = tape.sum(tape.mul(diff, diff));
  const TensorId wrt[] = {x};
  const DTensor g = tape.backward(loss, wrt).at(x);
  CHECK(g[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("backward: non-scalar loss is a contract error") {
  Tape tape;
  const TensorId x = tape.leaf(Tensor({2}, {1, 2}));
  const TensorId wrt[] = {x};
  CHECK_THROWS_AS(tape.backward(x, wrt), ContractError);
}

TEST_CASE("backward: tensors off the loss path get zero gradients") {
  Tape tape;
  const TensorId x = tape.leaf(Tensor({2}, {1, 2}));
  const TensorId unused = tape.leaf(Tensor({3}, {5, 6, 7}));
  const TensorId loss = tape.sum(x);
  const TensorId wrt[] = {x, unused};
  const GradMap grads = tape.backward(loss, wrt);
  CHECK(grads.at(unused).shape == Shape{3});
  CHECK(grads.at(unused).data == std::vector<float>{0, 0, 0});
}

TEST_CASE("backward is deterministic: identical inputs give identical bits") {
  auto run = [] {
    Rng rng(99);
    Tape tape;
    Tensor xv = Tensor::zeros({4, 8});
    Rng data_rng(5);
    for (std::int64_t i = 0; i < xv.numel(); ++i)
      xv[i] = data_rng.uniform_float(-1, 1);
    const TensorId x = tape.leaf(xv);
    const TensorId d = tape.dropout(x, 0.3, true, &rng);
    const TensorId lp = tape.log_softmax(d, 1);
    const std::vector<int> y{1, 0, 3, 2};
    const TensorId loss = tape.cross_entropy(lp, y);
    const TensorId wrt[] = {x};
    return tape.backward(loss, wrt).at(x);
  };
  CHECK(bitwise_equal(run(), run()));
}

TEST_CASE("finite differences: quadratic is exact to roundoff") {
  Rng rng(3);
  DTensor x = DTensor::zeros({6});
  for (std::int64_t i = 0; i < 6; ++i) x[i] = rng.uniform(-2, 2);

  auto f = [](const DTensor& v) {
    TapeT<double> t;
    const TensorId id = t.leaf(v);
    return static_cast<double>(t.value(t.sum(t.mul(id, id)))[0]);
  };
  TapeT<double> t;
  const TensorId id = t.leaf(x);
  const TensorId wrt[] = {id};
  const DTensor analytic = t.backward(t.sum(t.mul(id, id)), wrt).at(id);
  CHECK(finite_difference_check(f, analytic, x, 1e-4) < 1e-8);
}

TEST_CASE("finite differences: every composite op at h=1e-4") {
  for (const auto& c : standard_gradcheck_cases()) {
    const GradCheckResult r = run_gradcheck_case(c, 25, 1e-4, 1234);
    INFO(r.name, " max rel err ", r.max_rel_error);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradcheck machinery flags a corrupted gradient rule") {
  // same staging for values, deliberately wrong analytic gradient
  GradCheckCase broken;
  broken.name = "broken_scale";
  broken.make_input = [](Rng& rng) {
    DTensor t = DTensor::zeros({4});
    for (int i = 0; i < 4; ++i) t[i] = rng.uniform(-1, 1);
    return t;
  };
  broken.stage = [](TapeT<double>& t, const DTensor& x) {
    const TensorId xid = t.leaf(x);
    // value path: 2x summed; gradient checked against a scale of 3 instead
    const TensorId wrong = t.scale(t.leaf(x), 3.0);
    (void)wrong;
    return std::make_pair(t.sum(t.scale(xid, 2.0)), t.leaf(x));
  };
  const GradCheckResult r = run_gradcheck_case(broken, 3, 1e-4, 5);
  CHECK(r.name == "broken_scale");
  CHECK(r.max_rel_error > 0.1);  // analytic (zero) vs fd (2) disagree
}

TEST_CASE("tensor invariants: shape/data mismatch and non-finite outputs") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({0}, {}), DimensionError);

  Tape tape;
  CHECK_THROWS_AS(
      tape.leaf(Tensor({2}, {1.0f, std::numeric_limits<float>::infinity()})),
      InvariantError);
}
