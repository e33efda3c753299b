#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "salgrad/tape.hpp"

namespace salgrad {

using DTensor = TensorT<double>;

// A named gradient check: an input generator (responsible for keeping clear
// of any non-differentiable points) and a stager that builds a scalar loss of
// that input on a 64-bit tape. The analytic gradient comes from tape
// backward; the oracle is central differences on the same staged function.
struct GradCheckCase {
  std::string name;
  std::function<DTensor(Rng&)> make_input;
  std::function<std::pair<TensorId, TensorId>(TapeT<double>&, const DTensor&)>
      stage;  // returns {loss id, input id}
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int points = 0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

// Worst coordinate-wise |analytic - central difference|, measured relative to
// the largest gradient magnitude seen (floored at 1), so near-zero components
// are compared on the gradient's own scale.
double relative_gradient_error(const DTensor& analytic, const DTensor& fd);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate.
DTensor central_differences(const std::function<double(const DTensor&)>& f,
                            const DTensor& x, double h);

// Worst relative disagreement between an analytic gradient and central
// differences of f at x. f must be deterministic (dropout in eval mode or a
// frozen mask).
inline double finite_difference_check(
    const std::function<double(const DTensor&)>& f, const DTensor& analytic,
    const DTensor& x, double h) {
  return relative_gradient_error(analytic, central_differences(f, x, h));
}

// Runs one case at `points` random inputs; returns the worst error seen.
GradCheckResult run_gradcheck_case(const GradCheckCase& c, int points, double h,
                                   std::uint64_t seed);

// One case per differentiable tape op (conv2d input & kernel, bias add, relu,
// max pool, linear x/w/b, dropout with a frozen mask, log softmax, cross
// entropy, KL both sides, reshape, elementwise ops).
std::vector<GradCheckCase> standard_gradcheck_cases();

}  // namespace salgrad
