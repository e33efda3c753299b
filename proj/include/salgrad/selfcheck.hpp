#pragma once

#include <string>
#include <vector>

#include "salgrad/gradcheck.hpp"
#include "salgrad/model.hpp"

namespace salgrad {

// Gradients of the full CNN cross-entropy loss, checked by central
// differences in 64-bit at n_coords coordinates sampled across the input and
// every parameter tensor. Returns the worst relative error.
double cnn_loss_fd_error(const Model& model, const Tensor& batch,
                         std::span<const int> labels, int n_coords, double h,
                         std::uint64_t seed);

struct SelfCheckItem {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfCheckReport {
  std::vector<SelfCheckItem> items;
  bool all_passed() const {
    for (const auto& i : items)
      if (!i.passed) return false;
    return true;
  }
};

// Gradient finite-difference suite, attack reduction identities, IDX and
// checkpoint roundtrips. gradcheck_points trades runtime for coverage.
SelfCheckReport run_selfcheck(int gradcheck_points = 10);

}  // namespace salgrad
