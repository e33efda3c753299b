#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "salgrad/tensor.hpp"

namespace salgrad {

// Immutable after construction; images are N x 1 x H x W with pixels in
// [0,1] and labels below num_classes.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string name;
  std::string split;  // "train" | "test"
  int num_classes = 10;

  std::int64_t size() const {
    return images.shape.empty() ? 0 : images.dim(0);
  }
};

// Big-endian IDX files (magic 0x803 for images, 0x801 for labels); u8 pixels
// are scaled to [0,1] by /255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
// Inverse of load_idx for [0,1] images: pixels written as round(v*255).
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

// Two linearly separable classes of 28x28 images: a bright blob in the top
// half (class 0) or bottom half (class 1) over low background noise. Exists
// so every test runs without downloads.
Dataset synthetic_two_class(std::int64_t n, std::uint64_t seed);

// Deterministic shuffled selection of n samples.
Dataset subset(const Dataset& ds, std::int64_t n, std::uint64_t seed);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

// Shuffled index partition; the final partial batch is retained.
std::vector<std::vector<std::int64_t>> batch_indices(std::int64_t n,
                                                     std::int64_t batch_size,
                                                     std::uint64_t shuffle_seed);
Batch gather(const Dataset& ds, std::span<const std::int64_t> indices);
std::vector<Batch> batches(const Dataset& ds, std::int64_t batch_size,
                           std::uint64_t shuffle_seed);

}  // namespace salgrad
