#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "doctest.h"
#include "salgrad/data.hpp"
#include "salgrad/rng.hpp"

using namespace salgrad;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const char* stem) {
  static int counter = 0;
  return fs::temp_directory_path() /
         (std::string("salgrad_data_") + stem + "_" + std::to_string(counter++));
}

void put_be(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// hand-built IDX bytes, independent of save_idx
void write_idx_pair(const fs::path& images, const fs::path& labels,
                    std::uint32_t n, std::uint32_t side,
                    const std::string& pixels, const std::string& labs) {
  std::string ibuf;
  put_be(ibuf, 2051);
  put_be(ibuf, n);
  put_be(ibuf, side);
  put_be(ibuf, side);
  ibuf += pixels;
  std::ofstream fi(images, std::ios::binary);
  fi << ibuf;

  std::string lbuf;
  put_be(lbuf, 2049);
  put_be(lbuf, n);
  lbuf += labs;
  std::ofstream fl(labels, std::ios::binary);
  fl << lbuf;
}

}  // namespace

TEST_CASE("load_idx: parses big-endian headers and scales u8 to [0,1]") {
  const auto ip = temp_path("imgs"), lp = temp_path("labs");
  std::string pixels(2 * 4, '\0');
  pixels[0] = static_cast<char>(255);
  pixels[3] = static_cast<char>(128);
  write_idx_pair(ip, lp, 2, 2, pixels, std::string("\x03\x09", 2));

  const Dataset ds = load_idx(ip.string(), lp.string());
  CHECK(ds.size() == 2);
  CHECK(ds.images.shape == Shape{2, 1, 2, 2});
  CHECK(ds.images[0] == 1.0f);       // pixel 255
  CHECK(ds.images[1] == 0.0f);       // pixel 0
  CHECK(ds.images[3] == doctest::Approx(128.0 / 255.0));
  CHECK(ds.labels == std::vector<int>{3, 9});
  fs::remove(ip);
  fs::remove(lp);
}

TEST_CASE("load_idx: magic guards, count mismatch, truncation") {
  const auto ip = temp_path("imgs"), lp = temp_path("labs");
  write_idx_pair(ip, lp, 2, 2, std::string(8, '\0'), std::string(2, '\0'));

  SUBCASE("images file passed as labels") {
    try {
      load_idx(ip.string(), ip.string());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("bad labels magic") !=
            std::string::npos);
    }
  }
  SUBCASE("labels file passed as images") {
    try {
      load_idx(lp.string(), lp.string());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("bad images magic") !=
            std::string::npos);
    }
  }
  SUBCASE("count mismatch") {
    const auto lp3 = temp_path("labs3");
    std::string lbuf;
    put_be(lbuf, 2049);
    put_be(lbuf, 3);
    lbuf += std::string(3, '\0');
    std::ofstream(lp3, std::ios::binary) << lbuf;
    CHECK_THROWS_AS(load_idx(ip.string(), lp3.string()), IoError);
    fs::remove(lp3);
  }
  SUBCASE("truncated image payload") {
    const auto short_ip = temp_path("imgs_short");
    std::string ibuf;
    put_be(ibuf, 2051);
    put_be(ibuf, 2);
    put_be(ibuf, 2);
    put_be(ibuf, 2);
    ibuf += std::string(3, '\0');  // needs 8
    std::ofstream(short_ip, std::ios::binary) << ibuf;
    try {
      load_idx(short_ip.string(), lp.string());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
    fs::remove(short_ip);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_idx("/nonexistent.idx", lp.string()), IoError);
  }
  fs::remove(ip);
  fs::remove(lp);
}

TEST_CASE("idx roundtrip: u8-grid dataset reloads exactly") {
  Dataset ds = synthetic_two_class(12, 5);
  for (std::int64_t i = 0; i < ds.images.numel(); ++i)
    ds.images[i] =
        static_cast<float>(std::lround(ds.images[i] * 255.0f)) / 255.0f;
  const auto ip = temp_path("rt_imgs"), lp = temp_path("rt_labs");
  save_idx(ds, ip.string(), lp.string());
  const Dataset back = load_idx(ip.string(), lp.string());
  CHECK(bitwise_equal(back.images, ds.images));
  CHECK(back.labels == ds.labels);
  fs::remove(ip);
  fs::remove(lp);
}

TEST_CASE("synthetic_two_class: deterministic, bounded, linearly separable") {
  const Dataset a = synthetic_two_class(256, 11);
  const Dataset b = synthetic_two_class(256, 11);
  CHECK(bitwise_equal(a.images, b.images));
  CHECK(a.labels == b.labels);

  for (std::int64_t i = 0; i < a.images.numel(); ++i) {
    CHECK(a.images[i] >= 0.0f);
    CHECK(a.images[i] <= 1.0f);
  }

  // depth-1 rule on mean(top half) - mean(bottom half)
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const float* img = a.images.ptr() + i * 28 * 28;
    double top = 0, bottom = 0;
    for (int r = 0; r < 14; ++r)
      for (int c = 0; c < 28; ++c) top += img[r * 28 + c];
    for (int r = 14; r < 28; ++r)
      for (int c = 0; c < 28; ++c) bottom += img[r * 28 + c];
    const int pred = top > bottom ? 0 : 1;
    if (pred == a.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(a.size()) >= 0.99);

  CHECK_THROWS_AS(synthetic_two_class(1, 0), ParameterError);
}

TEST_CASE("subset: permutation preserves the label multiset") {
  const Dataset ds = synthetic_two_class(64, 3);
  const Dataset all = subset(ds, 64, 17);
  std::map<int, int> before, after;
  for (int y : ds.labels) ++before[y];
  for (int y : all.labels) ++after[y];
  CHECK(before == after);

  const Dataset half_a = subset(ds, 32, 17);
  const Dataset half_b = subset(ds, 32, 17);
  CHECK(bitwise_equal(half_a.images, half_b.images));

  CHECK_THROWS_AS(subset(ds, 65, 0), ParameterError);
}

TEST_CASE("batches: partial batch retained, deterministic order") {
  const Dataset ds = synthetic_two_class(10, 9);
  const auto b = batches(ds, 4, 77);
  REQUIRE(b.size() == 3);
  CHECK(b[0].images.dim(0) == 4);
  CHECK(b[1].images.dim(0) == 4);
  CHECK(b[2].images.dim(0) == 2);

  const auto idx1 = batch_indices(10, 4, 77);
  const auto idx2 = batch_indices(10, 4, 77);
  CHECK(idx1 == idx2);
  const auto idx3 = batch_indices(10, 4, 78);
  CHECK(idx1 != idx3);

  // every index appears exactly once
  std::vector<int> seen(10, 0);
  for (const auto& chunk : idx1)
    for (auto i : chunk) ++seen[static_cast<std::size_t>(i)];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST_CASE("gather: matches the source rows bitwise") {
  const Dataset ds = synthetic_two_class(8, 21);
  const std::vector<std::int64_t> pick{5, 0, 7};
  const Batch b = gather(ds, pick);
  REQUIRE(b.images.dim(0) == 3);
  const std::int64_t px = 28 * 28;
  for (std::size_t i = 0; i < pick.size(); ++i) {
    CHECK(std::memcmp(b.images.ptr() + static_cast<std::int64_t>(i) * px,
                      ds.images.ptr() + pick[i] * px,
                      static_cast<std::size_t>(px) * sizeof(float)) == 0);
    CHECK(b.labels[i] == ds.labels[static_cast<std::size_t>(pick[i])]);
  }
  CHECK_THROWS_AS(gather(ds, std::vector<std::int64_t>{9}), IndexError);
}
