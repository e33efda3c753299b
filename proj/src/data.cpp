#include "salgrad/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "salgrad/rng.hpp"

namespace salgrad {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("idx: cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

std::uint32_t be_u32(const std::string& buf, std::size_t pos,
                     const std::string& path) {
  if (pos + 4 > buf.size())
    throw IoError("idx " + path + ": truncated header at offset " +
                  std::to_string(pos));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v = (v << 8) | static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)]);
  return v;
}

void put_be_u32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  const std::string ibuf = read_file(images_path);
  const std::string lbuf = read_file(labels_path);

  const std::uint32_t imagic = be_u32(ibuf, 0, images_path);
  if (imagic != kImagesMagic)
    throw IoError("idx " + images_path + ": bad images magic " +
                  std::to_string(imagic) + " (expected 2051)");
  const std::uint32_t lmagic = be_u32(lbuf, 0, labels_path);
  if (lmagic != kLabelsMagic)
    throw IoError("idx " + labels_path + ": bad labels magic " +
                  std::to_string(lmagic) + " (expected 2049)");

  const std::int64_t n = be_u32(ibuf, 4, images_path);
  const std::int64_t h = be_u32(ibuf, 8, images_path);
  const std::int64_t w = be_u32(ibuf, 12, images_path);
  const std::int64_t ln = be_u32(lbuf, 4, labels_path);
  if (n != ln)
    throw IoError("idx: image count " + std::to_string(n) +
                  " != label count " + std::to_string(ln));
  if (n <= 0 || h <= 0 || w <= 0)
    throw IoError("idx " + images_path + ": empty dataset");

  const std::size_t ineed = 16 + static_cast<std::size_t>(n * h * w);
  if (ibuf.size() < ineed)
    throw IoError("idx " + images_path + ": truncated payload (" +
                  std::to_string(ibuf.size()) + " bytes, need " +
                  std::to_string(ineed) + ")");
  const std::size_t lneed = 8 + static_cast<std::size_t>(n);
  if (lbuf.size() < lneed)
    throw IoError("idx " + labels_path + ": truncated payload (" +
                  std::to_string(lbuf.size()) + " bytes, need " +
                  std::to_string(lneed) + ")");

  Dataset ds;
  ds.name = "mnist";
  ds.split = "";
  ds.images = Tensor::zeros({n, 1, h, w});
  for (std::int64_t i = 0; i < n * h * w; ++i)
    ds.images[i] =
        static_cast<float>(static_cast<unsigned char>(
            ibuf[16 + static_cast<std::size_t>(i)])) /
        255.0f;
  ds.labels.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = static_cast<unsigned char>(lbuf[8 + static_cast<std::size_t>(i)]);
    if (y >= ds.num_classes)
      throw IoError("idx " + labels_path + ": label " + std::to_string(y) +
                    " at sample " + std::to_string(i) + " out of range");
    ds.labels.push_back(y);
  }
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  const std::int64_t n = ds.size(), h = ds.images.dim(2), w = ds.images.dim(3);
  std::string ibuf;
  put_be_u32(ibuf, kImagesMagic);
  put_be_u32(ibuf, static_cast<std::uint32_t>(n));
  put_be_u32(ibuf, static_cast<std::uint32_t>(h));
  put_be_u32(ibuf, static_cast<std::uint32_t>(w));
  for (std::int64_t i = 0; i < n * h * w; ++i) {
    const float v = std::min(1.0f, std::max(0.0f, ds.images[i]));
    ibuf.push_back(static_cast<char>(
        static_cast<unsigned char>(std::lround(v * 255.0f))));
  }
  std::string lbuf;
  put_be_u32(lbuf, kLabelsMagic);
  put_be_u32(lbuf, static_cast<std::uint32_t>(n));
  for (int y : ds.labels) lbuf.push_back(static_cast<char>(y));

  std::ofstream fi(images_path, std::ios::binary | std::ios::trunc);
  if (!fi || !fi.write(ibuf.data(), static_cast<std::streamsize>(ibuf.size())))
    throw IoError("idx: cannot write " + images_path);
  std::ofstream fl(labels_path, std::ios::binary | std::ios::trunc);
  if (!fl || !fl.write(lbuf.data(), static_cast<std::streamsize>(lbuf.size())))
    throw IoError("idx: cannot write " + labels_path);
}

Dataset synthetic_two_class(std::int64_t n, std::uint64_t seed) {
  if (n < 2) throw ParameterError("synthetic_two_class: need n >= 2");
  constexpr std::int64_t kSide = 28;
  Dataset ds;
  ds.name = "synthetic";
  ds.split = "train";
  ds.images = Tensor::zeros({n, 1, kSide, kSide});
  ds.labels.reserve(static_cast<std::size_t>(n));
  Rng rng(seed);
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.below(2));
    ds.labels.push_back(y);
    float* img = ds.images.ptr() + i * kSide * kSide;
    for (std::int64_t p = 0; p < kSide * kSide; ++p)
      img[p] = rng.uniform_float(0.0f, 0.2f);
    const std::int64_t row0 = y == 0 ? 4 : 16;
    for (std::int64_t r = row0; r < row0 + 8; ++r)
      for (std::int64_t c = 6; c < 22; ++c)
        img[r * kSide + c] = rng.uniform_float(0.7f, 1.0f);
  }
  return ds;
}

Dataset subset(const Dataset& ds, std::int64_t n, std::uint64_t seed) {
  if (n > ds.size())
    throw ParameterError("subset: asked for " + std::to_string(n) +
                         " of " + std::to_string(ds.size()) + " samples");
  std::vector<std::int64_t> perm(static_cast<std::size_t>(ds.size()));
  for (std::size_t i = 0; i < perm.size(); ++i)
    perm[i] = static_cast<std::int64_t>(i);
  Rng rng(seed);
  for (std::int64_t i = ds.size() - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.below(i + 1))]);
  perm.resize(static_cast<std::size_t>(n));

  const Batch b = gather(ds, perm);
  Dataset out;
  out.images = b.images;
  out.labels = b.labels;
  out.name = ds.name;
  out.split = ds.split;
  out.num_classes = ds.num_classes;
  return out;
}

std::vector<std::vector<std::int64_t>> batch_indices(
    std::int64_t n, std::int64_t batch_size, std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw ParameterError("batch_indices: batch_size >= 1");
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < perm.size(); ++i)
    perm[i] = static_cast<std::int64_t>(i);
  Rng rng(shuffle_seed);
  for (std::int64_t i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.below(i + 1))]);
  std::vector<std::vector<std::int64_t>> out;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t stop = std::min(n, start + batch_size);
    out.emplace_back(perm.begin() + start, perm.begin() + stop);
  }
  return out;
}

Batch gather(const Dataset& ds, std::span<const std::int64_t> indices) {
  const std::int64_t px = ds.images.dim(1) * ds.images.dim(2) * ds.images.dim(3);
  Batch b;
  b.images = Tensor::zeros({static_cast<std::int64_t>(indices.size()),
                            ds.images.dim(1), ds.images.dim(2),
                            ds.images.dim(3)});
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::int64_t src = indices[i];
    if (src < 0 || src >= ds.size())
      throw IndexError("gather: index " + std::to_string(src) +
                       " out of range");
    std::copy_n(ds.images.ptr() + src * px, px,
                b.images.ptr() + static_cast<std::int64_t>(i) * px);
    b.labels.push_back(ds.labels[static_cast<std::size_t>(src)]);
  }
  return b;
}

std::vector<Batch> batches(const Dataset& ds, std::int64_t batch_size,
                           std::uint64_t shuffle_seed) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(ds.size(), batch_size, shuffle_seed))
    out.push_back(gather(ds, idx));
  return out;
}

}  // namespace salgrad
