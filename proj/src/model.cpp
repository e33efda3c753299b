#include "salgrad/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace salgrad {

const std::vector<ParamSpec>& Model::mnist_manifest() {
  static const std::vector<ParamSpec> manifest = {
      {"conv1.weight", {32, 1, 3, 3}, 9},
      {"conv1.bias", {32}, 9},
      {"conv2.weight", {64, 32, 3, 3}, 288},
      {"conv2.bias", {64}, 288},
      {"fc1.weight", {128, 9216}, 9216},
      {"fc1.bias", {128}, 9216},
      {"fc2.weight", {10, 128}, 128},
      {"fc2.bias", {10}, 128},
  };
  return manifest;
}

Model Model::build_mnist_cnn(std::uint64_t seed) {
  Model m;
  m.arch_id_ = kMnistArchId;
  m.seed_ = seed;
  Rng rng(seed);
  for (const auto& spec : mnist_manifest()) {
    Tensor t = Tensor::zeros(spec.shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t[i] = rng.uniform_float(static_cast<float>(-bound),
                               static_cast<float>(bound));
    m.params_.push_back(std::move(t));
  }
  return m;
}

std::int64_t Model::total_parameters() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p.numel();
  return total;
}

const std::string& Model::param_name(std::size_t i) const {
  return mnist_manifest()[i].name;
}

template <typename T>
TensorId stage_mnist_cnn(TapeT<T>& tape, std::span<const TensorId> params,
                         TensorId input, bool train, Rng* rng) {
  if (params.size() != 8)
    throw ContractError("stage_mnist_cnn: expected 8 parameter ids, got " +
                        std::to_string(params.size()));
  TensorId x = tape.conv2d(input, params[0], 1);
  x = tape.bias_add_channel(x, params[1]);
  x = tape.relu(x);
  x = tape.conv2d(x, params[2], 1);
  x = tape.bias_add_channel(x, params[3]);
  x = tape.relu(x);
  x = tape.max_pool2d(x, 2);
  x = tape.dropout(x, kMnistDropout1, train, rng);
  const auto& pooled = tape.value(x);
  x = tape.reshape(
      x, {pooled.dim(0), pooled.dim(1) * pooled.dim(2) * pooled.dim(3)});
  x = tape.linear(x, params[4], params[5]);
  x = tape.relu(x);
  x = tape.dropout(x, kMnistDropout2, train, rng);
  return tape.linear(x, params[6], params[7]);
}

template TensorId stage_mnist_cnn<float>(TapeT<float>&,
                                         std::span<const TensorId>, TensorId,
                                         bool, Rng*);
template TensorId stage_mnist_cnn<double>(TapeT<double>&,
                                          std::span<const TensorId>, TensorId,
                                          bool, Rng*);

std::vector<TensorId> Model::stage_params(Tape& tape) const {
  std::vector<TensorId> ids;
  ids.reserve(params_.size());
  for (const auto& p : params_) ids.push_back(tape.leaf(p));
  return ids;
}

TensorId Model::stage_forward(Tape& tape, std::span<const TensorId> params,
                              TensorId input, bool train, Rng* rng) const {
  return stage_mnist_cnn(tape, params, input, train, rng);
}

TensorId Model::stage(Tape& tape, TensorId input, bool train, Rng* rng) const {
  const auto params = stage_params(tape);
  return stage_forward(tape, params, input, train, rng);
}

Tensor Model::forward(const Tensor& batch, bool train, Rng* rng) const {
  Tape tape;
  const TensorId logits = stage(tape, tape.leaf(batch), train, rng);
  return tape.value(logits);
}

AdadeltaState AdadeltaState::init(const Model& m, double lr, double rho,
                                  double eps) {
  AdadeltaState s;
  s.lr = lr;
  s.rho = rho;
  s.eps = eps;
  for (std::size_t i = 0; i < m.param_count(); ++i) {
    s.square_avg.push_back(Tensor::zeros(m.param(i).shape));
    s.acc_delta.push_back(Tensor::zeros(m.param(i).shape));
  }
  return s;
}

void adadelta_step(Model& model, const GradMap& grads,
                   std::span<const TensorId> param_ids, AdadeltaState& state) {
  if (param_ids.size() != model.param_count())
    throw ContractError("adadelta_step: got " +
                        std::to_string(param_ids.size()) + " ids for " +
                        std::to_string(model.param_count()) + " parameters");
  const float rho = static_cast<float>(state.rho);
  const float eps = static_cast<float>(state.eps);
  const float lr = static_cast<float>(state.lr);
  for (std::size_t i = 0; i < model.param_count(); ++i) {
    if (!grads.contains(param_ids[i]))
      throw ContractError("adadelta_step: missing gradient for parameter " +
                          model.param_name(i));
    const Tensor& g = grads.at(param_ids[i]);
    Tensor& p = model.mutable_param(i);
    if (!g.same_shape(p))
      throw ContractError("adadelta_step: gradient shape " +
                          shape_str(g.shape) + " for parameter " +
                          model.param_name(i) + " " + shape_str(p.shape));
    Tensor& sq = state.square_avg[i];
    Tensor& acc = state.acc_delta[i];
    const std::int64_t total = p.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < total; ++j) {
      const float gj = g[j];
      sq[j] = rho * sq[j] + (1.0f - rho) * gj * gj;
      const float delta =
          std::sqrt(acc[j] + eps) / std::sqrt(sq[j] + eps) * gj;
      acc[j] = rho * acc[j] + (1.0f - rho) * delta * delta;
      p[j] -= lr * delta;
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint serialization (all integers little-endian)

namespace {

constexpr char kMagic[4] = {'S', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Cursor {
 public:
  Cursor(const std::string& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string str() {
    const std::uint32_t len = u32();
    need(len, "string payload");
    std::string s = buf_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size())
      throw IoError("checkpoint " + path_ + ": truncated reading " + what +
                    " at offset " + std::to_string(pos_));
  }
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_string(out, model.arch_id());
  put_u64(out, model.build_seed());
  put_u32(out, model.epochs_trained());
  put_u32(out, static_cast<std::uint32_t>(model.param_count()));
  for (std::size_t i = 0; i < model.param_count(); ++i) {
    const Tensor& t = model.param(i);
    put_string(out, model.param_name(i));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    static_assert(sizeof(float) == 4);
    for (std::int64_t j = 0; j < t.numel(); ++j) {
      std::uint32_t bits;
      std::memcpy(&bits, &t[j], 4);
      put_u32(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint " + path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint " + path + ": write failed");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint " + path + ": cannot open");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Cursor c(buf, path);

  char magic[4];
  c.raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint " + path + ": bad magic");
  const std::uint32_t version = c.u32();
  if (version != kVersion)
    throw IoError("checkpoint " + path + ": unknown version " +
                  std::to_string(version));
  const std::string arch = c.str();
  if (arch != kMnistArchId)
    throw IoError("checkpoint " + path + ": unknown arch '" + arch + "'");

  Model m;
  m.arch_id_ = arch;
  m.seed_ = c.u64();
  m.epochs_ = c.u32();
  const std::uint32_t count = c.u32();
  const auto& manifest = Model::mnist_manifest();
  if (count != manifest.size())
    throw IoError("checkpoint " + path + ": manifest mismatch, " +
                  std::to_string(count) + " tensors for arch expecting " +
                  std::to_string(manifest.size()));
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const std::string name = c.str();
    const std::uint32_t rank = c.u32();
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r)
      shape.push_back(static_cast<std::int64_t>(c.u32()));
    if (name != manifest[i].name || shape != manifest[i].shape)
      throw IoError("checkpoint " + path + ": manifest mismatch at tensor " +
                    std::to_string(i) + " ('" + name + "' " + shape_str(shape) +
                    ", expected '" + manifest[i].name + "' " +
                    shape_str(manifest[i].shape) + ")");
    Tensor t = Tensor::zeros(shape);
    for (std::int64_t j = 0; j < t.numel(); ++j) {
      const std::uint32_t bits = c.u32();
      std::memcpy(&t[j], &bits, 4);
    }
    require_finite(t, "checkpoint tensor");
    m.params_.push_back(std::move(t));
  }
  if (!c.at_end())
    throw IoError("checkpoint " + path + ": trailing bytes after payload");
  return m;
}

}  // namespace salgrad
