#pragma once

// Minimal trainable numeric stack: dense layers, ReLU MLPs, masked max
// pooling, Huber / cross-entropy losses, momentum SGD and a binary
// checkpoint format. Everything is double precision and batched over rows.

#include "stop4d/core.hpp"
#include "stop4d/types.hpp"

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace stop4d::tinynet {

using Matrix = RowMatrix;
using Vector = Eigen::VectorXd;

struct ShapeError : Error {
  using Error::Error;
};

/// View of one trainable tensor and its gradient buffer.
struct ParamRef {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  std::size_t size = 0;
};

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

struct DenseLayer {
  std::string name;
  Matrix weight;  // out x in
  Vector bias;    // out
  Matrix grad_weight;
  Vector grad_bias;

  DenseLayer() = default;
  DenseLayer(std::string n, int in, int out) : name(std::move(n)) {
    weight = Matrix::Zero(out, in);
    bias = Vector::Zero(out);
    zero_grad();
  }

  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }

  /// Uniform +-sqrt(6 / (fan_in + fan_out)); bias zero.
  void init(Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(in() + out()));
    for (Eigen::Index r = 0; r < weight.rows(); ++r)
      for (Eigen::Index c = 0; c < weight.cols(); ++c) weight(r, c) = rng.uniform(-a, a);
    bias.setZero();
  }

  // Keeps buffer addresses stable once sized, so ParamRef views stay valid.
  void zero_grad() {
    if (grad_weight.rows() != weight.rows() || grad_weight.cols() != weight.cols())
      grad_weight.resize(weight.rows(), weight.cols());
    if (grad_bias.size() != bias.size()) grad_bias.resize(bias.size());
    grad_weight.setZero();
    grad_bias.setZero();
  }

  Matrix forward(const Matrix& x) const {
    if (x.cols() != weight.cols())
      throw ShapeError(name + ": input width " + std::to_string(x.cols()) + ", expected " +
                       std::to_string(weight.cols()));
    Matrix y = x * weight.transpose();
    y.rowwise() += bias.transpose();
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& grad_out) {
    grad_weight.noalias() += grad_out.transpose() * x;
    grad_bias += grad_out.colwise().sum().transpose();
    return grad_out * weight;
  }

  void collect(std::vector<ParamRef>& out) {
    out.push_back({name + "/weight", weight.data(), grad_weight.data(), static_cast<std::size_t>(weight.size())});
    out.push_back({name + "/bias", bias.data(), grad_bias.data(), static_cast<std::size_t>(bias.size())});
  }
};

// ---------------------------------------------------------------------------
// MLP: affine + ReLU on hidden layers, linear final layer
// ---------------------------------------------------------------------------

struct MlpCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, int in, const std::vector<int>& outs) : name_(std::move(name)) {
    int prev = in;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      layers_.emplace_back(name_ + "/" + std::to_string(i), prev, outs[i]);
      prev = outs[i];
    }
  }

  void init(Rng& rng) {
    for (auto& l : layers_) l.init(rng);
  }

  int in() const { return layers_.empty() ? 0 : layers_.front().in(); }
  int out() const { return layers_.empty() ? 0 : layers_.back().out(); }
  const std::string& name() const { return name_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Matrix forward(const Matrix& x, MlpCache* cache = nullptr) const {
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
    }
    Matrix a = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Matrix z = layers_[i].forward(a);
      if (cache) {
        cache->inputs.push_back(std::move(a));
        cache->pre.push_back(z);
      }
      a = (i + 1 < layers_.size()) ? Matrix(z.cwiseMax(0.0)) : std::move(z);
    }
    return a;
  }

  /// Backpropagates through a cached forward pass; returns dL/dx.
  Matrix backward(const MlpCache& cache, const Matrix& grad_out) {
    Matrix g = grad_out;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      if (k + 1 < layers_.size()) g = g.cwiseProduct((cache.pre[k].array() > 0.0).cast<double>().matrix());
      g = layers_[k].backward(cache.inputs[k], g);
    }
    return g;
  }

  void zero_grad() {
    for (auto& l : layers_) l.zero_grad();
  }

  void collect(std::vector<ParamRef>& out) {
    for (auto& l : layers_) l.collect(out);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

 private:
  std::string name_;
  std::vector<DenseLayer> layers_;
};

/// Stateless forward over a layer stack (ReLU hidden, linear final).
inline Matrix forward_mlp(const std::vector<DenseLayer>& layers, const Matrix& inputs) {
  Matrix a = inputs;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Matrix z = layers[i].forward(a);
    a = (i + 1 < layers.size()) ? Matrix(z.cwiseMax(0.0)) : std::move(z);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

struct PoolResult {
  Vector value;
  std::vector<Eigen::Index> argmax;  // winning row per channel
};

/// Channel-wise max over rows with mask[r] != 0 (empty mask = all rows).
/// Ties go to the lowest row.
inline PoolResult masked_max_pool(const Matrix& features, std::span<const std::uint8_t> mask = {}) {
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != features.rows())
    throw ShapeError("masked_max_pool: mask length differs from row count");
  PoolResult r;
  r.value = Vector::Constant(features.cols(), -std::numeric_limits<double>::infinity());
  r.argmax.assign(static_cast<std::size_t>(features.cols()), -1);
  for (Eigen::Index row = 0; row < features.rows(); ++row) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(row)]) continue;
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      if (r.argmax[static_cast<std::size_t>(c)] < 0 || features(row, c) > r.value[c]) {
        r.value[c] = features(row, c);
        r.argmax[static_cast<std::size_t>(c)] = row;
      }
    }
  }
  if (features.cols() > 0 && r.argmax[0] < 0) throw ShapeError("masked_max_pool: every row is masked");
  return r;
}

/// Routes a pooled gradient back to the argmax rows.
inline Matrix max_pool_backward(const PoolResult& pool, const Vector& grad, Eigen::Index rows) {
  Matrix g = Matrix::Zero(rows, grad.size());
  for (Eigen::Index c = 0; c < grad.size(); ++c) g(pool.argmax[static_cast<std::size_t>(c)], c) += grad[c];
  return g;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Sum over components of 0.5 e^2 (|e| <= delta) or delta (|e| - delta / 2).
template <class Derived>
double huber(const Eigen::MatrixBase<Derived>& e, double delta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const double a = std::abs(e(i));
    s += a <= delta ? 0.5 * a * a : delta * (a - 0.5 * delta);
  }
  return s;
}

inline double huber(double e, double delta) {
  const double a = std::abs(e);
  return a <= delta ? 0.5 * a * a : delta * (a - 0.5 * delta);
}

inline double huber_grad(double e, double delta) {
  if (e > delta) return delta;
  if (e < -delta) return -delta;
  return e;
}

template <class Derived>
Vector huber_grad(const Eigen::MatrixBase<Derived>& e, double delta) {
  Vector g(e.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) g[i] = huber_grad(e(i), delta);
  return g;
}

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// -log softmax(logits)[target], stabilized by max subtraction.
inline LossGrad softmax_cross_entropy(const Vector& logits, int target) {
  if (logits.size() < 2) throw ShapeError("softmax_cross_entropy: need >= 2 classes");
  if (target < 0 || target >= logits.size()) throw ShapeError("softmax_cross_entropy: target out of range");
  const double m = logits.maxCoeff();
  const Vector ex = (logits.array() - m).exp().matrix();
  const double z = ex.sum();
  LossGrad out;
  out.loss = -(logits[target] - m - std::log(z));
  out.grad = ex / z;
  out.grad[target] -= 1.0;
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Row argmax, ties to the lowest column.
inline int argmax_row(const Matrix& m, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(row, c) > m(row, best)) best = static_cast<int>(c);
  return best;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Global L2 norm of all gradients.
inline double grad_norm(const std::vector<ParamRef>& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (std::size_t i = 0; i < p.size; ++i) s += p.grad[i] * p.grad[i];
  return std::sqrt(s);
}

/// Scales gradients so their global norm is at most max_norm (0 disables).
inline void clip_grad_norm(const std::vector<ParamRef>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = grad_norm(params);
  if (n > max_norm) {
    const double s = max_norm / n;
    for (const auto& p : params)
      for (std::size_t i = 0; i < p.size; ++i) p.grad[i] *= s;
  }
}

/// Classical momentum: v <- momentum v + g; p <- p - lr v.
class Sgd {
 public:
  Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
    if (!(lr > 0.0)) throw ShapeError("sgd: learning rate must be > 0");
  }

  void step(const std::vector<ParamRef>& params) {
    for (const auto& p : params)
      for (std::size_t i = 0; i < p.size; ++i)
        if (!std::isfinite(p.grad[i])) throw NumericError("non-finite gradient in parameter " + p.name);
    for (const auto& p : params) {
      auto& v = velocity_[p.name];
      if (v.size() != p.size) v.assign(p.size, 0.0);
      for (std::size_t i = 0; i < p.size; ++i) {
        v[i] = momentum_ * v[i] + p.grad[i];
        p.value[i] -= lr_ * v[i];
      }
    }
  }

  std::map<std::string, std::vector<double>>& velocity() { return velocity_; }
  const std::map<std::string, std::vector<double>>& velocity() const { return velocity_; }

 private:
  double lr_;
  double momentum_;
  std::map<std::string, std::vector<double>> velocity_;
};

/// One plain update on a single parameter set (no persistent state beyond
/// the provided velocity vector).
inline void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                     double lr, double momentum, const std::string& name = "param") {
  if (!(lr > 0.0)) throw ShapeError("sgd_step: learning rate must be > 0");
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + name);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "S4DCKPT1", u32 count, then per tensor
//   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

struct Tensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

namespace detail {

inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  const std::string& b;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > b.size()) throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos));
  }
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{static_cast<unsigned char>(b[pos + i])} << (8 * i);
    pos += static_cast<std::size_t>(bytes);
    return v;
  }
};

}  // namespace detail

constexpr char kCheckpointMagic[] = "S4DCKPT1";

inline std::string encode_checkpoint(const std::vector<Tensor>& tensors) {
  std::string b(kCheckpointMagic, 8);
  detail::put_u32(b, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::uint64_t count = 1;
    for (auto d : t.shape) count *= d;
    if (count != t.values.size()) throw ShapeError("checkpoint tensor " + t.name + ": shape/value mismatch");
    detail::put_u32(b, static_cast<std::uint32_t>(t.name.size()));
    b += t.name;
    detail::put_u32(b, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_u64(b, d);
    for (double v : t.values) detail::put_u64(b, std::bit_cast<std::uint64_t>(v));
  }
  return b;
}

inline std::vector<Tensor> decode_checkpoint(const std::string& b) {
  if (b.size() < 8 || b.compare(0, 8, kCheckpointMagic, 8) != 0) throw FormatError("not a checkpoint file");
  detail::Reader r{b, 8};
  const auto n = r.get(4);
  std::vector<Tensor> out;
  for (std::uint64_t k = 0; k < n; ++k) {
    Tensor t;
    const auto len = r.get(4);
    r.need(len);
    t.name = b.substr(r.pos, len);
    r.pos += len;
    const auto rank = r.get(4);
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      t.shape.push_back(r.get(8));
      count *= t.shape.back();
    }
    r.need(count * 8);
    t.values.resize(count);
    for (auto& v : t.values) v = std::bit_cast<double>(r.get(8));
    out.push_back(std::move(t));
  }
  return out;
}

inline void write_checkpoint(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string b = encode_checkpoint(tensors);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

inline std::vector<Tensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(b);
}

/// Snapshot of parameter values as tensors (flat shape).
inline std::vector<Tensor> to_tensors(const std::vector<ParamRef>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back({p.name, {p.size}, std::vector<double>(p.value, p.value + p.size)});
  return out;
}

/// Copies tensor values into matching parameters; throws on missing or
/// mis-sized entries.
inline void load_tensors(const std::vector<Tensor>& tensors, const std::vector<ParamRef>& params) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (const auto& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor " + p.name);
    if (it->second->values.size() != p.size) throw FormatError("checkpoint tensor " + p.name + " has wrong size");
    std::copy(it->second->values.begin(), it->second->values.end(), p.value);
  }
}

}  // namespace stop4d::tinynet
