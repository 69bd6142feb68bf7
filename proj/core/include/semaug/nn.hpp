#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semaug/tensor.hpp"

namespace semaug {

using Rng = std::mt19937_64;

/// A trainable tensor with its gradient accumulator.
struct Param {
  Param() = default;
  explicit Param(std::vector<std::size_t> shape_);

  std::vector<std::size_t> shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool frozen = false;

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad();
  void init_normal(Rng& rng, Real stddev);
};

using NamedParams = std::vector<std::pair<std::string, Param*>>;

/// 2-D convolution over HWC tensors, weight layout [ky][kx][cin][cout].
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t pad);

  void init_he(Rng& rng);
  std::size_t out_size(std::size_t in) const noexcept { return (in + 2 * pad_ - k_) / stride_ + 1; }
  std::size_t in_channels() const noexcept { return cin_; }
  std::size_t out_channels() const noexcept { return cout_; }

  Tensor3 forward(const Tensor3& in) const;
  /// Accumulates weight/bias gradients; returns dL/d(in) if requested, else an
  /// empty tensor.
  Tensor3 backward(const Tensor3& in, const Tensor3& grad_out, bool want_input_grad);

  void collect(const std::string& prefix, NamedParams& out);

  Param weight;
  Param bias;

 private:
  std::size_t cin_ = 0, cout_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
};

/// y = W x + b with W stored [out][in].
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features);

  void init_normal(Rng& rng, Real stddev);
  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

  std::vector<Real> forward(std::span<const Real> x) const;
  std::vector<Real> backward(std::span<const Real> x, std::span<const Real> grad_out,
                             bool want_input_grad);
  void collect(const std::string& prefix, NamedParams& out);

  Param weight;
  Param bias;

 private:
  std::size_t in_ = 0, out_ = 0;
};

enum class PoolingMode { attention, average };

/// Single-head attention pooling. The query is a projection of the spatial
/// mean, keys are projections of each position and values are the positions
/// themselves, so the output is a convex combination of the input vectors.
class AttentionPool {
 public:
  struct Cache {
    std::vector<Real> mean;
    std::vector<Real> query;
    std::vector<Real> weights;  // positions
  };

  AttentionPool() = default;
  AttentionPool(std::size_t channels, std::size_t key_dim);

  void init_normal(Rng& rng, Real stddev);
  std::size_t channels() const noexcept { return c_; }

  std::vector<Real> forward(const Tensor3& x, Cache* cache) const;
  /// Accumulates parameter gradients and returns dL/dx.
  Tensor3 backward(const Tensor3& x, const Cache& cache, std::span<const Real> grad_pooled);
  /// dL/dx only; parameters untouched.
  Tensor3 input_grad(const Tensor3& x, const Cache& cache, std::span<const Real> grad_pooled) const;
  void collect(const std::string& prefix, NamedParams& out);

  Param wq;
  Param wk;

 private:
  Tensor3 backward_impl(const Tensor3& x, const Cache& cache, std::span<const Real> grad_pooled,
                        Real* gwq, Real* gwk) const;

  std::size_t c_ = 0, dk_ = 0;
};

std::vector<Real> average_pool(const Tensor3& x);
Tensor3 average_pool_backward(const Tensor3& x, std::span<const Real> grad_pooled);

void relu_inplace(Tensor3& t);
/// Zeroes gradient entries where the forward output was not positive.
void relu_backward(const Tensor3& out, Tensor3& grad);

/// 2x2 stride-2 average pooling (floor on odd sizes).
Tensor3 avg_pool2(const Tensor3& in);
Tensor3 avg_pool2_backward(const Tensor3& in, const Tensor3& grad_out);

/// SGD with momentum and L2 weight decay.
class Sgd {
 public:
  Sgd(Real learning_rate, Real momentum, Real weight_decay)
      : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {}
  void set_learning_rate(Real lr) noexcept { lr_ = lr; }
  Real learning_rate() const noexcept { return lr_; }
  void step(std::span<Param* const> params);

 private:
  Real lr_, momentum_, weight_decay_;
  std::vector<std::vector<Real>> velocity_;
};

/// Adaptive moment estimation.
class Adam {
 public:
  explicit Adam(Real learning_rate, Real beta1 = 0.9, Real beta2 = 0.999, Real eps = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(std::span<Param* const> params);

 private:
  Real lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<Real>> m_, v_;
};

}  // namespace semaug
