#include "semaug/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "semaug/errors.hpp"

namespace semaug {

Param::Param(std::vector<std::size_t> shape_) : shape(std::move(shape_)) {
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  value.assign(n, 0.0);
  grad.assign(n, 0.0);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void Param::init_normal(Rng& rng, Real stddev) {
  std::normal_distribution<Real> dist(0.0, stddev);
  for (Real& v : value) v = dist(rng);
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t pad)
    : weight({kernel, kernel, in_channels, out_channels}),
      bias({out_channels}),
      cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(pad) {}

void Conv2d::init_he(Rng& rng) {
  weight.init_normal(rng, std::sqrt(2.0 / static_cast<Real>(k_ * k_ * cin_)));
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Tensor3 Conv2d::forward(const Tensor3& in) const {
  if (in.channels() != cin_) throw InvalidInput("Conv2d: channel mismatch");
  if (in.height() + 2 * pad_ < k_ || in.width() + 2 * pad_ < k_)
    throw InvalidInput("Conv2d: input smaller than kernel");
  const std::size_t oh = out_size(in.height());
  const std::size_t ow = out_size(in.width());
  Tensor3 out(oh, ow, cout_);
  const Real* w = weight.value.data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      Real* acc = &out(oy, ox, 0);
      std::copy(bias.value.begin(), bias.value.end(), acc);
      for (std::size_t ky = 0; ky < k_; ++ky) {
        const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
        if (iy < 0 || iy >= static_cast<long>(in.height())) continue;
        for (std::size_t kx = 0; kx < k_; ++kx) {
          const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
          if (ix < 0 || ix >= static_cast<long>(in.width())) continue;
          const Real* ip = in.pixel(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)).data();
          const Real* wk = w + (ky * k_ + kx) * cin_ * cout_;
          for (std::size_t ci = 0; ci < cin_; ++ci) {
            const Real v = ip[ci];
            const Real* wr = wk + ci * cout_;
            for (std::size_t co = 0; co < cout_; ++co) acc[co] += v * wr[co];
          }
        }
      }
    }
  }
  return out;
}

Tensor3 Conv2d::backward(const Tensor3& in, const Tensor3& grad_out, bool want_input_grad) {
  Tensor3 grad_in;
  if (want_input_grad) grad_in = Tensor3(in.height(), in.width(), cin_);
  const Real* w = weight.value.data();
  Real* gw = weight.grad.data();
  for (std::size_t oy = 0; oy < grad_out.height(); ++oy) {
    for (std::size_t ox = 0; ox < grad_out.width(); ++ox) {
      const Real* g = grad_out.pixel(oy, ox).data();
      for (std::size_t co = 0; co < cout_; ++co) bias.grad[co] += g[co];
      for (std::size_t ky = 0; ky < k_; ++ky) {
        const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
        if (iy < 0 || iy >= static_cast<long>(in.height())) continue;
        for (std::size_t kx = 0; kx < k_; ++kx) {
          const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
          if (ix < 0 || ix >= static_cast<long>(in.width())) continue;
          const auto uy = static_cast<std::size_t>(iy);
          const auto ux = static_cast<std::size_t>(ix);
          const Real* ip = in.pixel(uy, ux).data();
          const std::size_t off = (ky * k_ + kx) * cin_ * cout_;
          for (std::size_t ci = 0; ci < cin_; ++ci) {
            const Real v = ip[ci];
            Real* gwr = gw + off + ci * cout_;
            for (std::size_t co = 0; co < cout_; ++co) gwr[co] += v * g[co];
          }
          if (want_input_grad) {
            Real* gi = &grad_in(uy, ux, 0);
            for (std::size_t ci = 0; ci < cin_; ++ci) {
              const Real* wr = w + off + ci * cout_;
              Real s = 0;
              for (std::size_t co = 0; co < cout_; ++co) s += wr[co] * g[co];
              gi[ci] += s;
            }
          }
        }
      }
    }
  }
  return grad_in;
}

void Conv2d::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::size_t in_features, std::size_t out_features)
    : weight({out_features, in_features}), bias({out_features}), in_(in_features), out_(out_features) {}

void Linear::init_normal(Rng& rng, Real stddev) {
  weight.init_normal(rng, stddev);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

std::vector<Real> Linear::forward(std::span<const Real> x) const {
  if (x.size() != in_) throw InvalidInput("Linear: input size mismatch");
  std::vector<Real> y(bias.value);
  const Real* w = weight.value.data();
  for (std::size_t o = 0; o < out_; ++o) {
    const Real* wr = w + o * in_;
    Real s = 0;
    for (std::size_t i = 0; i < in_; ++i) s += wr[i] * x[i];
    y[o] += s;
  }
  return y;
}

std::vector<Real> Linear::backward(std::span<const Real> x, std::span<const Real> grad_out,
                                   bool want_input_grad) {
  std::vector<Real> gx;
  if (want_input_grad) gx.assign(in_, 0.0);
  const Real* w = weight.value.data();
  Real* gw = weight.grad.data();
  for (std::size_t o = 0; o < out_; ++o) {
    const Real g = grad_out[o];
    bias.grad[o] += g;
    if (g == 0) continue;
    Real* gwr = gw + o * in_;
    for (std::size_t i = 0; i < in_; ++i) gwr[i] += g * x[i];
    if (want_input_grad) {
      const Real* wr = w + o * in_;
      for (std::size_t i = 0; i < in_; ++i) gx[i] += g * wr[i];
    }
  }
  return gx;
}

void Linear::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

// ---------------------------------------------------------------------------
// Attention pooling

AttentionPool::AttentionPool(std::size_t channels, std::size_t key_dim)
    : wq({key_dim, channels}), wk({key_dim, channels}), c_(channels), dk_(key_dim) {}

void AttentionPool::init_normal(Rng& rng, Real stddev) {
  wq.init_normal(rng, stddev);
  wk.init_normal(rng, stddev);
}

std::vector<Real> AttentionPool::forward(const Tensor3& x, Cache* cache) const {
  if (x.channels() != c_) throw InvalidInput("AttentionPool: channel mismatch");
  const std::size_t positions = x.height() * x.width();
  if (positions == 0) throw InvalidInput("AttentionPool: empty input");
  const Real* xd = x.data();

  std::vector<Real> mean(c_, 0.0);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t c = 0; c < c_; ++c) mean[c] += xd[p * c_ + c];
  for (Real& v : mean) v /= static_cast<Real>(positions);

  std::vector<Real> q(dk_, 0.0);
  for (std::size_t d = 0; d < dk_; ++d) {
    const Real* wr = wq.value.data() + d * c_;
    Real s = 0;
    for (std::size_t c = 0; c < c_; ++c) s += wr[c] * mean[c];
    q[d] = s;
  }

  // Scores only need q^T Wk x_p, so fold the query through Wk once.
  std::vector<Real> qk(c_, 0.0);
  for (std::size_t d = 0; d < dk_; ++d) {
    const Real* wr = wk.value.data() + d * c_;
    for (std::size_t c = 0; c < c_; ++c) qk[c] += q[d] * wr[c];
  }
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dk_));
  std::vector<Real> scores(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    Real s = 0;
    for (std::size_t c = 0; c < c_; ++c) s += qk[c] * xd[p * c_ + c];
    scores[p] = s * scale;
  }
  const Real mx = *std::max_element(scores.begin(), scores.end());
  Real total = 0;
  for (Real& s : scores) {
    s = std::exp(s - mx);
    total += s;
  }
  for (Real& s : scores) s /= total;

  std::vector<Real> pooled(c_, 0.0);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t c = 0; c < c_; ++c) pooled[c] += scores[p] * xd[p * c_ + c];

  if (cache != nullptr) {
    cache->mean = std::move(mean);
    cache->query = std::move(q);
    cache->weights = std::move(scores);
  }
  return pooled;
}

Tensor3 AttentionPool::backward(const Tensor3& x, const Cache& cache,
                                std::span<const Real> grad_pooled) {
  return backward_impl(x, cache, grad_pooled, wq.grad.data(), wk.grad.data());
}

Tensor3 AttentionPool::input_grad(const Tensor3& x, const Cache& cache,
                                  std::span<const Real> grad_pooled) const {
  return backward_impl(x, cache, grad_pooled, nullptr, nullptr);
}

Tensor3 AttentionPool::backward_impl(const Tensor3& x, const Cache& cache,
                                     std::span<const Real> grad_pooled, Real* gwq_out,
                                     Real* gwk_out) const {
  const std::size_t positions = x.height() * x.width();
  const Real* xd = x.data();
  const auto& a = cache.weights;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dk_));
  Tensor3 gx(x.height(), x.width(), c_);
  Real* gxd = gx.data();

  // Direct value path and dL/da_p.
  std::vector<Real> ga(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    Real s = 0;
    for (std::size_t c = 0; c < c_; ++c) {
      gxd[p * c_ + c] += a[p] * grad_pooled[c];
      s += grad_pooled[c] * xd[p * c_ + c];
    }
    ga[p] = s;
  }
  Real weighted = 0;
  for (std::size_t p = 0; p < positions; ++p) weighted += a[p] * ga[p];
  // dL/ds_p (pre-softmax, post-scale), folded with the scale.
  std::vector<Real> gs(positions);
  for (std::size_t p = 0; p < positions; ++p) gs[p] = a[p] * (ga[p] - weighted) * scale;

  // s_p = q . (Wk x_p).  dL/dk_p = gs_p q ; dL/dq = sum_p gs_p k_p.
  // dL/dx_p += Wk^T q gs_p ; dWk += q (sum_p gs_p x_p)^T
  std::vector<Real> wkq(c_, 0.0);  // Wk^T q
  for (std::size_t d = 0; d < dk_; ++d) {
    const Real* wr = wk.value.data() + d * c_;
    for (std::size_t c = 0; c < c_; ++c) wkq[c] += cache.query[d] * wr[c];
  }
  std::vector<Real> xs(c_, 0.0);  // sum_p gs_p x_p
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t c = 0; c < c_; ++c) {
      gxd[p * c_ + c] += gs[p] * wkq[c];
      xs[c] += gs[p] * xd[p * c_ + c];
    }
  }
  std::vector<Real> gq(dk_, 0.0);  // = Wk xs
  for (std::size_t d = 0; d < dk_; ++d) {
    const Real* wr = wk.value.data() + d * c_;
    Real s = 0;
    for (std::size_t c = 0; c < c_; ++c) s += wr[c] * xs[c];
    if (gwk_out != nullptr)
      for (std::size_t c = 0; c < c_; ++c) gwk_out[d * c_ + c] += cache.query[d] * xs[c];
    gq[d] = s;
  }
  // q = Wq m
  std::vector<Real> gm(c_, 0.0);
  for (std::size_t d = 0; d < dk_; ++d) {
    const Real* wr = wq.value.data() + d * c_;
    for (std::size_t c = 0; c < c_; ++c) gm[c] += gq[d] * wr[c];
    if (gwq_out != nullptr)
      for (std::size_t c = 0; c < c_; ++c) gwq_out[d * c_ + c] += gq[d] * cache.mean[c];
  }
  const Real inv = 1.0 / static_cast<Real>(positions);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t c = 0; c < c_; ++c) gxd[p * c_ + c] += gm[c] * inv;
  return gx;
}

void AttentionPool::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".wq", &wq);
  out.emplace_back(prefix + ".wk", &wk);
}

std::vector<Real> average_pool(const Tensor3& x) {
  const std::size_t positions = x.height() * x.width();
  if (positions == 0) throw InvalidInput("average_pool: empty input");
  std::vector<Real> m(x.channels(), 0.0);
  const Real* xd = x.data();
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t c = 0; c < x.channels(); ++c) m[c] += xd[p * x.channels() + c];
  for (Real& v : m) v /= static_cast<Real>(positions);
  return m;
}

Tensor3 average_pool_backward(const Tensor3& x, std::span<const Real> grad_pooled) {
  Tensor3 g(x.height(), x.width(), x.channels());
  const Real inv = 1.0 / static_cast<Real>(x.height() * x.width());
  Real* gd = g.data();
  for (std::size_t p = 0; p < x.height() * x.width(); ++p)
    for (std::size_t c = 0; c < x.channels(); ++c) gd[p * x.channels() + c] = grad_pooled[c] * inv;
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise / pooling

void relu_inplace(Tensor3& t) {
  for (Real& v : t.values()) v = v > 0 ? v : 0;
}

void relu_backward(const Tensor3& out, Tensor3& grad) {
  auto o = out.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (o[i] <= 0) g[i] = 0;
}

Tensor3 avg_pool2(const Tensor3& in) {
  const std::size_t oh = in.height() / 2, ow = in.width() / 2, c = in.channels();
  Tensor3 out(oh, ow, c);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out(y, x, ch) = 0.25 * (in(2 * y, 2 * x, ch) + in(2 * y, 2 * x + 1, ch) +
                                in(2 * y + 1, 2 * x, ch) + in(2 * y + 1, 2 * x + 1, ch));
  return out;
}

Tensor3 avg_pool2_backward(const Tensor3& in, const Tensor3& grad_out) {
  Tensor3 g(in.height(), in.width(), in.channels());
  for (std::size_t y = 0; y < grad_out.height(); ++y)
    for (std::size_t x = 0; x < grad_out.width(); ++x)
      for (std::size_t ch = 0; ch < in.channels(); ++ch) {
        const Real v = 0.25 * grad_out(y, x, ch);
        g(2 * y, 2 * x, ch) += v;
        g(2 * y, 2 * x + 1, ch) += v;
        g(2 * y + 1, 2 * x, ch) += v;
        g(2 * y + 1, 2 * x + 1, ch) += v;
      }
  return g;
}

// ---------------------------------------------------------------------------
// Optimizers

void Sgd::step(std::span<Param* const> params) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const Param* p : params) velocity_.emplace_back(p->size(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (p.frozen) continue;
    auto& vel = velocity_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const Real g = p.grad[k] + weight_decay_ * p.value[k];
      vel[k] = momentum_ * vel[k] + g;
      p.value[k] -= lr_ * vel[k];
    }
  }
}

void Adam::step(std::span<Param* const> params) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const Param* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  ++t_;
  const Real c1 = 1 - std::pow(b1_, static_cast<Real>(t_));
  const Real c2 = 1 - std::pow(b2_, static_cast<Real>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (p.frozen) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const Real g = p.grad[k];
      m[k] = b1_ * m[k] + (1 - b1_) * g;
      v[k] = b2_ * v[k] + (1 - b2_) * g * g;
      p.value[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

}  // namespace semaug
