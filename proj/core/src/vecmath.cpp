#include "semaug/vecmath.hpp"

#include <algorithm>
#include <cmath>

#include "semaug/errors.hpp"

namespace semaug {

namespace {
void check_same(std::span<const Real> a, std::span<const Real> b, const char* what) {
  if (a.size() != b.size()) throw InvalidInput(std::string(what) + ": length mismatch");
}
}  // namespace

Real dot(std::span<const Real> a, std::span<const Real> b) {
  check_same(a, b, "dot");
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Real l2_norm(std::span<const Real> a) {
  Real s = 0;
  for (Real v : a) s += v * v;
  return std::sqrt(s);
}

Real l1_norm(std::span<const Real> a) {
  Real s = 0;
  for (Real v : a) s += std::abs(v);
  return s;
}

Real cosine_similarity(std::span<const Real> a, std::span<const Real> b) {
  check_same(a, b, "cosine_similarity");
  const Real na = l2_norm(a);
  const Real nb = l2_norm(b);
  if (na == 0 || nb == 0) throw InvalidInput("cosine_similarity: zero-norm input");
  return std::clamp(dot(a, b) / (na * nb), Real{-1}, Real{1});
}

Real cosine_distance(std::span<const Real> a, std::span<const Real> b) {
  return 1 - cosine_similarity(a, b);
}

std::vector<Real> cosine_distance_grad_b(std::span<const Real> a, std::span<const Real> b) {
  check_same(a, b, "cosine_distance_grad_b");
  const Real na = l2_norm(a);
  const Real nb = l2_norm(b);
  if (na == 0 || nb == 0) throw InvalidInput("cosine_distance_grad_b: zero-norm input");
  const Real c = dot(a, b) / (na * nb);
  std::vector<Real> g(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    g[i] = -(a[i] / (na * nb) - c * b[i] / (nb * nb));
  }
  return g;
}

std::vector<Real> add(std::span<const Real> a, std::span<const Real> b) {
  check_same(a, b, "add");
  std::vector<Real> r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

std::vector<Real> sub(std::span<const Real> a, std::span<const Real> b) {
  check_same(a, b, "sub");
  std::vector<Real> r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

std::vector<Real> mean_of(std::span<const std::vector<Real>> rows) {
  if (rows.empty()) throw InvalidInput("mean_of: no rows");
  std::vector<Real> m(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    check_same(m, r, "mean_of");
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += r[i];
  }
  for (Real& v : m) v /= static_cast<Real>(rows.size());
  return m;
}

std::vector<Real> softmax(std::span<const Real> logits) {
  std::vector<Real> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const Real mx = *std::max_element(p.begin(), p.end());
  Real s = 0;
  for (Real& v : p) {
    v = std::exp(v - mx);
    s += v;
  }
  for (Real& v : p) v /= s;
  return p;
}

}  // namespace semaug
