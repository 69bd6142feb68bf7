#pragma once

#include <span>
#include <vector>

#include "semaug/tensor.hpp"

namespace semaug {

Real dot(std::span<const Real> a, std::span<const Real> b);
Real l2_norm(std::span<const Real> a);
Real l1_norm(std::span<const Real> a);

/// Cosine similarity; throws InvalidInput on zero-norm or length mismatch.
Real cosine_similarity(std::span<const Real> a, std::span<const Real> b);

/// 1 - cos(a, b), in [0, 2].
Real cosine_distance(std::span<const Real> a, std::span<const Real> b);

/// d/db of cosine_distance(a, b).
std::vector<Real> cosine_distance_grad_b(std::span<const Real> a, std::span<const Real> b);

std::vector<Real> add(std::span<const Real> a, std::span<const Real> b);
std::vector<Real> sub(std::span<const Real> a, std::span<const Real> b);
std::vector<Real> mean_of(std::span<const std::vector<Real>> rows);

/// Numerically stable softmax.
std::vector<Real> softmax(std::span<const Real> logits);

}  // namespace semaug
