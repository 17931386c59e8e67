#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "stegolm/common.hpp"

namespace stegolm {

/**
 * Stable softmax over one logit row. Entries are shifted by the row max
 * before exponentiation, so the result is invariant under adding a
 * constant to all logits.
 */
template <typename S>
std::vector<S> softmax(const std::vector<S>& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  S max_logit = logits[0];
  for (S z : logits) {
    if (std::isnan(static_cast<double>(z))) throw std::invalid_argument("softmax: NaN input");
    if (z > max_logit) max_logit = z;
  }
  std::vector<S> probs(logits.size());
  S sum = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max_logit);
    sum += probs[i];
  }
  const S inv = S(1) / sum;
  for (S& p : probs) p *= inv;
  return probs;
}

// In-place variant over a raw row; used on hot paths.
template <typename S>
void softmax_inplace(S* row, size_t n) {
  S max_logit = row[0];
  for (size_t i = 1; i < n; ++i)
    if (row[i] > max_logit) max_logit = row[i];
  S sum = 0;
  for (size_t i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - max_logit);
    sum += row[i];
  }
  const S inv = S(1) / sum;
  for (size_t i = 0; i < n; ++i) row[i] *= inv;
}

template <typename S>
S log_sum_exp(const S* row, size_t n) {
  S max_logit = row[0];
  for (size_t i = 1; i < n; ++i)
    if (row[i] > max_logit) max_logit = row[i];
  S sum = 0;
  for (size_t i = 0; i < n; ++i) sum += std::exp(row[i] - max_logit);
  return max_logit + std::log(sum);
}

// tanh-approximated GELU and its derivative.
template <typename S>
S gelu(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S cube = S(0.044715) * x * x * x;
  return S(0.5) * x * (S(1) + std::tanh(c * (x + cube)));
}

template <typename S>
S gelu_grad(S x) {
  const S c = S(0.7978845608028654);
  const S cube = S(0.044715) * x * x * x;
  const S t = std::tanh(c * (x + cube));
  const S dt = (S(1) - t * t) * c * (S(1) + S(3) * S(0.044715) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * dt;
}

}  // namespace stegolm
