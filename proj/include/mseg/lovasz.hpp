#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "mseg/errors.hpp"
#include "mseg/image.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

// ---------------------------------------------------------------------------
// Softmax over the class axis

// logits [N,C,H,W] -> probabilities of the same shape.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw InvalidArgument("softmax_channels expects [N,C,H,W]");
  const std::size_t n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  Tensor<T> p(logits.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* z = logits.data() + b * c * plane;
    T* out = p.data() + b * c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      T mx = z[i];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, z[k * plane + i]);
      T sum = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const T e = std::exp(z[k * plane + i] - mx);
        out[k * plane + i] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < c; ++k) out[k * plane + i] /= sum;
    }
  }
  return p;
}

// dL/dz = p * (dL/dp - sum_k p_k dL/dp_k), per pixel.
template <class T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& dprobs) {
  const std::size_t n = probs.dim(0), c = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  Tensor<T> dz(probs.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* p = probs.data() + b * c * plane;
    const T* g = dprobs.data() + b * c * plane;
    T* d = dz.data() + b * c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      T dot = 0;
      for (std::size_t k = 0; k < c; ++k) dot += p[k * plane + i] * g[k * plane + i];
      for (std::size_t k = 0; k < c; ++k) d[k * plane + i] = p[k * plane + i] * (g[k * plane + i] - dot);
    }
  }
  return dz;
}

// logits [C,H,W] (or [C,N]) -> ProbabilityMap.
template <class T>
ProbabilityMap<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2 && logits.rank() != 3) throw InvalidArgument("softmax expects [C,H,W] or [C,N]");
  const std::size_t h = logits.rank() == 3 ? logits.dim(1) : 1;
  const std::size_t w = logits.rank() == 3 ? logits.dim(2) : logits.dim(1);
  const Tensor<T> p = softmax_channels(Tensor<T>(Shape{1, logits.dim(0), h, w}, logits.values()));
  return ProbabilityMap<T>(static_cast<int>(logits.dim(0)), static_cast<int>(h), static_cast<int>(w),
                           p.values());
}

// ---------------------------------------------------------------------------
// Lovász extension of the Jaccard loss

enum class ClassMode { present, all };

// Gradient of the Lovász extension of the Jaccard set-loss, given the ground-truth
// indicator sorted by decreasing error.
inline std::vector<double> lovasz_grad(std::span<const std::uint8_t> sorted_truth) {
  const std::size_t n = sorted_truth.size();
  std::vector<double> g(n);
  double positives = 0;
  for (auto v : sorted_truth) {
    if (v > 1) throw InvalidArgument("lovasz_grad: indicator must be binary");
    positives += v;
  }
  double cum_pos = 0, cum_neg = 0, prev = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (sorted_truth[k]) {
      cum_pos += 1;
    } else {
      cum_neg += 1;
    }
    const double jaccard = 1.0 - (positives - cum_pos) / (positives + cum_neg);
    g[k] = jaccard - prev;
    prev = jaccard;
  }
  return g;
}

template <class T>
struct LossResult {
  double loss = 0;
  std::vector<T> grad;  // d loss / d probs, class-major [C, P]
};

// probs: class-major [C, P]; labels: P ids.
template <class T>
LossResult<T> lovasz_softmax_flat(std::span<const T> probs, std::size_t num_classes,
                                  std::span<const std::uint8_t> labels,
                                  ClassMode mode = ClassMode::present) {
  const std::size_t n = labels.size();
  if (n == 0 || num_classes == 0) throw InvalidArgument("lovasz_softmax: empty input");
  if (probs.size() != num_classes * n) throw InvalidArgument("lovasz_softmax: size mismatch");
  for (auto y : labels) {
    if (y >= num_classes) throw InvalidArgument("lovasz_softmax: label exceeds class count");
  }

  LossResult<T> out;
  out.grad.assign(probs.size(), T{0});
  std::vector<double> err(n);
  std::vector<std::size_t> order(n);
  std::vector<std::uint8_t> truth(n);
  std::vector<std::size_t> counted;

  for (std::size_t c = 0; c < num_classes; ++c) {
    bool present = false;
    for (std::size_t i = 0; i < n && !present; ++i) present = labels[i] == c;
    if (mode == ClassMode::present && !present) continue;
    counted.push_back(c);

    const T* p = probs.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      err[i] = labels[i] == c ? 1.0 - static_cast<double>(p[i]) : static_cast<double>(p[i]);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
    for (std::size_t k = 0; k < n; ++k) truth[k] = labels[order[k]] == c ? 1 : 0;
    const std::vector<double> g = lovasz_grad(truth);

    double loss_c = 0;
    T* d = out.grad.data() + c * n;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = order[k];
      loss_c += err[i] * g[k];
      d[i] = static_cast<T>(truth[k] ? -g[k] : g[k]);
    }
    out.loss += loss_c;
  }
  if (counted.empty()) {
    out.grad.assign(probs.size(), T{0});
    return out;
  }
  const double inv = 1.0 / static_cast<double>(counted.size());
  out.loss *= inv;
  for (std::size_t c : counted) {
    for (std::size_t i = 0; i < n; ++i) out.grad[c * n + i] *= static_cast<T>(inv);
  }
  return out;
}

template <class T>
LossResult<T> lovasz_softmax_loss(const ProbabilityMap<T>& probs, const LabelMask& labels,
                                  ClassMode mode = ClassMode::present) {
  if (probs.height() != labels.height() || probs.width() != labels.width()) {
    throw InvalidArgument("lovasz_softmax: dimension mismatch");
  }
  return lovasz_softmax_flat<T>(probs.data(), static_cast<std::size_t>(probs.num_classes()),
                                labels.data(), mode);
}

// Mean of -ln p(y), with p clamped below at 1e-12.
template <class T>
LossResult<T> cross_entropy_flat(std::span<const T> probs, std::size_t num_classes,
                                 std::span<const std::uint8_t> labels) {
  const std::size_t n = labels.size();
  if (n == 0) throw InvalidArgument("cross_entropy: empty input");
  if (probs.size() != num_classes * n) throw InvalidArgument("cross_entropy: size mismatch");
  constexpr double kFloor = 1e-12;
  LossResult<T> out;
  out.grad.assign(probs.size(), T{0});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= num_classes) throw InvalidArgument("cross_entropy: label exceeds class count");
    const double p = static_cast<double>(probs[labels[i] * n + i]);
    out.loss -= std::log(std::max(p, kFloor));
    if (p >= kFloor) out.grad[labels[i] * n + i] = static_cast<T>(-1.0 / (p * n));
  }
  out.loss /= static_cast<double>(n);
  return out;
}

template <class T>
LossResult<T> cross_entropy_loss(const ProbabilityMap<T>& probs, const LabelMask& labels) {
  if (probs.height() != labels.height() || probs.width() != labels.width()) {
    throw InvalidArgument("cross_entropy: dimension mismatch");
  }
  return cross_entropy_flat<T>(probs.data(), static_cast<std::size_t>(probs.num_classes()),
                               labels.data());
}

// ---------------------------------------------------------------------------
// Batched helpers: pixels of every image in the batch are pooled into one loss.

enum class LossKind { lovasz, cross_entropy };

template <class T>
struct BatchLoss {
  double loss = 0;
  Tensor<T> dlogits;
};

// logits [N,C,H,W]; labels N*H*W ids in image-major, row-major order.
template <class T>
BatchLoss<T> batch_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                        LossKind kind = LossKind::lovasz, ClassMode mode = ClassMode::present) {
  const Tensor<T> probs = softmax_channels(logits);
  const std::size_t n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  if (labels.size() != n * plane) throw InvalidArgument("batch_loss: label count mismatch");
  const std::size_t pixels = n * plane;
  std::vector<T> flat(c * pixels);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < c; ++k) {
      std::copy_n(probs.data() + (b * c + k) * plane, plane, flat.data() + k * pixels + b * plane);
    }
  }
  LossResult<T> r = kind == LossKind::lovasz
                        ? lovasz_softmax_flat<T>(flat, c, labels, mode)
                        : cross_entropy_flat<T>(flat, c, labels);
  Tensor<T> dprobs(probs.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < c; ++k) {
      std::copy_n(r.grad.data() + k * pixels + b * plane, plane, dprobs.data() + (b * c + k) * plane);
    }
  }
  return {r.loss, softmax_backward(probs, dprobs)};
}

}  // namespace mseg
