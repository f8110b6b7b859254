#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>

#include "mseg/errors.hpp"
#include "mseg/model.hpp"
#include "mseg/weights_io.hpp"

namespace mseg {

struct ScheduleConfig {
  double eta0 = 0.001;
  double eta_min = 0.0;
  long period = 1;  // T, in optimizer steps

  void validate() const {
    if (!(eta0 > 0.0)) throw InvalidArgument("eta0 must be positive");
    if (period < 1) throw InvalidArgument("schedule period must be >= 1");
    if (!(eta_min >= 0.0 && eta_min <= eta0)) throw InvalidArgument("need 0 <= eta_min <= eta0");
  }
};

// eta(t) = eta_min + (eta0 - eta_min) * (1 + cos(pi t / T)) / 2, for 0 <= t <= T.
inline double cosine_lr(long t, const ScheduleConfig& cfg) {
  cfg.validate();
  if (t < 0 || t > cfg.period) throw InvalidArgument("cosine_lr: step outside [0, T]");
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(cfg.period);
  return cfg.eta_min + 0.5 * (cfg.eta0 - cfg.eta_min) * (1.0 + std::cos(phase));
}

enum class OptimizerMode : std::uint8_t { nsgd = 0, adadelta = 1 };

inline const char* optimizer_name(OptimizerMode m) {
  return m == OptimizerMode::nsgd ? "nsgd" : "adadelta";
}

inline OptimizerMode parse_optimizer(const std::string& s) {
  if (s == "nsgd") return OptimizerMode::nsgd;
  if (s == "adadelta") return OptimizerMode::adadelta;
  throw InvalidArgument("unknown optimizer: " + s);
}

struct OptimizerConfig {
  OptimizerMode mode = OptimizerMode::nsgd;
  double momentum = 0.9;    // mu
  double eps_norm = 1e-12;  // guards zero-norm gradient blocks
  double rho = 0.95;
  double eps = 1e-6;

  void validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0,1)");
    if (!(rho > 0.0 && rho < 1.0)) throw InvalidArgument("rho must be in (0,1)");
    if (!(eps > 0.0) || !(eps_norm > 0.0)) throw InvalidArgument("epsilons must be positive");
  }
};

// Per-block buffers mirroring ModelParams. nsgd uses `velocity`; Adadelta uses
// `sq_grad` (E[g^2]) and `sq_update` (E[dx^2]).
template <class T>
struct OptimState {
  OptimizerMode mode = OptimizerMode::nsgd;
  std::uint64_t step = 0;
  ModelParams<T> velocity;
  ModelParams<T> sq_grad;
  ModelParams<T> sq_update;

  friend bool operator==(const OptimState& a, const OptimState& b) {
    return a.mode == b.mode && a.step == b.step && a.velocity == b.velocity &&
           a.sq_grad == b.sq_grad && a.sq_update == b.sq_update;
  }
};

template <class T>
OptimState<T> make_optim_state(const ModelParams<T>& params, OptimizerMode mode) {
  OptimState<T> s;
  s.mode = mode;
  if (mode == OptimizerMode::nsgd) {
    s.velocity = params.zeros_like();
  } else {
    s.sq_grad = params.zeros_like();
    s.sq_update = params.zeros_like();
  }
  return s;
}

namespace detail {
template <class T>
void check_aligned(const ModelParams<T>& params, const ModelParams<T>& grads,
                   const ModelParams<T>& buf) {
  if (grads.size() != params.size() || buf.size() != params.size()) {
    throw InvalidArgument("optimizer: parameter/gradient/state block counts differ");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (grads[b].shape() != params[b].shape() || buf[b].shape() != params[b].shape()) {
      throw InvalidArgument("optimizer: shape mismatch in block " + params.block(b).name);
    }
  }
}
}  // namespace detail

// Per block: g_hat = g / max(|g|, eps_norm); v = mu v + g_hat; w -= lr v.
template <class T>
void nsgd_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimState<T>& state, double lr,
               const OptimizerConfig& cfg) {
  if (state.mode != OptimizerMode::nsgd) throw InvalidArgument("optimizer state is not nsgd");
  detail::check_aligned(params, grads, state.velocity);
  for (std::size_t b = 0; b < params.size(); ++b) {
    const Tensor<T>& g = grads[b];
    double sq = 0;
    for (std::size_t i = 0; i < g.size(); ++i) sq += static_cast<double>(g[i]) * g[i];
    const double inv = 1.0 / std::max(std::sqrt(sq), cfg.eps_norm);
    Tensor<T>& v = state.velocity[b];
    Tensor<T>& w = params[b];
    for (std::size_t i = 0; i < g.size(); ++i) {
      v[i] = static_cast<T>(cfg.momentum * v[i] + inv * g[i]);
      w[i] = static_cast<T>(w[i] - lr * v[i]);
    }
  }
  ++state.step;
  params.bump();
}

// E[g2] = rho E[g2] + (1-rho) g^2; dx = -sqrt(E[dx2]+eps)/sqrt(E[g2]+eps) g;
// E[dx2] = rho E[dx2] + (1-rho) dx^2; w += lr dx.
template <class T>
void adadelta_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimState<T>& state,
                   double lr, const OptimizerConfig& cfg) {
  if (state.mode != OptimizerMode::adadelta) throw InvalidArgument("optimizer state is not adadelta");
  detail::check_aligned(params, grads, state.sq_grad);
  detail::check_aligned(params, grads, state.sq_update);
  const double rho = cfg.rho, eps = cfg.eps;
  for (std::size_t b = 0; b < params.size(); ++b) {
    const Tensor<T>& g = grads[b];
    Tensor<T>& eg = state.sq_grad[b];
    Tensor<T>& ex = state.sq_update[b];
    Tensor<T>& w = params[b];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      const double eg2 = rho * eg[i] + (1.0 - rho) * gi * gi;
      const double dx = -std::sqrt(ex[i] + eps) / std::sqrt(eg2 + eps) * gi;
      eg[i] = static_cast<T>(eg2);
      ex[i] = static_cast<T>(rho * ex[i] + (1.0 - rho) * dx * dx);
      w[i] = static_cast<T>(w[i] + lr * dx);
    }
  }
  ++state.step;
  params.bump();
}

template <class T>
void optimizer_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimState<T>& state,
                    double lr, const OptimizerConfig& cfg) {
  if (state.mode == OptimizerMode::nsgd) {
    nsgd_step(params, grads, state, lr, cfg);
  } else {
    adadelta_step(params, grads, state, lr, cfg);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: weights container plus ".opt" blocks.
//   optimizer.opt = [mode, step bits 0-15, 16-31, 32-47]
//   <block>.<buffer>.opt per state buffer

template <class T>
ModelParams<T> optim_state_blocks(const OptimState<T>& s) {
  ModelParams<T> out;
  if (s.step >> 48) throw InvalidArgument("optimizer step counter too large to persist");
  out.add("optimizer" + kOptSuffix,
          Tensor<T>(Shape{4}, {static_cast<T>(s.mode), static_cast<T>(s.step & 0xFFFF),
                               static_cast<T>((s.step >> 16) & 0xFFFF),
                               static_cast<T>((s.step >> 32) & 0xFFFF)}));
  const auto put = [&](const ModelParams<T>& buf, const char* tag) {
    for (const auto& b : buf) out.add(b.name + "." + tag + kOptSuffix, b.value);
  };
  put(s.velocity, "velocity");
  put(s.sq_grad, "sq_grad");
  put(s.sq_update, "sq_update");
  return out;
}

template <class T>
OptimState<T> optim_state_from_blocks(const ModelParams<T>& extra, const ModelParams<T>& params) {
  const std::string header = "optimizer" + kOptSuffix;
  if (!extra.contains(header)) {
    throw WeightsError(WeightsErrorKind::missing_block, header, "checkpoint has no optimizer state");
  }
  const Tensor<T>& h = extra[extra.index(header)];
  if (h.shape() != Shape{4} || (h[0] != T(0) && h[0] != T(1))) {
    throw WeightsError(WeightsErrorKind::shape_mismatch, header, "malformed optimizer header");
  }
  OptimState<T> s = make_optim_state(params, static_cast<OptimizerMode>(static_cast<int>(h[0])));
  s.step = static_cast<std::uint64_t>(h[1]) | (static_cast<std::uint64_t>(h[2]) << 16) |
           (static_cast<std::uint64_t>(h[3]) << 32);
  const auto get = [&](ModelParams<T>& buf, const char* tag) {
    for (auto& b : buf) {
      const std::string name = b.name + "." + tag + kOptSuffix;
      if (!extra.contains(name)) throw WeightsError(WeightsErrorKind::missing_block, name, "not in file");
      const Tensor<T>& t = extra[extra.index(name)];
      if (t.shape() != b.value.shape()) {
        throw WeightsError(WeightsErrorKind::shape_mismatch, name,
                           "stored shape " + shape_str(t.shape()) + ", expected " +
                               shape_str(b.value.shape()));
      }
      b.value = t;
    }
  };
  get(s.velocity, "velocity");
  get(s.sq_grad, "sq_grad");
  get(s.sq_update, "sq_update");
  const std::size_t expected = 1 + s.velocity.size() + s.sq_grad.size() + s.sq_update.size();
  if (extra.size() != expected) {
    throw WeightsError(WeightsErrorKind::unexpected_block, "", "checkpoint carries unknown .opt blocks");
  }
  return s;
}

template <class T>
void save_checkpoint(const ModelParams<T>& params, const ArchitectureSpec& spec,
                     const OptimState<T>& state, const std::filesystem::path& path) {
  const ModelParams<T> extra = optim_state_blocks(state);
  save_weights(params, spec, path, &extra);
}

template <class T>
struct Checkpoint {
  ModelParams<T> params;
  ArchitectureSpec spec;
  OptimState<T> state;
};

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  LoadedWeights<T> w = load_weights<T>(path);
  OptimState<T> s = optim_state_from_blocks(w.extra, w.params);
  return {std::move(w.params), std::move(w.spec), std::move(s)};
}

}  // namespace mseg
