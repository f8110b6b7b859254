#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mseg/errors.hpp"
#include "mseg/layers.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

enum class Family : std::uint8_t { proposed = 0, baseline = 1 };

inline const char* family_name(Family f) { return f == Family::proposed ? "proposed" : "baseline"; }

inline Family parse_family(const std::string& s) {
  if (s == "proposed") return Family::proposed;
  if (s == "baseline") return Family::baseline;
  throw InvalidArgument("unknown architecture family: " + s);
}

struct ArchitectureSpec {
  Family family = Family::proposed;
  int in_channels = 1;
  int input_size = 64;
  int num_classes = 3;
  std::vector<int> widths{8, 16, 32};  // one per encoder stage
  int res_blocks = 1;                  // residual blocks per stage
  double dropout_rate = 0.1;           // baseline only
  double residual_scaling = 0.3;       // baseline only
  double leaky_slope = 0.01;           // proposed only
  double elu_alpha = 1.0;              // baseline only
  bool skip_connections = true;
  std::uint64_t seed = 1;

  int stage_count() const { return static_cast<int>(widths.size()); }
  int size_multiple() const { return 1 << stage_count(); }

  void validate() const {
    if (widths.empty()) throw InvalidArgument("architecture needs at least one stage");
    for (int w : widths) {
      if (w < 1) throw InvalidArgument("stage widths must be >= 1");
    }
    if (in_channels < 1 || num_classes < 1) throw InvalidArgument("channel counts must be >= 1");
    if (res_blocks < 0) throw InvalidArgument("res_blocks must be >= 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw InvalidArgument("dropout_rate must be in [0,1)");
    }
    if (!(residual_scaling > 0.0)) throw InvalidArgument("residual_scaling must be positive");
    if (input_size < 1 || input_size % size_multiple() != 0) {
      throw InvalidArgument("input size must be divisible by 2^stage_count");
    }
  }

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

// ---------------------------------------------------------------------------
// Parameters

template <class T>
struct ParamBlock {
  std::string name;
  Tensor<T> value;
};

template <class T>
class ModelParams {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter block: " + name);
    index_.emplace(name, blocks_.size());
    blocks_.push_back({std::move(name), std::move(value)});
    return blocks_.size() - 1;
  }

  std::size_t size() const { return blocks_.size(); }
  ParamBlock<T>& block(std::size_t i) { return blocks_[i]; }
  const ParamBlock<T>& block(std::size_t i) const { return blocks_[i]; }
  Tensor<T>& operator[](std::size_t i) { return blocks_[i].value; }
  const Tensor<T>& operator[](std::size_t i) const { return blocks_[i].value; }
  auto begin() { return blocks_.begin(); }
  auto end() { return blocks_.end(); }
  auto begin() const { return blocks_.begin(); }
  auto end() const { return blocks_.end(); }

  std::size_t index(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("no parameter block named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.value.size();
    return n;
  }

  ModelParams zeros_like() const {
    ModelParams z;
    for (const auto& b : blocks_) z.add(b.name, Tensor<T>(b.value.shape()));
    return z;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& b : blocks_) out.add(b.name, b.value.template cast<U>());
    return out;
  }

  // Mutation counter; optimizers bump it so stale forward caches are detected.
  std::uint64_t generation() const { return generation_; }
  void bump() { ++generation_; }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.blocks_.size() != b.blocks_.size()) return false;
    for (std::size_t i = 0; i < a.blocks_.size(); ++i) {
      if (a.blocks_[i].name != b.blocks_[i].name || !(a.blocks_[i].value == b.blocks_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<ParamBlock<T>> blocks_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t generation_ = 0;
};

// ---------------------------------------------------------------------------
// Architecture description, shared by every builder below.
//
// A builder supplies a Node type and the ops input/conv/leaky/elu/add/scale/
// pool/up_nearest/up_bilinear/concat/dropout. The same walk registers
// parameter shapes, records a differentiable graph, or runs plain inference.

namespace arch {

template <class B>
typename B::Node proposed_residual(B& b, typename B::Node x, const std::string& name, int width) {
  auto h = b.leaky(b.conv(x, name + ".conv1", width, 3));
  h = b.conv(h, name + ".conv2", width, 3);
  return b.leaky(b.add(x, h));
}

template <class B>
typename B::Node baseline_residual(B& b, typename B::Node x, const std::string& name, int width) {
  auto h = b.conv(b.elu(x), name + ".conv1", width, 3);
  h = b.dropout(h);
  h = b.conv(b.elu(h), name + ".conv2", width, 3);
  return b.add(x, b.scale(h));
}

template <class B>
typename B::Node describe(const ArchitectureSpec& spec, B& b) {
  const bool proposed = spec.family == Family::proposed;
  const int stages = spec.stage_count();
  const auto act = [&](typename B::Node x) { return proposed ? b.leaky(x) : b.elu(x); };
  const auto residuals = [&](typename B::Node x, const std::string& prefix, int width) {
    for (int r = 0; r < spec.res_blocks; ++r) {
      const std::string name = prefix + ".res" + std::to_string(r);
      x = proposed ? proposed_residual(b, x, name, width) : baseline_residual(b, x, name, width);
    }
    return x;
  };

  auto x = b.input();
  std::vector<typename B::Node> skips;
  for (int s = 0; s < stages; ++s) {
    const std::string prefix = "enc" + std::to_string(s);
    const int w = spec.widths[s];
    x = act(b.conv(x, prefix + ".conv", w, 3));
    x = residuals(x, prefix, w);
    skips.push_back(x);
    if (!proposed) x = b.elu(b.conv(x, prefix + ".expand", 2 * w, 1));
    x = b.pool(x);
  }

  const int deepest = spec.widths.back();
  x = act(b.conv(x, "center.conv", deepest, 3));
  x = residuals(x, "center", deepest);

  for (int k = 0; k < stages; ++k) {
    const int s = stages - 1 - k;
    const std::string prefix = "dec" + std::to_string(k);
    x = proposed ? b.up_nearest(x) : b.up_bilinear(x);
    // The proposed decoder's final (full-resolution) block has no concatenation.
    const bool concat = spec.skip_connections && (!proposed || k != stages - 1);
    if (concat) x = b.concat(x, skips[s]);
    x = act(b.conv(x, prefix + ".conv", spec.widths[s], 3));
    x = residuals(x, prefix, spec.widths[s]);
  }
  skips.clear();
  return b.conv(x, "head", spec.num_classes, 1);
}

struct BlockShape {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 for biases
};

// Lists parameter blocks in registration order without allocating them.
class ShapeBuilder {
 public:
  using Node = int;  // channel count

  ShapeBuilder(const ArchitectureSpec& spec, std::vector<BlockShape>& out) : spec_(spec), out_(out) {}

  Node input() { return spec_.in_channels; }
  Node conv(Node x, const std::string& name, int cout, int k) {
    const auto co = static_cast<std::size_t>(cout), ci = static_cast<std::size_t>(x),
               kk = static_cast<std::size_t>(k);
    out_.push_back({name + ".w", Shape{co, ci, kk, kk}, ci * kk * kk});
    out_.push_back({name + ".b", Shape{co}, 0});
    return cout;
  }
  Node leaky(Node x) { return x; }
  Node elu(Node x) { return x; }
  Node add(Node a, Node b) {
    if (a != b) throw InvalidArgument("residual add channel mismatch");
    return a;
  }
  Node scale(Node x) { return x; }
  Node pool(Node x) { return x; }
  Node up_nearest(Node x) { return x; }
  Node up_bilinear(Node x) { return x; }
  Node concat(Node a, Node b) { return a + b; }
  Node dropout(Node x) { return x; }

 private:
  const ArchitectureSpec& spec_;
  std::vector<BlockShape>& out_;
};

}  // namespace arch

inline std::vector<arch::BlockShape> parameter_shapes(const ArchitectureSpec& spec) {
  spec.validate();
  std::vector<arch::BlockShape> shapes;
  arch::ShapeBuilder b(spec, shapes);
  arch::describe(spec, b);
  return shapes;
}

// He-normal kernels (std = sqrt(2 / fan_in)), zero biases; deterministic in spec.seed.
template <class T>
ModelParams<T> build_model(const ArchitectureSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  ModelParams<T> params;
  for (auto& bs : parameter_shapes(spec)) {
    Tensor<T> t(bs.shape);
    if (bs.fan_in > 0) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(bs.fan_in)));
      for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    }
    params.add(std::move(bs.name), std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Recorded forward pass with reverse-mode backward.

template <class T>
class Graph {
 public:
  using NodeId = std::size_t;

  Graph(const ModelParams<T>& params, double leaky_slope, double elu_alpha)
      : params_(&params), generation_(params.generation()), slope_(leaky_slope), alpha_(elu_alpha) {}

  const Tensor<T>& value(NodeId id) const { return values_[id]; }
  const ModelParams<T>* params() const { return params_; }
  std::uint64_t generation() const { return generation_; }

  NodeId input(Tensor<T> x) { return push(std::move(x)); }

  NodeId conv(NodeId x, std::size_t wb, std::size_t bb) {
    const NodeId y = push(conv2d(values_[x], (*params_)[wb], (*params_)[bb], Padding::same));
    record([x, y, wb, bb](Graph& g) {
      if (!g.has_grad(y)) return;
      conv2d_backward(g.values_[x], (*g.params_)[wb], g.grads_[y], Padding::same, &g.grad(x),
                      &g.param_grads_[wb], &g.param_grads_[bb]);
    });
    return y;
  }

  NodeId leaky(NodeId x) {
    const NodeId y = push(leaky_relu(values_[x], slope_));
    record([x, y](Graph& g) {
      if (g.has_grad(y)) leaky_relu_backward(g.values_[x], g.grads_[y], g.slope_, g.grad(x));
    });
    return y;
  }

  NodeId elu(NodeId x) {
    const NodeId y = push(mseg::elu(values_[x], alpha_));
    record([x, y](Graph& g) {
      if (g.has_grad(y)) elu_backward(g.values_[x], g.values_[y], g.grads_[y], g.alpha_, g.grad(x));
    });
    return y;
  }

  NodeId add(NodeId a, NodeId b) {
    Tensor<T> s = values_[a];
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += values_[b][i];
    const NodeId y = push(std::move(s));
    record([a, b, y](Graph& g) {
      if (!g.has_grad(y)) return;
      for (NodeId in : {a, b}) {
        Tensor<T>& d = g.grad(in);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.grads_[y][i];
      }
    });
    return y;
  }

  NodeId scale(NodeId x, double factor) {
    const T f = static_cast<T>(factor);
    Tensor<T> s = values_[x];
    for (T& v : s.values()) v *= f;
    const NodeId y = push(std::move(s));
    record([x, y, f](Graph& g) {
      if (!g.has_grad(y)) return;
      Tensor<T>& d = g.grad(x);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += f * g.grads_[y][i];
    });
    return y;
  }

  NodeId pool(NodeId x) {
    const NodeId y = push(mean_pool2(values_[x]));
    record([x, y](Graph& g) {
      if (g.has_grad(y)) mean_pool2_backward(g.grads_[y], g.grad(x));
    });
    return y;
  }

  NodeId up_nearest(NodeId x) {
    const NodeId y = push(nearest_upsample2(values_[x]));
    record([x, y](Graph& g) {
      if (g.has_grad(y)) nearest_upsample2_backward(g.grads_[y], g.grad(x));
    });
    return y;
  }

  NodeId up_bilinear(NodeId x) {
    const NodeId y = push(bilinear_upsample2(values_[x]));
    record([x, y](Graph& g) {
      if (g.has_grad(y)) bilinear_upsample2_backward(g.grads_[y], g.grad(x));
    });
    return y;
  }

  NodeId concat(NodeId a, NodeId b) {
    const std::size_t ca = values_[a].dim(1), cb = values_[b].dim(1);
    const NodeId y = push(concat_channels(values_[a], values_[b]));
    record([a, b, y, ca, cb](Graph& g) {
      if (g.has_grad(y)) concat_channels_backward(g.grads_[y], &g.grad(a), &g.grad(b), ca, cb);
    });
    return y;
  }

  NodeId dropout(NodeId x, double rate, std::mt19937_64& rng, bool training) {
    Tensor<T> mask;
    const NodeId y = push(mseg::dropout(values_[x], rate, rng, training, &mask));
    record([x, y, mask = std::move(mask)](Graph& g) {
      if (!g.has_grad(y)) return;
      Tensor<T>& d = g.grad(x);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += mask[i] * g.grads_[y][i];
    });
    return y;
  }

  // Reverse sweep from `output`; returns gradients shaped like the parameters.
  ModelParams<T> backward(const ModelParams<T>& params, NodeId output, const Tensor<T>& doutput) {
    if (&params != params_ || params.generation() != generation_) {
      throw InvalidArgument("backward: forward cache is stale for these parameters");
    }
    if (doutput.shape() != values_[output].shape()) {
      throw InvalidArgument("backward: upstream gradient shape " + shape_str(doutput.shape()) +
                            " does not match output " + shape_str(values_[output].shape()));
    }
    grads_.assign(values_.size(), Tensor<T>());
    param_grads_ = params.zeros_like();
    grads_[output] = doutput;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)(*this);
    grads_.clear();
    return std::move(param_grads_);
  }

 private:
  NodeId push(Tensor<T> v) {
    values_.push_back(std::move(v));
    return values_.size() - 1;
  }
  void record(std::function<void(Graph&)> op) { tape_.push_back(std::move(op)); }
  bool has_grad(NodeId id) const { return grads_[id].size() != 0; }
  Tensor<T>& grad(NodeId id) {
    if (grads_[id].size() == 0) grads_[id] = Tensor<T>(values_[id].shape());
    return grads_[id];
  }

  const ModelParams<T>* params_;
  std::uint64_t generation_;
  double slope_, alpha_;
  std::vector<Tensor<T>> values_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::function<void(Graph&)>> tape_;
  ModelParams<T> param_grads_;
};

namespace arch {

template <class T>
class GraphBuilder {
 public:
  using Node = typename Graph<T>::NodeId;

  GraphBuilder(const ArchitectureSpec& spec, const ModelParams<T>& params, Graph<T>& g,
               Tensor<T> batch, bool training, std::mt19937_64* rng)
      : spec_(spec), params_(params), g_(g), batch_(std::move(batch)), training_(training),
        rng_(rng) {}

  Node input() { return g_.input(std::move(batch_)); }
  Node conv(Node x, const std::string& name, int, int) {
    return g_.conv(x, params_.index(name + ".w"), params_.index(name + ".b"));
  }
  Node leaky(Node x) { return g_.leaky(x); }
  Node elu(Node x) { return g_.elu(x); }
  Node add(Node a, Node b) { return g_.add(a, b); }
  Node scale(Node x) { return g_.scale(x, spec_.residual_scaling); }
  Node pool(Node x) { return g_.pool(x); }
  Node up_nearest(Node x) { return g_.up_nearest(x); }
  Node up_bilinear(Node x) { return g_.up_bilinear(x); }
  Node concat(Node a, Node b) { return g_.concat(a, b); }
  Node dropout(Node x) {
    if (training_ && !rng_) throw InvalidArgument("training-mode forward needs an rng");
    std::mt19937_64 unused;
    return g_.dropout(x, spec_.dropout_rate, rng_ ? *rng_ : unused, training_);
  }

 private:
  const ArchitectureSpec& spec_;
  const ModelParams<T>& params_;
  Graph<T>& g_;
  Tensor<T> batch_;
  bool training_;
  std::mt19937_64* rng_;
};

// Inference without a tape; intermediates are released as soon as unused.
template <class T>
class EvalBuilder {
 public:
  using Node = std::shared_ptr<const Tensor<T>>;

  EvalBuilder(const ArchitectureSpec& spec, const ModelParams<T>& params, const Tensor<T>& batch)
      : spec_(spec), params_(params), batch_(batch) {}

  Node input() { return std::make_shared<const Tensor<T>>(batch_); }
  Node conv(Node x, const std::string& name, int, int) {
    return wrap(conv2d(*x, params_[params_.index(name + ".w")], params_[params_.index(name + ".b")],
                       Padding::same));
  }
  Node leaky(Node x) { return wrap(leaky_relu(*x, spec_.leaky_slope)); }
  Node elu(Node x) { return wrap(mseg::elu(*x, spec_.elu_alpha)); }
  Node add(Node a, Node b) {
    Tensor<T> s = *a;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += (*b)[i];
    return wrap(std::move(s));
  }
  Node scale(Node x) {
    Tensor<T> s = *x;
    const T f = static_cast<T>(spec_.residual_scaling);
    for (T& v : s.values()) v *= f;
    return wrap(std::move(s));
  }
  Node pool(Node x) { return wrap(mean_pool2(*x)); }
  Node up_nearest(Node x) { return wrap(nearest_upsample2(*x)); }
  Node up_bilinear(Node x) { return wrap(bilinear_upsample2(*x)); }
  Node concat(Node a, Node b) { return wrap(concat_channels(*a, *b)); }
  Node dropout(Node x) { return x; }

 private:
  static Node wrap(Tensor<T> t) { return std::make_shared<const Tensor<T>>(std::move(t)); }

  const ArchitectureSpec& spec_;
  const ModelParams<T>& params_;
  const Tensor<T>& batch_;
};

}  // namespace arch

namespace detail {
inline void check_batch_shape(const ArchitectureSpec& spec, const Shape& s) {
  if (s.size() != 4 || s[1] != static_cast<std::size_t>(spec.in_channels) || s[0] == 0) {
    throw InvalidArgument("forward expects [N," + std::to_string(spec.in_channels) +
                          ",H,W] input, got " + shape_str(s));
  }
  const auto m = static_cast<std::size_t>(spec.size_multiple());
  if (s[2] == 0 || s[3] == 0 || s[2] % m != 0 || s[3] % m != 0) {
    throw InvalidArgument("forward: spatial dims must be divisible by 2^stage_count = " +
                          std::to_string(m));
  }
}
}  // namespace detail

template <class T>
struct ForwardPass {
  Tensor<T> logits;
  Graph<T> graph;
  typename Graph<T>::NodeId output = 0;
};

// Training-capable forward: records every intermediate for backward().
template <class T>
ForwardPass<T> forward(const ModelParams<T>& params, const ArchitectureSpec& spec,
                       const Tensor<T>& batch, bool training, std::mt19937_64* rng = nullptr) {
  detail::check_batch_shape(spec, batch.shape());
  ForwardPass<T> pass{Tensor<T>(), Graph<T>(params, spec.leaky_slope, spec.elu_alpha), 0};
  arch::GraphBuilder<T> b(spec, params, pass.graph, batch, training, rng);
  pass.output = arch::describe(spec, b);
  pass.logits = pass.graph.value(pass.output);
  return pass;
}

template <class T>
ModelParams<T> backward(const ModelParams<T>& params, ForwardPass<T>& pass,
                        const Tensor<T>& dlogits) {
  return pass.graph.backward(params, pass.output, dlogits);
}

// Inference-only forward (dropout off, nothing retained).
template <class T>
Tensor<T> infer(const ModelParams<T>& params, const ArchitectureSpec& spec, const Tensor<T>& batch) {
  detail::check_batch_shape(spec, batch.shape());
  arch::EvalBuilder<T> b(spec, params, batch);
  return *arch::describe(spec, b);
}

}  // namespace mseg
