#pragma once

// Minimal reverse-mode autodiff over dense double tensors, sized for
// single-sample convolutional networks on range images.

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "slack/common.hpp"
#include "slack/rng.hpp"

namespace slack::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  Tensor(std::vector<int> s, std::vector<double> d);

  std::size_t size() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  bool all_finite() const;
};

std::size_t numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Ordered, named parameter arrays.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor value);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  std::size_t count() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }

  // Same names and shapes, zero-filled.
  ParamSet zeros_like() const;
  void set_zero();
  std::size_t total_size() const;
  bool all_finite() const;
  bool operator==(const ParamSet& o) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

struct Var {
  int id = -1;
};

class Graph {
 public:
  // Without gradients the graph only evaluates; backward() is rejected.
  explicit Graph(bool with_grad = true) : with_grad_(with_grad) {}

  Var constant(Tensor value);
  // Leaf bound to `ps[index]`; backward() accumulates into `grads[index]`.
  // `grads == nullptr` freezes the parameter. Repeated calls for the same
  // parameter return the same leaf.
  Var param(const ParamSet& ps, std::size_t index, ParamSet* grads);
  Var param(const ParamSet& ps, const std::string& name, ParamSet* grads) {
    return param(ps, ps.index_of(name), grads);
  }

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  double scalar(Var v) const { return value(v).data.at(0); }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  bool with_grad() const { return with_grad_; }

  // Gradient buffer for an input node, allocated on demand.
  Tensor& grad(Var v);
  const Tensor& grad_of(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  using Backward = std::function<void(Graph&, const Tensor& out_grad)>;
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  // d(loss)/d(loss) = 1, then reverse sweep.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward back;
    bool needs_grad = false;
    ParamSet* param_grads = nullptr;
    std::size_t param_index = 0;
  };
  bool with_grad_;
  std::vector<Node> nodes_;
  std::map<std::pair<const void*, std::size_t>, int> param_cache_;
};

// Geometry of a stride-s, k x k window over a C x H x W image with zero
// padding on rows and circular padding on columns.
struct ConvGeom {
  int channels, height, width;  // image
  int out_h, out_w;             // window positions
  int kernel, stride, pad;
};

// --- layers ---------------------------------------------------------------
// x: [C,H,W], w: [O,C,k,k], b: [O] -> [O,H',W']
Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad);
// x: [C,H,W], w: [C,O,k,k], b: [O] -> [O,(H-1)s-2p+k,(W-1)s-2p+k]
Var conv_transpose2d(Graph& g, Var x, Var w, Var b, int stride, int pad);
// x: any shape (flattened N), w: [O,N], b: [O] -> [O]
Var linear(Graph& g, Var x, Var w, Var b);
Var leaky_relu(Graph& g, Var x, double slope = 0.1);
Var sigmoid(Graph& g, Var x);
Var scale(Graph& g, Var x, double factor);
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var reshape(Graph& g, Var x, std::vector<int> shape);
Var concat(Graph& g, Var a, Var b);
// x: [C,H,W], gate: [C] -> x scaled per channel
Var channel_gate(Graph& g, Var x, Var gate);
// x: [C,H,W] -> [C]
Var global_avg_pool(Graph& g, Var x);
// sum_i w_i * s_i over scalar vars
Var weighted_sum(Graph& g, const std::vector<Var>& scalars, const std::vector<double>& weights);

// --- losses (all return shape [1]) ------------------------------------------
// Mean of (pred - target)^2 over cells with mask != 0. Throws if no cell is set.
Var masked_mse(Graph& g, Var pred, const std::vector<double>& target,
               const std::vector<std::uint8_t>& mask);
// 1 - (2 sum(p*t) + eps) / (sum p + sum t + eps)
Var dice_loss(Graph& g, Var prob, const std::vector<double>& target, double eps = 1e-6);
Var triplet_loss(Graph& g, Var anchor, Var positive, Var negative, double margin);
Var npair_loss(Graph& g, Var anchor, Var positive, const std::vector<Var>& negatives);
// Binary cross entropy of a probability, clamped to [1e-7, 1-1e-7].
Var bce(Graph& g, Var prob, double label);
// Per-cell weighted BCE averaged over masked cells.
Var weighted_bce_map(Graph& g, Var prob, const std::vector<double>& labels,
                     const std::vector<double>& weights, const std::vector<std::uint8_t>& mask);
// Biased multi-bandwidth Gaussian MMD between two sets of [D] vectors.
Var mmd(Graph& g, const std::vector<Var>& a, const std::vector<Var>& b,
        const std::vector<double>& bandwidths);

constexpr double kProbClamp = 1e-7;

// --- optimizer -------------------------------------------------------------
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

class Adam {
 public:
  Adam(const ParamSet& params, AdamConfig cfg);
  // grads are scaled by `grad_scale` before the update.
  void step(ParamSet& params, const ParamSet& grads, double grad_scale = 1.0);

 private:
  AdamConfig cfg_;
  ParamSet m_, v_;
  long t_ = 0;
};

// Uniform fan-in initialisation (He-style for leaky ReLU).
Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng, double gain = 1.0);

}  // namespace slack::nn
