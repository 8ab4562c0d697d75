#include "slack/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace slack::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

inline int wrap(int i, int n) {
  i %= n;
  return i < 0 ? i + n : i;
}

// col: [C*k*k, out_h*out_w]
void im2col(const double* img, const ConvGeom& g, double* col) {
  const int k = g.kernel;
  const int positions = g.out_h * g.out_w;
  std::vector<int> col_index(static_cast<std::size_t>(k) * g.out_w);
  for (int kj = 0; kj < k; ++kj) {
    for (int ow = 0; ow < g.out_w; ++ow) {
      col_index[static_cast<std::size_t>(kj) * g.out_w + ow] =
          wrap(ow * g.stride - g.pad + kj, g.width);
    }
  }
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* dst = col + (static_cast<std::size_t>((c * k + ki) * k + kj)) * positions;
        const int* ci = &col_index[static_cast<std::size_t>(kj) * g.out_w];
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          double* row = dst + static_cast<std::size_t>(oh) * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(row, row + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) row[ow] = src[ci[ow]];
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into img.
void col2im(const double* col, const ConvGeom& g, double* img) {
  const int k = g.kernel;
  const int positions = g.out_h * g.out_w;
  std::vector<int> col_index(static_cast<std::size_t>(k) * g.out_w);
  for (int kj = 0; kj < k; ++kj) {
    for (int ow = 0; ow < g.out_w; ++ow) {
      col_index[static_cast<std::size_t>(kj) * g.out_w + ow] =
          wrap(ow * g.stride - g.pad + kj, g.width);
    }
  }
  for (int c = 0; c < g.channels; ++c) {
    double* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* src = col + (static_cast<std::size_t>((c * k + ki) * k + kj)) * positions;
        const int* ci = &col_index[static_cast<std::size_t>(kj) * g.out_w];
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          const double* row = src + static_cast<std::size_t>(oh) * g.out_w;
          double* dst = plane + static_cast<std::size_t>(ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) dst[ci[ow]] += row[ow];
        }
      }
    }
  }
}

void expect(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::kShapeMismatch, what);
}

void accumulate(Tensor& dst, const double* src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src[i];
}

}  // namespace

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(numel(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  expect(data.size() == numel(shape), "tensor data does not match shape " + shape_str(shape));
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

Tensor& ParamSet::add(const std::string& name, Tensor value) {
  require(!contains(name), ErrorCode::kInternal, "duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
  return values_.back();
}

std::size_t ParamSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCode::kFormat, "missing parameter " + name);
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) { return values_[index_of(name)]; }
const Tensor& ParamSet::at(const std::string& name) const { return values_[index_of(name)]; }

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  for (std::size_t i = 0; i < names_.size(); ++i) z.add(names_[i], Tensor(values_[i].shape));
  return z;
}

void ParamSet::set_zero() {
  for (auto& v : values_) std::fill(v.data.begin(), v.data.end(), 0.0);
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

bool ParamSet::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](const Tensor& t) { return t.all_finite(); });
}

bool ParamSet::operator==(const ParamSet& o) const {
  if (names_ != o.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i].shape != o.values_[i].shape || values_[i].data != o.values_[i].data) return false;
  }
  return true;
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::param(const ParamSet& ps, std::size_t index, ParamSet* grads) {
  const auto key = std::make_pair(static_cast<const void*>(&ps.value(index)), index);
  if (auto it = param_cache_.find(key); it != param_cache_.end()) return Var{it->second};
  Node n;
  n.value = ps.value(index);
  if (with_grad_ && grads) {
    n.needs_grad = true;
    n.param_grads = grads;
    n.param_index = index;
  }
  nodes_.push_back(std::move(n));
  param_cache_[key] = static_cast<int>(nodes_.size() - 1);
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Tensor& Graph::grad(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (with_grad_) {
    for (Var v : inputs) n.needs_grad = n.needs_grad || needs_grad(v);
  }
  if (n.needs_grad) n.back = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

void Graph::backward(Var loss) {
  require(with_grad_, ErrorCode::kInternal, "backward() on an evaluation-only graph");
  require(value(loss).size() == 1, ErrorCode::kInternal, "backward() needs a scalar loss");
  if (!needs_grad(loss)) return;
  grad(loss).data[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this, n.grad);
    if (n.param_grads) accumulate(n.param_grads->value(n.param_index), n.grad.data.data());
  }
}

Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(w);
  expect(X.shape.size() == 3 && W.shape.size() == 4 && W.dim(1) == X.dim(0) &&
             W.dim(2) == W.dim(3) && g.value(b).size() == static_cast<std::size_t>(W.dim(0)),
         "conv2d shapes " + shape_str(X.shape) + " * " + shape_str(W.shape));
  const int k = W.dim(2);
  ConvGeom geo{X.dim(0), X.dim(1), X.dim(2), (X.dim(1) + 2 * pad - k) / stride + 1,
               (X.dim(2) + 2 * pad - k) / stride + 1, k, stride, pad};
  expect(geo.out_h >= 1 && geo.out_w >= 1, "conv2d input too small");
  const int O = W.dim(0);
  const int rows = geo.channels * k * k;
  const int positions = geo.out_h * geo.out_w;
  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * positions);
  im2col(X.data.data(), geo, col->data());
  Tensor out({O, geo.out_h, geo.out_w});
  MatMap O_m(out.data.data(), O, positions);
  O_m.noalias() = ConstMatMap(W.data.data(), O, rows) * ConstMatMap(col->data(), rows, positions);
  const Tensor& B = g.value(b);
  for (int o = 0; o < O; ++o) O_m.row(o).array() += B[static_cast<std::size_t>(o)];
  return g.record(std::move(out), {x, w, b}, [x, w, b, geo, col, O, rows, positions](Graph& g, const Tensor& dy) {
    ConstMatMap dY(dy.data.data(), O, positions);
    if (g.needs_grad(w)) {
      MatMap(g.grad(w).data.data(), O, rows).noalias() +=
          dY * ConstMatMap(col->data(), rows, positions).transpose();
    }
    if (g.needs_grad(b)) VecMap(g.grad(b).data.data(), O) += dY.rowwise().sum();
    if (g.needs_grad(x)) {
      RowMat dcol = ConstMatMap(g.value(w).data.data(), O, rows).transpose() * dY;
      col2im(dcol.data(), geo, g.grad(x).data.data());
    }
  });
}

Var conv_transpose2d(Graph& g, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(w);
  expect(X.shape.size() == 3 && W.shape.size() == 4 && W.dim(0) == X.dim(0) &&
             W.dim(2) == W.dim(3) && g.value(b).size() == static_cast<std::size_t>(W.dim(1)),
         "conv_transpose2d shapes " + shape_str(X.shape) + " * " + shape_str(W.shape));
  const int k = W.dim(2);
  const int Cin = X.dim(0), Cout = W.dim(1);
  const int Ho = (X.dim(1) - 1) * stride - 2 * pad + k;
  const int Wo = (X.dim(2) - 1) * stride - 2 * pad + k;
  expect(Ho >= 1 && Wo >= 1, "conv_transpose2d output empty");
  ConvGeom geo{Cout, Ho, Wo, X.dim(1), X.dim(2), k, stride, pad};
  const int rows = Cout * k * k;
  const int positions = X.dim(1) * X.dim(2);
  RowMat cols = ConstMatMap(W.data.data(), Cin, rows).transpose() *
                ConstMatMap(X.data.data(), Cin, positions);
  Tensor out({Cout, Ho, Wo});
  col2im(cols.data(), geo, out.data.data());
  const Tensor& B = g.value(b);
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  for (int o = 0; o < Cout; ++o) {
    double* p = out.data.data() + o * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += B[static_cast<std::size_t>(o)];
  }
  return g.record(std::move(out), {x, w, b}, [x, w, b, geo, Cin, Cout, rows, positions, plane](Graph& g, const Tensor& dy) {
    if (g.needs_grad(b)) {
      Tensor& db = g.grad(b);
      for (int o = 0; o < Cout; ++o) {
        const double* p = dy.data.data() + o * plane;
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        db[static_cast<std::size_t>(o)] += s;
      }
    }
    if (!g.needs_grad(w) && !g.needs_grad(x)) return;
    RowMat dcols(rows, positions);
    im2col(dy.data.data(), geo, dcols.data());
    if (g.needs_grad(w)) {
      MatMap(g.grad(w).data.data(), Cin, rows).noalias() +=
          ConstMatMap(g.value(x).data.data(), Cin, positions) * dcols.transpose();
    }
    if (g.needs_grad(x)) {
      MatMap(g.grad(x).data.data(), Cin, positions).noalias() +=
          ConstMatMap(g.value(w).data.data(), Cin, rows) * dcols;
    }
  });
}

Var linear(Graph& g, Var x, Var w, Var b) {
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(w);
  const int N = static_cast<int>(X.size());
  expect(W.shape.size() == 2 && W.dim(1) == N && g.value(b).size() == static_cast<std::size_t>(W.dim(0)),
         "linear shapes " + shape_str(X.shape) + " * " + shape_str(W.shape));
  const int O = W.dim(0);
  Tensor out({O});
  VecMap(out.data.data(), O).noalias() =
      ConstMatMap(W.data.data(), O, N) * ConstVecMap(X.data.data(), N) +
      ConstVecMap(g.value(b).data.data(), O);
  return g.record(std::move(out), {x, w, b}, [x, w, b, N, O](Graph& g, const Tensor& dy) {
    ConstVecMap dY(dy.data.data(), O);
    if (g.needs_grad(w)) {
      MatMap(g.grad(w).data.data(), O, N).noalias() +=
          dY * ConstVecMap(g.value(x).data.data(), N).transpose();
    }
    if (g.needs_grad(b)) VecMap(g.grad(b).data.data(), O) += dY;
    if (g.needs_grad(x)) {
      VecMap(g.grad(x).data.data(), N).noalias() +=
          ConstMatMap(g.value(w).data.data(), O, N).transpose() * dY;
    }
  });
}

Var leaky_relu(Graph& g, Var x, double slope) {
  Tensor out = g.value(x);
  for (double& v : out.data) v = v > 0 ? v : slope * v;
  return g.record(std::move(out), {x}, [x, slope](Graph& g, const Tensor& dy) {
    const Tensor& X = g.value(x);
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += X[i] > 0 ? dy[i] : slope * dy[i];
  });
}

namespace {
inline double logistic(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (double& v : out.data) v = logistic(v);
  auto y = std::make_shared<std::vector<double>>(out.data);
  return g.record(std::move(out), {x}, [x, y](Graph& g, const Tensor& dy) {
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*y)[i] * (1.0 - (*y)[i]);
  });
}

Var scale(Graph& g, Var x, double factor) {
  Tensor out = g.value(x);
  for (double& v : out.data) v *= factor;
  return g.record(std::move(out), {x}, [x, factor](Graph& g, const Tensor& dy) {
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
  });
}

Var add(Graph& g, Var a, Var b) {
  expect(g.value(a).size() == g.value(b).size(), "add size mismatch");
  Tensor out = g.value(a);
  const Tensor& B = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& dy) {
    if (g.needs_grad(a)) accumulate(g.grad(a), dy.data.data());
    if (g.needs_grad(b)) accumulate(g.grad(b), dy.data.data());
  });
}

Var sub(Graph& g, Var a, Var b) { return add(g, a, scale(g, b, -1.0)); }

Var reshape(Graph& g, Var x, std::vector<int> shape) {
  expect(numel(shape) == g.value(x).size(), "reshape to " + shape_str(shape));
  Tensor out(std::move(shape), g.value(x).data);
  return g.record(std::move(out), {x}, [x](Graph& g, const Tensor& dy) {
    accumulate(g.grad(x), dy.data.data());
  });
}

Var concat(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  std::vector<double> d(A.data);
  d.insert(d.end(), B.data.begin(), B.data.end());
  const std::size_t na = A.size();
  const int n = static_cast<int>(d.size());
  Tensor out({n}, std::move(d));
  return g.record(std::move(out), {a, b}, [a, b, na](Graph& g, const Tensor& dy) {
    if (g.needs_grad(a)) accumulate(g.grad(a), dy.data.data());
    if (g.needs_grad(b)) accumulate(g.grad(b), dy.data.data() + na);
  });
}

Var channel_gate(Graph& g, Var x, Var gate) {
  const Tensor& X = g.value(x);
  const Tensor& G = g.value(gate);
  expect(X.shape.size() == 3 && G.size() == static_cast<std::size_t>(X.dim(0)),
         "channel gate has " + std::to_string(G.size()) + " values for " + shape_str(X.shape));
  const std::size_t plane = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
  Tensor out = X;
  for (int c = 0; c < X.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] *= G[static_cast<std::size_t>(c)];
  }
  const int C = X.dim(0);
  return g.record(std::move(out), {x, gate}, [x, gate, plane, C](Graph& g, const Tensor& dy) {
    const Tensor& X = g.value(x);
    const Tensor& G = g.value(gate);
    if (g.needs_grad(x)) {
      Tensor& dx = g.grad(x);
      for (int c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < plane; ++i) dx[c * plane + i] += dy[c * plane + i] * G[c];
      }
    }
    if (g.needs_grad(gate)) {
      Tensor& dg = g.grad(gate);
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += dy[c * plane + i] * X[c * plane + i];
        dg[static_cast<std::size_t>(c)] += s;
      }
    }
  });
}

Var global_avg_pool(Graph& g, Var x) {
  const Tensor& X = g.value(x);
  expect(X.shape.size() == 3, "global_avg_pool expects [C,H,W]");
  const int C = X.dim(0);
  const std::size_t plane = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += X[c * plane + i];
    out[static_cast<std::size_t>(c)] = s / static_cast<double>(plane);
  }
  return g.record(std::move(out), {x}, [x, C, plane](Graph& g, const Tensor& dy) {
    Tensor& dx = g.grad(x);
    for (int c = 0; c < C; ++c) {
      const double v = dy[static_cast<std::size_t>(c)] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) dx[c * plane + i] += v;
    }
  });
}

Var weighted_sum(Graph& g, const std::vector<Var>& scalars, const std::vector<double>& weights) {
  expect(scalars.size() == weights.size(), "weighted_sum arity");
  double s = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) s += weights[i] * g.scalar(scalars[i]);
  return g.record(Tensor({1}, s), scalars, [scalars, weights](Graph& g, const Tensor& dy) {
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      if (g.needs_grad(scalars[i])) g.grad(scalars[i])[0] += weights[i] * dy[0];
    }
  });
}

Var masked_mse(Graph& g, Var pred, const std::vector<double>& target,
               const std::vector<std::uint8_t>& mask) {
  const Tensor& P = g.value(pred);
  expect(P.size() == target.size() && P.size() == mask.size(), "masked_mse size mismatch");
  std::size_t n = 0;
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (!mask[i]) continue;
    const double d = P[i] - target[i];
    s += d * d;
    ++n;
  }
  require(n > 0, ErrorCode::kValidation, "reconstruction loss over zero valid cells");
  const double inv = 1.0 / static_cast<double>(n);
  auto tgt = std::make_shared<std::vector<double>>(target);
  auto msk = std::make_shared<std::vector<std::uint8_t>>(mask);
  return g.record(Tensor({1}, s * inv), {pred}, [pred, tgt, msk, inv](Graph& g, const Tensor& dy) {
    const Tensor& P = g.value(pred);
    Tensor& dp = g.grad(pred);
    for (std::size_t i = 0; i < P.size(); ++i) {
      if ((*msk)[i]) dp[i] += 2.0 * (P[i] - (*tgt)[i]) * inv * dy[0];
    }
  });
}

Var dice_loss(Graph& g, Var prob, const std::vector<double>& target, double eps) {
  const Tensor& P = g.value(prob);
  expect(P.size() == target.size(), "dice size mismatch");
  double sp = 0, st = 0, inter = 0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    sp += P[i];
    st += target[i];
    inter += P[i] * target[i];
  }
  const double den = sp + st + eps;
  const double num = 2.0 * inter + eps;
  auto tgt = std::make_shared<std::vector<double>>(target);
  return g.record(Tensor({1}, 1.0 - num / den), {prob}, [prob, tgt, num, den](Graph& g, const Tensor& dy) {
    Tensor& dp = g.grad(prob);
    for (std::size_t i = 0; i < dp.size(); ++i) {
      dp[i] += -(2.0 * (*tgt)[i] * den - num) / (den * den) * dy[0];
    }
  });
}

Var triplet_loss(Graph& g, Var anchor, Var positive, Var negative, double margin) {
  const Tensor& A = g.value(anchor);
  const Tensor& P = g.value(positive);
  const Tensor& N = g.value(negative);
  expect(A.size() == P.size() && A.size() == N.size(), "triplet length mismatch");
  double dp = 0, dn = 0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    dp += (A[i] - P[i]) * (A[i] - P[i]);
    dn += (A[i] - N[i]) * (A[i] - N[i]);
  }
  const double loss = std::max(0.0, dp - dn + margin);
  const bool active = dp - dn + margin > 0.0;
  return g.record(Tensor({1}, loss), {anchor, positive, negative},
                  [anchor, positive, negative, active](Graph& g, const Tensor& dy) {
    if (!active) return;
    const Tensor& A = g.value(anchor);
    const Tensor& P = g.value(positive);
    const Tensor& N = g.value(negative);
    const double s = dy[0];
    if (g.needs_grad(anchor)) {
      Tensor& d = g.grad(anchor);
      for (std::size_t i = 0; i < A.size(); ++i) d[i] += s * 2.0 * (N[i] - P[i]);
    }
    if (g.needs_grad(positive)) {
      Tensor& d = g.grad(positive);
      for (std::size_t i = 0; i < A.size(); ++i) d[i] += s * -2.0 * (A[i] - P[i]);
    }
    if (g.needs_grad(negative)) {
      Tensor& d = g.grad(negative);
      for (std::size_t i = 0; i < A.size(); ++i) d[i] += s * 2.0 * (A[i] - N[i]);
    }
  });
}

Var npair_loss(Graph& g, Var anchor, Var positive, const std::vector<Var>& negatives) {
  require(!negatives.empty(), ErrorCode::kValidation, "n-pair loss needs at least one negative");
  const Tensor& A = g.value(anchor);
  const Tensor& P = g.value(positive);
  expect(A.size() == P.size(), "n-pair length mismatch");
  const auto dot = [](const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const double sp = dot(A, P);
  std::vector<double> u;
  double m = 0.0;
  for (Var n : negatives) {
    expect(g.value(n).size() == A.size(), "n-pair negative length mismatch");
    u.push_back(dot(A, g.value(n)) - sp);
    m = std::max(m, u.back());
  }
  double z = std::exp(-m);
  for (double ui : u) z += std::exp(ui - m);
  const double loss = m + std::log(z);
  auto w = std::make_shared<std::vector<double>>();
  for (double ui : u) w->push_back(std::exp(ui - m) / z);
  std::vector<Var> inputs{anchor, positive};
  inputs.insert(inputs.end(), negatives.begin(), negatives.end());
  return g.record(Tensor({1}, loss), inputs, [anchor, positive, negatives, w](Graph& g, const Tensor& dy) {
    const Tensor& A = g.value(anchor);
    const Tensor& P = g.value(positive);
    const double s = dy[0];
    double wsum = 0;
    for (double wi : *w) wsum += wi;
    if (g.needs_grad(anchor)) {
      Tensor& d = g.grad(anchor);
      for (std::size_t k = 0; k < negatives.size(); ++k) {
        const Tensor& N = g.value(negatives[k]);
        for (std::size_t i = 0; i < A.size(); ++i) d[i] += s * (*w)[k] * (N[i] - P[i]);
      }
    }
    if (g.needs_grad(positive)) {
      Tensor& d = g.grad(positive);
      for (std::size_t i = 0; i < A.size(); ++i) d[i] -= s * wsum * A[i];
    }
    for (std::size_t k = 0; k < negatives.size(); ++k) {
      if (!g.needs_grad(negatives[k])) continue;
      Tensor& d = g.grad(negatives[k]);
      for (std::size_t i = 0; i < A.size(); ++i) d[i] += s * (*w)[k] * A[i];
    }
  });
}

Var bce(Graph& g, Var prob, double label) {
  const double p = g.value(prob).data.at(0);
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double loss = -(label * std::log(pc) + (1.0 - label) * std::log(1.0 - pc));
  const bool inside = p > kProbClamp && p < 1.0 - kProbClamp;
  return g.record(Tensor({1}, loss), {prob}, [prob, label, pc, inside](Graph& g, const Tensor& dy) {
    if (!inside) return;
    g.grad(prob)[0] += dy[0] * (-label / pc + (1.0 - label) / (1.0 - pc));
  });
}

Var weighted_bce_map(Graph& g, Var prob, const std::vector<double>& labels,
                     const std::vector<double>& weights, const std::vector<std::uint8_t>& mask) {
  const Tensor& P = g.value(prob);
  expect(P.size() == labels.size() && P.size() == weights.size() && P.size() == mask.size(),
         "weighted_bce_map size mismatch");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (!mask[i]) continue;
    const double pc = std::clamp(P[i], kProbClamp, 1.0 - kProbClamp);
    s += weights[i] * -(labels[i] * std::log(pc) + (1.0 - labels[i]) * std::log(1.0 - pc));
    ++n;
  }
  require(n > 0, ErrorCode::kValidation, "classification loss over zero valid cells");
  const double inv = 1.0 / static_cast<double>(n);
  auto lab = std::make_shared<std::vector<double>>(labels);
  auto wts = std::make_shared<std::vector<double>>(weights);
  auto msk = std::make_shared<std::vector<std::uint8_t>>(mask);
  return g.record(Tensor({1}, s * inv), {prob}, [prob, lab, wts, msk, inv](Graph& g, const Tensor& dy) {
    const Tensor& P = g.value(prob);
    Tensor& dp = g.grad(prob);
    for (std::size_t i = 0; i < P.size(); ++i) {
      if (!(*msk)[i] || P[i] <= kProbClamp || P[i] >= 1.0 - kProbClamp) continue;
      const double y = (*lab)[i];
      dp[i] += dy[0] * inv * (*wts)[i] * (-y / P[i] + (1.0 - y) / (1.0 - P[i]));
    }
  });
}

Var mmd(Graph& g, const std::vector<Var>& a, const std::vector<Var>& b,
        const std::vector<double>& bandwidths) {
  require(!a.empty() && !b.empty(), ErrorCode::kValidation, "mmd needs two non-empty sets");
  require(!bandwidths.empty(), ErrorCode::kValidation, "mmd needs at least one bandwidth");
  for (double s : bandwidths) require(s > 0, ErrorCode::kValidation, "mmd bandwidth must be > 0");
  std::vector<Var> all(a);
  all.insert(all.end(), b.begin(), b.end());
  const std::size_t na = a.size(), n = all.size();
  const std::size_t D = g.value(all[0]).size();
  for (Var v : all) expect(g.value(v).size() == D, "mmd code length mismatch");
  // Coefficient of k(i,j) in the estimator.
  const auto coef = [na, nb = b.size()](std::size_t i, std::size_t j) {
    const bool ia = i < na, ja = j < na;
    if (ia && ja) return 1.0 / static_cast<double>(na * na);
    if (!ia && !ja) return 1.0 / static_cast<double>(nb * nb);
    return -1.0 / static_cast<double>(na * nb);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& X = g.value(all[i]);
    for (std::size_t j = 0; j < n; ++j) {
      const Tensor& Y = g.value(all[j]);
      double d2 = 0;
      for (std::size_t t = 0; t < D; ++t) d2 += (X[t] - Y[t]) * (X[t] - Y[t]);
      double k = 0;
      for (double s : bandwidths) k += std::exp(-d2 / (2 * s * s));
      total += coef(i, j) * k;
    }
  }
  return g.record(Tensor({1}, total), all, [all, n, D, coef, bandwidths](Graph& g, const Tensor& dy) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!g.needs_grad(all[i])) continue;
      const Tensor& X = g.value(all[i]);
      Tensor& dx = g.grad(all[i]);
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const Tensor& Y = g.value(all[j]);
        double d2 = 0;
        for (std::size_t t = 0; t < D; ++t) d2 += (X[t] - Y[t]) * (X[t] - Y[t]);
        double dk = 0;  // d k / d(d2)
        for (double s : bandwidths) dk += -std::exp(-d2 / (2 * s * s)) / (2 * s * s);
        // k(i,j) and k(j,i) both depend on x_i.
        const double c = 2.0 * coef(i, j) * dk * dy[0];
        for (std::size_t t = 0; t < D; ++t) dx[t] += c * 2.0 * (X[t] - Y[t]);
      }
    }
  });
}

Adam::Adam(const ParamSet& params, AdamConfig cfg)
    : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {}

void Adam::step(ParamSet& params, const ParamSet& grads, double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.count(); ++p) {
    Tensor& w = params.value(p);
    const Tensor& gr = grads.value(p);
    Tensor& m = m_.value(p);
    Tensor& v = v_.value(p);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = gr[i] * grad_scale + cfg_.weight_decay * w[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng, double gain) {
  Tensor t(std::move(shape));
  const double bound = gain * std::sqrt(6.0 / std::max(1, fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace slack::nn
