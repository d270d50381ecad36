#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "laneflow/tensor.hpp"

namespace laneflow::ad {

/// Handle to a node on a Tape.
struct Value {
  std::uint32_t idx = UINT32_MAX;
  bool valid() const { return idx != UINT32_MAX; }
};

using MaskRef = std::shared_ptr<const Tensor>;

enum class Op : std::uint8_t {
  Input,
  MatMul,
  Transpose,
  Add,
  AddRow,
  Mul,
  Scale,
  Shift,
  Concat,
  SliceRows,
  Relu,
  LeakyRelu,
  Sigmoid,
  Tanh,
  OuterAdd,
  MaskedSoftmax,
  LayerNorm,
  ReduceMean,
  Huber,
};

/// Reverse-mode tape over dense tensors. Every op records one node; backward
/// walks the nodes in reverse creation order, which is a valid reverse
/// topological order by construction.
class Tape {
 public:
  struct Node {
    Op op;
    std::uint32_t a = UINT32_MAX;
    std::uint32_t b = UINT32_MAX;
    std::uint32_t c = UINT32_MAX;
    std::vector<std::uint32_t> many;  // Concat only
    double x = 0.0;                   // scalar payload: slope / factor / delta / epsilon
    double x2 = 0.0;                  // secondary payload (e.g. unmasked count)
    int axis = 0;
    std::int64_t i0 = 0, i1 = 0;  // SliceRows range
    MaskRef aux;                  // mask or target
    MaskRef aux2;                 // mask for Huber
    Tensor value;
    Tensor grad;  // lazily allocated during backward
  };

  Tape() { nodes_.reserve(1024); }

  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(Value v) const { return nodes_[v.idx].value; }

  /// Gradient of the last backward() target w.r.t. v. Empty tensor means the
  /// value was not reached by any gradient path (i.e. the gradient is zero).
  const Tensor& grad(Value v) const { return nodes_[v.idx].grad; }

  Tensor grad_or_zero(Value v) const {
    const Node& n = nodes_[v.idx];
    return n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad;
  }

  Value input(Tensor t) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(t);
    return push(std::move(n));
  }

  Value matmul(Value a, Value b) {
    Node n;
    n.op = Op::MatMul;
    n.a = a.idx;
    n.b = b.idx;
    n.value = tensor_ops::matmul(value(a), value(b));
    return push(std::move(n));
  }

  Value transpose(Value a) {
    Node n;
    n.op = Op::Transpose;
    n.a = a.idx;
    n.value = tensor_ops::transpose(value(a));
    return push(std::move(n));
  }

  Value add(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "add: shape mismatch ", Tensor::shape_string(ta.shape()), " vs ",
            Tensor::shape_string(tb.shape()));
    Node n;
    n.op = Op::Add;
    n.a = a.idx;
    n.b = b.idx;
    n.value = ta;
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] += tb[i];
    return push(std::move(n));
  }

  /// a (R x C) + row vector b (C or 1 x C), broadcast over rows.
  Value add_row(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(tb.rows() == 1 && tb.cols() == ta.cols(), "add_row: shape mismatch ",
            Tensor::shape_string(ta.shape()), " vs ", Tensor::shape_string(tb.shape()));
    Node n;
    n.op = Op::AddRow;
    n.a = a.idx;
    n.b = b.idx;
    n.value = ta;
    std::size_t R = ta.rows(), C = ta.cols();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) n.value[r * C + c] += tb[c];
    return push(std::move(n));
  }

  Value mul(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "mul: shape mismatch ", Tensor::shape_string(ta.shape()), " vs ",
            Tensor::shape_string(tb.shape()));
    Node n;
    n.op = Op::Mul;
    n.a = a.idx;
    n.b = b.idx;
    n.value = ta;
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] *= tb[i];
    return push(std::move(n));
  }

  Value scale(Value a, double f) {
    Node n;
    n.op = Op::Scale;
    n.a = a.idx;
    n.x = f;
    n.value = value(a);
    for (double& v : n.value.values()) v *= f;
    return push(std::move(n));
  }

  Value shift(Value a, double f) {
    Node n;
    n.op = Op::Shift;
    n.a = a.idx;
    n.x = f;
    n.value = value(a);
    for (double& v : n.value.values()) v += f;
    return push(std::move(n));
  }

  /// Concatenates rank-2 tensors along axis 0 (rows) or 1 (columns).
  Value concat(std::span<const Value> parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
    std::size_t R = value(parts[0]).rows();
    std::size_t C = value(parts[0]).cols();
    std::size_t total = 0;
    for (Value p : parts) {
      const Tensor& t = value(p);
      if (axis == 0) {
        require(t.cols() == C, "concat: column mismatch");
        total += t.rows();
      } else {
        require(t.rows() == R, "concat: row mismatch");
        total += t.cols();
      }
    }
    Node n;
    n.op = Op::Concat;
    n.axis = axis;
    n.many.reserve(parts.size());
    for (Value p : parts) n.many.push_back(p.idx);
    if (axis == 0) {
      n.value = Tensor({total, C});
      std::size_t r0 = 0;
      for (Value p : parts) {
        const Tensor& t = value(p);
        std::copy(t.data(), t.data() + t.numel(), n.value.data() + r0 * C);
        r0 += t.rows();
      }
    } else {
      n.value = Tensor({R, total});
      std::size_t c0 = 0;
      for (Value p : parts) {
        const Tensor& t = value(p);
        for (std::size_t r = 0; r < R; ++r)
          std::copy(t.data() + r * t.cols(), t.data() + (r + 1) * t.cols(),
                    n.value.data() + r * total + c0);
        c0 += t.cols();
      }
    }
    return push(std::move(n));
  }

  Value concat(std::initializer_list<Value> parts, int axis) {
    return concat(std::span<const Value>(parts.begin(), parts.size()), axis);
  }

  /// Rows [i0, i1) of a rank-2 tensor.
  Value slice_rows(Value a, std::size_t r0, std::size_t r1) {
    const Tensor& ta = value(a);
    require(r0 < r1 && r1 <= ta.rows(), "slice_rows: bad range [", r0, ",", r1, ") for ",
            Tensor::shape_string(ta.shape()));
    Node n;
    n.op = Op::SliceRows;
    n.a = a.idx;
    n.i0 = static_cast<std::int64_t>(r0);
    n.i1 = static_cast<std::int64_t>(r1);
    std::size_t C = ta.cols();
    n.value = Tensor({r1 - r0, C});
    std::copy(ta.data() + r0 * C, ta.data() + r1 * C, n.value.data());
    return push(std::move(n));
  }

  Value relu(Value a) {
    Node n;
    n.op = Op::Relu;
    n.a = a.idx;
    n.value = value(a);
    for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
  }

  Value leaky_relu(Value a, double slope) {
    Node n;
    n.op = Op::LeakyRelu;
    n.a = a.idx;
    n.x = slope;
    n.value = value(a);
    for (double& v : n.value.values()) v = v >= 0.0 ? v : slope * v;
    return push(std::move(n));
  }

  Value sigmoid(Value a) {
    Node n;
    n.op = Op::Sigmoid;
    n.a = a.idx;
    n.value = value(a);
    for (double& v : n.value.values()) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(n));
  }

  Value tanh_(Value a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a.idx;
    n.value = value(a);
    for (double& v : n.value.values()) v = std::tanh(v);
    return push(std::move(n));
  }

  /// out[i][j] = a[i] + b[j] for column vectors a (n x 1) and b (m x 1).
  Value outer_add(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.cols() == 1 && tb.cols() == 1, "outer_add: column vectors required");
    Node n;
    n.op = Op::OuterAdd;
    n.a = a.idx;
    n.b = b.idx;
    std::size_t R = ta.rows(), C = tb.rows();
    n.value = Tensor({R, C});
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) n.value[i * C + j] = ta[i] + tb[j];
    return push(std::move(n));
  }

  /// Softmax over unmasked entries along `axis` (1 = within each row,
  /// 0 = within each column). Masked entries are exactly 0 in the output;
  /// slices with no unmasked entry come out all-zero.
  Value masked_softmax(Value scores, MaskRef mask, int axis) {
    const Tensor& ts = value(scores);
    require(mask && mask->same_shape(ts), "masked_softmax: mask shape mismatch");
    require(axis == 0 || axis == 1, "masked_softmax: axis must be 0 or 1");
    Node n;
    n.op = Op::MaskedSoftmax;
    n.a = scores.idx;
    n.axis = axis;
    n.aux = std::move(mask);
    std::size_t R = ts.rows(), C = ts.cols();
    n.value = Tensor({R, C});
    const Tensor& m = *n.aux;
    std::size_t outer = (axis == 1) ? R : C;
    std::size_t inner = (axis == 1) ? C : R;
    for (std::size_t o = 0; o < outer; ++o) {
      auto at = [&](std::size_t i) -> std::size_t { return axis == 1 ? o * C + i : i * C + o; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < inner; ++i)
        if (m[at(i)] != 0.0) mx = std::max(mx, ts[at(i)]);
      if (!std::isfinite(mx)) continue;  // fully masked slice stays zero
      double sum = 0.0;
      for (std::size_t i = 0; i < inner; ++i)
        if (m[at(i)] != 0.0) sum += std::exp(ts[at(i)] - mx);
      for (std::size_t i = 0; i < inner; ++i)
        if (m[at(i)] != 0.0) n.value[at(i)] = std::exp(ts[at(i)] - mx) / sum;
    }
    return push(std::move(n));
  }

  /// Per-row standardization of x (R x C) followed by out = xhat * gain + bias.
  Value layer_norm(Value x, Value gain, Value bias, double eps) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gain);
    const Tensor& tb = value(bias);
    std::size_t C = tx.cols();
    require(tg.numel() == C && tb.numel() == C, "layer_norm: gain/bias must have ", C,
            " elements");
    Node n;
    n.op = Op::LayerNorm;
    n.a = x.idx;
    n.b = gain.idx;
    n.c = bias.idx;
    n.x = eps;
    std::size_t R = tx.rows();
    n.value = Tensor({R, C});
    for (std::size_t r = 0; r < R; ++r) {
      const double* row = tx.data() + r * C;
      double mean = 0.0;
      for (std::size_t c = 0; c < C; ++c) mean += row[c];
      mean /= static_cast<double>(C);
      double var = 0.0;
      for (std::size_t c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
      var /= static_cast<double>(C);
      double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t c = 0; c < C; ++c)
        n.value[r * C + c] = (row[c] - mean) * inv * tg[c] + tb[c];
    }
    return push(std::move(n));
  }

  Value reduce_mean(Value a) {
    const Tensor& ta = value(a);
    require(ta.numel() > 0, "reduce_mean: empty tensor");
    Node n;
    n.op = Op::ReduceMean;
    n.a = a.idx;
    double s = 0.0;
    for (double v : ta.values()) s += v;
    n.value = Tensor::scalar(s / static_cast<double>(ta.numel()));
    return push(std::move(n));
  }

  /// Mean Huber loss over unmasked elements; exactly 0 (with zero gradient)
  /// when everything is masked.
  Value huber(Value pred, MaskRef target, MaskRef mask, double delta) {
    const Tensor& tp = value(pred);
    require(target && target->same_shape(tp), "huber: target shape mismatch");
    require(mask && mask->same_shape(tp), "huber: mask shape mismatch");
    Node n;
    n.op = Op::Huber;
    n.a = pred.idx;
    n.x = delta;
    n.aux = std::move(target);
    n.aux2 = std::move(mask);
    double count = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < tp.numel(); ++i) {
      if ((*n.aux2)[i] == 0.0) continue;
      count += 1.0;
      double e = tp[i] - (*n.aux)[i];
      double ae = std::abs(e);
      sum += ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
    }
    n.x2 = count;
    n.value = Tensor::scalar(count > 0.0 ? sum / count : 0.0);
    return push(std::move(n));
  }

  /// Number of unmasked elements seen by a Huber node.
  double huber_count(Value huber_node) const {
    const Node& n = nodes_[huber_node.idx];
    require(n.op == Op::Huber, "huber_count: not a Huber node");
    return n.x2;
  }

  /// Reverse-mode sweep from a scalar node. A second call without recording
  /// new operations is rejected.
  void backward(Value root) {
    const Tensor& out = value(root);
    require(out.numel() == 1, "backward: output must be scalar, got ",
            Tensor::shape_string(out.shape()));
    require(!backward_done_, "backward: repeated call without a new forward pass");
    backward_done_ = true;
    for (auto& n : nodes_) n.grad = Tensor();
    nodes_[root.idx].grad = Tensor::scalar(1.0);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      backward_node(n);
    }
  }

 private:
  Value push(Node n) {
    backward_done_ = false;
    nodes_.push_back(std::move(n));
    return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Tensor& grad_buffer(std::uint32_t idx) {
    Node& n = nodes_[idx];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }

  void backward_node(Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::MatMul: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        grad_buffer(n.a).mat().noalias() += g.mat() * B.mat().transpose();
        grad_buffer(n.b).mat().noalias() += A.mat().transpose() * g.mat();
        break;
      }
      case Op::Transpose:
        grad_buffer(n.a).mat() += g.mat().transpose();
        break;
      case Op::Add: {
        Tensor& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        Tensor& gb = grad_buffer(n.b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        break;
      }
      case Op::AddRow: {
        Tensor& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        Tensor& gb = grad_buffer(n.b);
        std::size_t R = g.rows(), C = g.cols();
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
        break;
      }
      case Op::Mul: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        Tensor& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * B[i];
        Tensor& gb = grad_buffer(n.b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * A[i];
        break;
      }
      case Op::Scale: {
        Tensor& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.x;
        break;
      }
      case Op::Shift: {
        Tensor& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        break;
      }
      case Op::Concat: {
        if (n.axis == 0) {
          std::size_t C = g.cols(), r0 = 0;
          for (std::uint32_t p : n.many) {
            Tensor& gp = grad_buffer(p);
            std::size_t R = nodes_[p].value.rows();
            for (std::size_t i = 0; i < R * C; ++i) gp[i] += g[r0 * C + i];
            r0 += R;
          }
        } else {
          std::size_t R = g.rows(), total = g.cols(), c0 = 0;
          for (std::uint32_t p : n.many) {
            Tensor& gp = grad_buffer(p);
            std::size_t C = nodes_[p].value.cols();
            for (std::size_t r = 0; r < R; ++r)
              for (std::size_t c = 0; c < C; ++c) gp[r * C + c] += g[r * total + c0 + c];
            c0 += C;
          }
        }
        break;
      }
      case Op::SliceRows: {
        Tensor& ga = grad_buffer(n.a);
        std::size_t C = ga.cols();
        std::size_t off = static_cast<std::size_t>(n.i0) * C;
        for (std::size_t i = 0; i < g.numel(); ++i) ga[off + i] += g[i];
        break;
      }
      case Op::Relu: {
        Tensor& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += n.value[i] > 0.0 ? g[i] : 0.0;
        break;
      }
      case Op::LeakyRelu: {
        // output sign determines the branch; at exactly 0 use the positive
        // side (slope 1).
        Tensor& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga[i] += n.value[i] >= 0.0 ? g[i] : g[i] * n.x;
        break;
      }
      case Op::Sigmoid: {
        Tensor& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case Op::Tanh: {
        Tensor& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case Op::OuterAdd: {
        Tensor& ga = grad_buffer(n.a);
        Tensor& gb = grad_buffer(n.b);
        std::size_t R = g.rows(), C = g.cols();
        for (std::size_t i = 0; i < R; ++i)
          for (std::size_t j = 0; j < C; ++j) {
            ga[i] += g[i * C + j];
            gb[j] += g[i * C + j];
          }
        break;
      }
      case Op::MaskedSoftmax: {
        // d score = y * (g - sum(g * y)) per slice; masked entries have y = 0.
        Tensor& ga = grad_buffer(n.a);
        std::size_t R = g.rows(), C = g.cols();
        std::size_t outer = (n.axis == 1) ? R : C;
        std::size_t inner = (n.axis == 1) ? C : R;
        for (std::size_t o = 0; o < outer; ++o) {
          auto at = [&](std::size_t i) -> std::size_t {
            return n.axis == 1 ? o * C + i : i * C + o;
          };
          double dot = 0.0;
          for (std::size_t i = 0; i < inner; ++i) dot += g[at(i)] * n.value[at(i)];
          for (std::size_t i = 0; i < inner; ++i)
            ga[at(i)] += n.value[at(i)] * (g[at(i)] - dot);
        }
        break;
      }
      case Op::LayerNorm: {
        const Tensor& X = nodes_[n.a].value;
        const Tensor& G = nodes_[n.b].value;
        Tensor& gx = grad_buffer(n.a);
        Tensor& gg = grad_buffer(n.b);
        Tensor& gb = grad_buffer(n.c);
        std::size_t R = X.rows(), C = X.cols();
        std::vector<double> xhat(C), dxhat(C);
        for (std::size_t r = 0; r < R; ++r) {
          const double* row = X.data() + r * C;
          const double* gr = g.data() + r * C;
          double mean = 0.0;
          for (std::size_t c = 0; c < C; ++c) mean += row[c];
          mean /= static_cast<double>(C);
          double var = 0.0;
          for (std::size_t c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
          var /= static_cast<double>(C);
          double inv = 1.0 / std::sqrt(var + n.x);
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            xhat[c] = (row[c] - mean) * inv;
            dxhat[c] = gr[c] * G[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xhat[c];
          }
          m1 /= static_cast<double>(C);
          m2 /= static_cast<double>(C);
          for (std::size_t c = 0; c < C; ++c) {
            gx[r * C + c] += (dxhat[c] - m1 - xhat[c] * m2) * inv;
            gg[c] += gr[c] * xhat[c];
            gb[c] += gr[c];
          }
        }
        break;
      }
      case Op::ReduceMean: {
        Tensor& ga = grad_buffer(n.a);
        double f = g[0] / static_cast<double>(ga.numel());
        for (double& v : ga.values()) v += f;
        break;
      }
      case Op::Huber: {
        if (n.x2 <= 0.0) break;
        const Tensor& P = nodes_[n.a].value;
        Tensor& ga = grad_buffer(n.a);
        double f = g[0] / n.x2;
        for (std::size_t i = 0; i < P.numel(); ++i) {
          if ((*n.aux2)[i] == 0.0) continue;
          double e = P[i] - (*n.aux)[i];
          double d = std::abs(e) <= n.x ? e : (e > 0.0 ? n.x : -n.x);
          ga[i] += f * d;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Named, ordered collection of learnable tensors. Insertion order defines
/// the optimization and serialization order.
class ParamStore {
 public:
  std::size_t add(const std::string& name, Tensor t) {
    require(index_.find(name) == index_.end(), "param store: duplicate name ", name);
    index_.emplace(name, names_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    return names_.size() - 1;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "param store: unknown name ", name);
    return tensors_[it->second];
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "param store: unknown name ", name);
    return tensors_[it->second];
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "param store: unknown name ", name);
    return it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient accumulator shaped like a ParamStore.
class GradBuffer {
 public:
  explicit GradBuffer(const ParamStore& store) {
    grads_.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i)
      grads_.push_back(Tensor::zeros(store.tensor(i).shape()));
  }

  void zero() {
    for (auto& g : grads_) std::fill(g.values().begin(), g.values().end(), 0.0);
  }

  /// Adds `weight` times the tape gradients of `bound` values (one per param,
  /// in store order).
  void accumulate(const Tape& tape, const std::vector<Value>& bound, double weight) {
    require(bound.size() == grads_.size(), "grad buffer: binding size mismatch");
    for (std::size_t i = 0; i < bound.size(); ++i) {
      const Tensor& g = tape.grad(bound[i]);
      if (g.empty()) continue;
      Tensor& acc = grads_[i];
      for (std::size_t k = 0; k < acc.numel(); ++k) acc[k] += weight * g[k];
    }
  }

  std::size_t size() const { return grads_.size(); }
  Tensor& tensor(std::size_t i) { return grads_[i]; }
  const Tensor& tensor(std::size_t i) const { return grads_[i]; }

 private:
  std::vector<Tensor> grads_;
};

/// Binds every parameter of a store onto a tape as input leaves, in store
/// order. The returned handles are used both to build the model forward and
/// to read out gradients afterwards.
inline std::vector<Value> bind_params(Tape& tape, const ParamStore& store) {
  std::vector<Value> out;
  out.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back(tape.input(store.tensor(i)));
  return out;
}

/// Parameters of a store bound onto a tape, addressable by name.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamStore& store)
      : store_(&store), values_(bind_params(tape, store)) {}

  /// Wraps externally created values (e.g. finite-difference probes); they
  /// must follow the store's order.
  BoundParams(const ParamStore& store, std::vector<Value> values)
      : store_(&store), values_(std::move(values)) {
    require(values_.size() == store.size(), "bound params: value count mismatch");
  }

  Value operator[](const std::string& name) const { return values_[store_->index_of(name)]; }

  const std::vector<Value>& all() const { return values_; }
  const ParamStore& store() const { return *store_; }

 private:
  const ParamStore* store_;
  std::vector<Value> values_;
};

/// Adam optimizer state. Defaults follow the Keras convention.
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::uint64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  explicit AdamState(const ParamStore& store, double lr = 1e-3) : learning_rate(lr) {
    m.reserve(store.size());
    v.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      m.push_back(Tensor::zeros(store.tensor(i).shape()));
      v.push_back(Tensor::zeros(store.tensor(i).shape()));
    }
  }
};

/// One Adam update with bias correction. Non-finite gradients abort with the
/// offending parameter named.
inline void adam_step(ParamStore& params, const GradBuffer& grads, AdamState& state) {
  require(grads.size() == params.size() && state.m.size() == params.size(),
          "adam_step: size mismatch");
  state.t += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = grads.tensor(i);
    Tensor& p = params.tensor(i);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t k = 0; k < p.numel(); ++k) {
      double gk = g[k];
      if (!std::isfinite(gk))
        fail("adam_step: non-finite gradient in parameter '", params.name(i), "' at index ", k);
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      p[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

/// Scalar-valued function of several tensors, built on a fresh tape per call.
using ScalarFn = std::function<Value(Tape&, const std::vector<Value>&)>;

/// Central-finite-difference check of reverse-mode gradients. Returns the
/// worst relative error across all input coordinates.
inline double grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                         double epsilon = 1e-5) {
  Tape tape;
  std::vector<Value> vals;
  vals.reserve(inputs.size());
  for (const auto& in : inputs) vals.push_back(tape.input(in));
  Value out = fn(tape, vals);
  require(tape.value(out).numel() == 1, "grad_check: function must be scalar-valued");
  tape.backward(out);
  std::vector<Tensor> analytic;
  analytic.reserve(inputs.size());
  for (Value v : vals) analytic.push_back(tape.grad_or_zero(v));

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Value> vs;
    vs.reserve(xs.size());
    for (const auto& x : xs) vs.push_back(t.input(x));
    return t.value(fn(t, vs))[0];
  };

  double worst = 0.0;
  std::vector<Tensor> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
      double orig = work[i][k];
      work[i][k] = orig + epsilon;
      double fp = eval(work);
      work[i][k] = orig - epsilon;
      double fm = eval(work);
      work[i][k] = orig;
      double numeric = (fp - fm) / (2.0 * epsilon);
      double a = analytic[i][k];
      double scale = std::max({std::abs(a), std::abs(numeric), 1e-4});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  }
  return worst;
}

}  // namespace laneflow::ad
