#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctam/errors.hpp"
#include "ctam/rng.hpp"

namespace ctam {

namespace detail {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace detail

class Tape;

// Dense row-major double tensor of rank 1..4. A Tensor is a handle: copies
// share storage, ops allocate fresh outputs and never write into their
// inputs. The gradient buffer exists iff requires_grad is set; backward
// passes accumulate into it with +=.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad);
  }

  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false) {
    Tensor t(std::move(shape), {}, requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), value);
    return t;
  }

  static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false) {
    Tensor t(std::move(shape), std::move(values), requires_grad);
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->value.size(); }
  int dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  const std::vector<double>& values() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) {
      node_->grad.assign(node_->value.size(), 0.0);
    } else {
      node_->grad.clear();
      node_->grad.shrink_to_fit();
    }
  }

  // The gradient buffer is shared mutable state written during backward, so
  // it stays writable through const handles (shared_ptr semantics).
  double* grad_data() const { return node_->grad.data(); }
  const std::vector<double>& grad() const { return node_->grad; }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  // Deep copy of the values into a fresh node; gradients are not carried over.
  Tensor clone(bool requires_grad = false) const {
    return from_data(node_->shape, node_->value, requires_grad);
  }

  double item() const {
    detail::require(size() == 1, "item: tensor has " + std::to_string(size()) +
                                     " elements, expected exactly 1");
    return node_->value[0];
  }

  bool same_shape(const Tensor& other) const { return node_->shape == other.node_->shape; }

  // Autodiff bookkeeping: which tape (if any) recorded this tensor.
  const Tape* producer() const { return node_->producer; }
  void set_producer(const Tape* tape) { node_->producer = tape; }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const Tape* producer = nullptr;
  };

  Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    detail::require(!shape.empty() && shape.size() <= 4,
                    "tensor rank must be 1..4, got " + std::to_string(shape.size()));
    std::size_t count = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      detail::require(shape[i] >= 1, "tensor axis " + std::to_string(i) +
                                         " must be positive, got " + std::to_string(shape[i]));
      count *= static_cast<std::size_t>(shape[i]);
    }
    if (values.empty()) values.assign(count, 0.0);
    detail::require(values.size() == count,
                    "tensor data length " + std::to_string(values.size()) +
                        " does not match shape " + detail::shape_str(shape));
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    if (requires_grad) {
      node_->requires_grad = true;
      node_->grad.assign(count, 0.0);
    }
  }

  std::shared_ptr<Node> node_;
};

// Seeded uniform init in [-s, s] with s = 1/sqrt(fan_in).
inline Tensor uniform_init(std::mt19937_64& rng, std::vector<int> shape, int fan_in,
                           bool requires_grad = true) {
  detail::require(fan_in >= 1, "uniform_init: fan_in must be positive");
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = uniform_pm(rng, s);
  return t;
}

// Recording of one forward pass for reverse-mode differentiation. Single
// owner, single use: backward() replays the steps in reverse and clears
// the tape, so a second backward without re-recording is an error.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  std::size_t size() const { return steps_.size(); }
  bool empty() const { return steps_.empty(); }
  void clear() { steps_.clear(); }

 private:
  friend void backward(Tensor loss, Tape& tape);
  std::vector<std::function<void()>> steps_;
};

// Propagates d(loss)/d(leaf) into every requires_grad tensor reachable from
// the loss, then clears the tape.
inline void backward(Tensor loss, Tape& tape) {
  detail::require(loss.defined() && loss.size() == 1,
                  "backward: loss must be a scalar tensor");
  detail::require(loss.producer() == &tape,
                  "backward: loss is detached from this tape; record the forward pass first");
  detail::require(!tape.empty(),
                  "backward: tape already consumed; re-record the forward pass");
  if (loss.requires_grad()) {
    loss.grad_data()[0] = 1.0;
    for (auto it = tape.steps_.rbegin(); it != tape.steps_.rend(); ++it) (*it)();
  }
  tape.clear();
}

namespace detail {

inline bool track(const Tape* tape, const Tensor& a) {
  return tape != nullptr && a.requires_grad();
}
inline bool track(const Tape* tape, const Tensor& a, const Tensor& b) {
  return tape != nullptr && (a.requires_grad() || b.requires_grad());
}

inline void mark_output(Tensor& out, Tape* tape) {
  out.set_requires_grad(true);
  out.set_producer(tape);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations. Every op validates shapes up front, computes the
// forward value, and (when a tape is supplied and some input is tracked)
// records a closure implementing its backward rule.
// ---------------------------------------------------------------------------

// 2-D cross-correlation with zero padding. input [H,W,Cin], kernels
// [Kh,Kw,Cin,Cout] -> [H',W',Cout] with H' = floor((H+2p-Kh)/stride)+1.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int pad,
                     Tape* tape = nullptr) {
  detail::require(input.rank() == 3, "conv2d: input must be [H,W,Cin], got " +
                                         detail::shape_str(input.shape()));
  detail::require(kernels.rank() == 4, "conv2d: kernels must be [Kh,Kw,Cin,Cout], got " +
                                           detail::shape_str(kernels.shape()));
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int kh = kernels.dim(0), kw = kernels.dim(1), cout = kernels.dim(3);
  detail::require(stride >= 1, "conv2d: stride must be >= 1, got " + std::to_string(stride));
  detail::require(pad >= 0, "conv2d: pad must be >= 0, got " + std::to_string(pad));
  detail::require(kernels.dim(2) == cin,
                  "conv2d: kernel axis 2 (input channels) is " + std::to_string(kernels.dim(2)) +
                      " but input axis 2 is " + std::to_string(cin));
  detail::require(kh <= h + 2 * pad && kw <= w + 2 * pad,
                  "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                      " exceeds padded input " + std::to_string(h + 2 * pad) + "x" +
                      std::to_string(w + 2 * pad));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;

  Tensor out = Tensor::zeros({oh, ow, cout});
  {
    const double* in = input.data();
    const double* kv = kernels.data();
    double* ov = out.data();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double* orow = ov + (static_cast<std::size_t>(oy) * ow + ox) * cout;
        for (int ky = 0; ky < kh; ++ky) {
          const int y = oy * stride - pad + ky;
          if (y < 0 || y >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int x = ox * stride - pad + kx;
            if (x < 0 || x >= w) continue;
            const double* irow = in + (static_cast<std::size_t>(y) * w + x) * cin;
            const double* kbase =
                kv + (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const double iv = irow[ci];
              const double* kc = kbase + static_cast<std::size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) orow[co] += iv * kc[co];
            }
          }
        }
      }
    }
  }

  if (detail::track(tape, input, kernels)) {
    detail::mark_output(out, tape);
    tape->record([input, kernels, out, stride, pad, h, w, cin, kh, kw, cout, oh, ow]() mutable {
      const double* go = out.grad_data();
      const double* in = input.data();
      const double* kv = kernels.data();
      double* gi = input.requires_grad() ? input.grad_data() : nullptr;
      double* gk = kernels.requires_grad() ? kernels.grad_data() : nullptr;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const double* grow = go + (static_cast<std::size_t>(oy) * ow + ox) * cout;
          for (int ky = 0; ky < kh; ++ky) {
            const int y = oy * stride - pad + ky;
            if (y < 0 || y >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int x = ox * stride - pad + kx;
              if (x < 0 || x >= w) continue;
              const std::size_t ioff = (static_cast<std::size_t>(y) * w + x) * cin;
              const std::size_t koff =
                  (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
              for (int ci = 0; ci < cin; ++ci) {
                const std::size_t kcoff = koff + static_cast<std::size_t>(ci) * cout;
                if (gi) {
                  double acc = 0.0;
                  for (int co = 0; co < cout; ++co) acc += grow[co] * kv[kcoff + co];
                  gi[ioff + ci] += acc;
                }
                if (gk) {
                  const double iv = in[ioff + ci];
                  for (int co = 0; co < cout; ++co) gk[kcoff + co] += grow[co] * iv;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Adds a [C] bias along the last axis of x.
inline Tensor bias_add(const Tensor& x, const Tensor& bias, Tape* tape = nullptr) {
  detail::require(bias.rank() == 1, "bias_add: bias must be rank 1, got " +
                                        detail::shape_str(bias.shape()));
  const int c = bias.dim(0);
  detail::require(x.dim(x.rank() - 1) == c,
                  "bias_add: last axis of x is " + std::to_string(x.dim(x.rank() - 1)) +
                      " but bias has " + std::to_string(c) + " entries");
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t outer = x.size() / static_cast<std::size_t>(c);
  {
    const double* xv = x.data();
    const double* bv = bias.data();
    double* ov = out.data();
    for (std::size_t i = 0; i < outer; ++i)
      for (int j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] + bv[j];
  }
  if (detail::track(tape, x, bias)) {
    detail::mark_output(out, tape);
    tape->record([x, bias, out, outer, c]() mutable {
      const double* go = out.grad_data();
      if (x.requires_grad()) {
        double* gx = x.grad_data();
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += go[i];
      }
      if (bias.requires_grad()) {
        double* gb = bias.grad_data();
        for (std::size_t i = 0; i < outer; ++i)
          for (int j = 0; j < c; ++j) gb[j] += go[i * c + j];
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = v > 0.0 ? v : 0.0;
  }
  if (detail::track(tape, x)) {
    detail::mark_output(out, tape);
    tape->record([x, out]() mutable {
      const double* go = out.grad_data();
      const double* xv = x.data();
      double* gx = x.grad_data();
      for (std::size_t i = 0; i < x.size(); ++i)
        if (xv[i] > 0.0) gx[i] += go[i];
    });
  }
  return out;
}

inline Tensor sigmoid(const Tensor& x, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  if (detail::track(tape, x)) {
    detail::mark_output(out, tape);
    tape->record([x, out]() mutable {
      const double* go = out.grad_data();
      const double* ov = out.data();
      double* gx = x.grad_data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += go[i] * ov[i] * (1.0 - ov[i]);
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require(a.same_shape(b), "add: shape mismatch " + detail::shape_str(a.shape()) +
                                       " vs " + detail::shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::track(tape, a, b)) {
    detail::mark_output(out, tape);
    tape->record([a, b, out]() mutable {
      const double* go = out.grad_data();
      if (a.requires_grad()) {
        double* ga = a.grad_data();
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad_data();
        for (std::size_t i = 0; i < b.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require(a.same_shape(b), "mul: shape mismatch " + detail::shape_str(a.shape()) +
                                       " vs " + detail::shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::track(tape, a, b)) {
    detail::mark_output(out, tape);
    tape->record([a, b, out]() mutable {
      const double* go = out.grad_data();
      if (a.requires_grad()) {
        double* ga = a.grad_data();
        const double* bv = b.data();
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad_data();
        const double* av = a.data();
        for (std::size_t i = 0; i < b.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, double factor, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * factor;
  if (detail::track(tape, x)) {
    detail::mark_output(out, tape);
    tape->record([x, out, factor]() mutable {
      const double* go = out.grad_data();
      double* gx = x.grad_data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += go[i] * factor;
    });
  }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require(a.rank() == 2 && b.rank() == 2,
                  "matmul: expected rank-2 operands, got " + detail::shape_str(a.shape()) +
                      " and " + detail::shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul: inner axes disagree: a is [" + std::to_string(m) +
                                     "," + std::to_string(k) + "], b is [" +
                                     std::to_string(b.dim(0)) + "," + std::to_string(n) + "]");
  Tensor out = Tensor::zeros({m, n});
  {
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    for (int i = 0; i < m; ++i) {
      double* orow = ov + static_cast<std::size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double aik = av[static_cast<std::size_t>(i) * k + kk];
        const double* brow = bv + static_cast<std::size_t>(kk) * n;
        for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  if (detail::track(tape, a, b)) {
    detail::mark_output(out, tape);
    tape->record([a, b, out, m, k, n]() mutable {
      const double* go = out.grad_data();
      if (a.requires_grad()) {
        double* ga = a.grad_data();
        const double* bv = b.data();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const double* grow = go + static_cast<std::size_t>(i) * n;
            const double* brow = bv + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[static_cast<std::size_t>(i) * k + kk] += acc;
          }
      }
      if (b.requires_grad()) {
        double* gb = b.grad_data();
        const double* av = a.data();
        for (int kk = 0; kk < k; ++kk)
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              acc += av[static_cast<std::size_t>(i) * k + kk] *
                     go[static_cast<std::size_t>(i) * n + j];
            gb[static_cast<std::size_t>(kk) * n + j] += acc;
          }
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& x, Tape* tape = nullptr) {
  detail::require(x.rank() == 2,
                  "transpose: expected rank 2, got " + detail::shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(j) * m + i] =
          x.data()[static_cast<std::size_t>(i) * n + j];
  if (detail::track(tape, x)) {
    detail::mark_output(out, tape);
    tape->record([x, out, m, n]() mutable {
      const double* go = out.grad_data();
      double* gx = x.grad_data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gx[static_cast<std::size_t>(i) * n + j] += go[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

// Max-subtracted softmax along the last axis; accepts a vector or a matrix
// (row-wise).
inline Tensor softmax(const Tensor& x, Tape* tape = nullptr) {
  detail::require(x.rank() == 1 || x.rank() == 2,
                  "softmax: expected rank 1 or 2, got " + detail::shape_str(x.shape()));
  const int n = x.dim(x.rank() - 1);
  const int rows = x.rank() == 2 ? x.dim(0) : 1;
  Tensor out = Tensor::zeros(x.shape());
  {
    const double* xv = x.data();
    double* ov = out.data();
    for (int r = 0; r < rows; ++r) {
      const double* row = xv + static_cast<std::size_t>(r) * n;
      double* orow = ov + static_cast<std::size_t>(r) * n;
      double m = row[0];
      for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        orow[j] = std::exp(row[j] - m);
        sum += orow[j];
      }
      for (int j = 0; j < n; ++j) orow[j] /= sum;
    }
  }
  if (detail::track(tape, x)) {
    detail::mark_output(out, tape);
    tape->record([x, out, rows, n]() mutable {
      const double* go = out.grad_data();
      const double* ov = out.data();
      double* gx = x.grad_data();
      for (int r = 0; r < rows; ++r) {
        const double* grow = go + static_cast<std::size_t>(r) * n;
        const double* yrow = ov + static_cast<std::size_t>(r) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += grow[j] * yrow[j];
        double* gxr = gx + static_cast<std::size_t>(r) * n;
        for (int j = 0; j < n; ++j) gxr[j] += yrow[j] * (grow[j] - dot);
      }
    });
  }
  return out;
}

// Rescales every channel of x [H,W,C] by the per-pixel map m [H,W].
inline Tensor spatial_scale(const Tensor& x, const Tensor& map, Tape* tape = nullptr) {
  detail::require(x.rank() == 3, "spatial_scale: features must be [H,W,C], got " +
                                     detail::shape_str(x.shape()));
  detail::require(map.rank() == 2, "spatial_scale: map must be [H,W], got " +
                                       detail::shape_str(map.shape()));
  detail::require(x.dim(0) == map.dim(0) && x.dim(1) == map.dim(1),
                  "spatial_scale: spatial shape mismatch " + detail::shape_str(x.shape()) +
                      " vs " + detail::shape_str(map.shape()));
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor out = Tensor::zeros(x.shape());
  {
    const double* xv = x.data();
    const double* mv = map.data();
    double* ov = out.data();
    for (int p = 0; p < h * w; ++p) {
      const double m = mv[p];
      for (int j = 0; j < c; ++j)
        ov[static_cast<std::size_t>(p) * c + j] = xv[static_cast<std::size_t>(p) * c + j] * m;
    }
  }
  if (detail::track(tape, x, map)) {
    detail::mark_output(out, tape);
    tape->record([x, map, out, h, w, c]() mutable {
      const double* go = out.grad_data();
      const double* xv = x.data();
      const double* mv = map.data();
      double* gx = x.requires_grad() ? x.grad_data() : nullptr;
      double* gm = map.requires_grad() ? map.grad_data() : nullptr;
      for (int p = 0; p < h * w; ++p) {
        const std::size_t off = static_cast<std::size_t>(p) * c;
        if (gx) {
          for (int j = 0; j < c; ++j) gx[off + j] += go[off + j] * mv[p];
        }
        if (gm) {
          double acc = 0.0;
          for (int j = 0; j < c; ++j) acc += go[off + j] * xv[off + j];
          gm[p] += acc;
        }
      }
    });
  }
  return out;
}

// Per-channel spatial mean: [H,W,C] -> [C].
inline Tensor global_avg_pool(const Tensor& x, Tape* tape = nullptr) {
  detail::require(x.rank() == 3, "global_avg_pool: expected [H,W,C], got " +
                                     detail::shape_str(x.shape()));
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tensor out = Tensor::zeros({c});
  {
    const double* xv = x.data();
    double* ov = out.data();
    for (int p = 0; p < h * w; ++p)
      for (int j = 0; j < c; ++j) ov[j] += xv[static_cast<std::size_t>(p) * c + j];
    for (int j = 0; j < c; ++j) ov[j] *= inv;
  }
  if (detail::track(tape, x)) {
    detail::mark_output(out, tape);
    tape->record([x, out, h, w, c, inv]() mutable {
      const double* go = out.grad_data();
      double* gx = x.grad_data();
      for (int p = 0; p < h * w; ++p)
        for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(p) * c + j] += go[j] * inv;
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& x, std::vector<int> shape, Tape* tape = nullptr) {
  Tensor out = Tensor::from_data(std::move(shape), x.values());
  detail::require(out.size() == x.size(),
                  "reshape: element count changes from " + std::to_string(x.size()) + " to " +
                      std::to_string(out.size()));
  if (detail::track(tape, x)) {
    detail::mark_output(out, tape);
    tape->record([x, out]() mutable {
      const double* go = out.grad_data();
      double* gx = x.grad_data();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

// Stacks a on top of b: [Ma,N] + [Mb,N] -> [Ma+Mb,N].
inline Tensor concat_rows(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                  "concat_rows: operands must be matrices with equal width, got " +
                      detail::shape_str(a.shape()) + " and " + detail::shape_str(b.shape()));
  const int ma = a.dim(0), mb = b.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({ma + mb, n});
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  if (detail::track(tape, a, b)) {
    detail::mark_output(out, tape);
    tape->record([a, b, out]() mutable {
      const double* go = out.grad_data();
      if (a.requires_grad()) {
        double* ga = a.grad_data();
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad_data();
        for (std::size_t i = 0; i < b.size(); ++i) gb[i] += go[a.size() + i];
      }
    });
  }
  return out;
}

inline Tensor take_row(const Tensor& x, int row, Tape* tape = nullptr) {
  detail::require(x.rank() == 2, "take_row: expected a matrix, got " +
                                     detail::shape_str(x.shape()));
  detail::require(row >= 0 && row < x.dim(0),
                  "take_row: row " + std::to_string(row) + " out of range [0," +
                      std::to_string(x.dim(0)) + ")");
  const int n = x.dim(1);
  Tensor out = Tensor::zeros({n});
  std::copy(x.data() + static_cast<std::size_t>(row) * n,
            x.data() + static_cast<std::size_t>(row + 1) * n, out.data());
  if (detail::track(tape, x)) {
    detail::mark_output(out, tape);
    tape->record([x, out, row, n]() mutable {
      const double* go = out.grad_data();
      double* gx = x.grad_data() + static_cast<std::size_t>(row) * n;
      for (int j = 0; j < n; ++j) gx[j] += go[j];
    });
  }
  return out;
}

// Central-difference audit of the recorded gradients. f must map
// (x, tape) -> scalar tensor. Returns the max over coordinates of
// |analytic - numeric| / max(1, |analytic|). A loss that never touches x
// reports 0 instead of failing.
template <typename F>
double grad_check(F&& f, const Tensor& at, double h = 1e-3) {
  Tensor x = at.clone(/*requires_grad=*/true);
  Tape tape;
  Tensor loss = f(static_cast<const Tensor&>(x), tape);
  detail::require(loss.defined() && loss.size() == 1, "grad_check: f must be scalar-valued");
  std::vector<double> analytic(x.size(), 0.0);
  if (loss.producer() == &tape) {
    backward(loss, tape);
    analytic = x.grad();
  } else {
    tape.clear();
  }

  Tensor probe = at.clone(/*requires_grad=*/false);
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe.data()[i];
    Tape scratch;
    probe.data()[i] = saved + h;
    const double up = f(static_cast<const Tensor&>(probe), scratch).item();
    scratch.clear();
    probe.data()[i] = saved - h;
    const double down = f(static_cast<const Tensor&>(probe), scratch).item();
    scratch.clear();
    probe.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ctam
