#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "scnet/common.hpp"
#include "scnet/mask.hpp"

namespace scnet {

namespace detail {
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until tracked
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
/// Copies are shallow handles: ops on a copy see (and write grads into) the
/// same storage, which is what parameter stores rely on.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(t.numel(), 0.0);
    t.impl_->requires_grad = requires_grad;
    if (requires_grad) t.impl_->grad.assign(t.numel(), 0.0);
    return t;
  }

  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor from_data(std::vector<int> shape, std::vector<double> values, bool requires_grad = false) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    if (values.size() != t.numel()) throw ShapeError("Tensor: data length does not match shape");
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    if (requires_grad) t.impl_->grad.assign(t.numel(), 0.0);
    return t;
  }

  static Tensor scalar(double value) { return from_data({}, {value}); }

  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : impl_->shape) n *= static_cast<std::size_t>(d);
    return n;
  }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad() { return impl_->grad; }
  const std::vector<double>& grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on && impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
  }

  void ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  double& at(std::size_t i) { return impl_->data[i]; }
  double at(std::size_t i) const { return impl_->data[i]; }
  // rank-3 [h,w,c] accessors
  double& at3(int i, int j, int c) { return impl_->data[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + c]; }
  double at3(int i, int j, int c) const { return impl_->data[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + c]; }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse-mode tape: ops append a named backward rule; backward() replays
/// them in reverse recorded order.
class Tape {
 public:
  struct Node {
    std::string name;
    std::function<void()> fn;
  };

  void record(std::string name, std::function<void()> fn) {
    nodes_.push_back({std::move(name), std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void reset() { nodes_.clear(); }

  std::vector<std::string> op_names() const {
    std::vector<std::string> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.push_back(n.name);
    return out;
  }

  void replay_backward() const {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

 private:
  std::vector<Node> nodes_;
};

namespace detail {
inline bool track_inputs(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t->requires_grad() || t->has_grad()) return true;
  return false;
}
// Allocates a grad buffer iff the tensor participates in differentiation.
inline bool wants_grad(Tensor& t) {
  if (t.requires_grad() || t.has_grad()) {
    t.ensure_grad();
    return true;
  }
  return false;
}
}  // namespace detail

/// 2D cross-correlation with same (zero) padding, stride 1.
/// input [h,w,cin], kernel [kh,kw,cin,cout] with odd kh,kw, bias [cout].
inline Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  if (input.rank() != 3) throw ShapeError("conv2d: input must be rank 3");
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be rank 4");
  if (bias.rank() != 1) throw ShapeError("conv2d: bias must be rank 1");
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int kh = kernel.dim(0), kw = kernel.dim(1);
  const int cout = kernel.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel spatial dims must be odd");
  if (kernel.dim(2) != cin) throw ShapeError("conv2d: kernel input channels mismatch");
  if (bias.dim(0) != cout) throw ShapeError("conv2d: bias length mismatch");

  const int ph = kh / 2, pw = kw / 2;
  Tensor out = Tensor::zeros({h, w, cout});
  const double* in = input.data().data();
  const double* ker = kernel.data().data();
  const double* b = bias.data().data();
  double* o = out.data().data();

  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double* op = o + (static_cast<std::size_t>(i) * w + j) * cout;
      for (int co = 0; co < cout; ++co) op[co] = b[co];
      for (int di = 0; di < kh; ++di) {
        const int y = i + di - ph;
        if (y < 0 || y >= h) continue;
        for (int dj = 0; dj < kw; ++dj) {
          const int x = j + dj - pw;
          if (x < 0 || x >= w) continue;
          const double* ip = in + (static_cast<std::size_t>(y) * w + x) * cin;
          const double* kp = ker + (static_cast<std::size_t>(di) * kw + dj) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const double v = ip[ci];
            const double* kq = kp + static_cast<std::size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) op[co] += v * kq[co];
          }
        }
      }
    }
  }

  if (detail::track_inputs({&input, &kernel, &bias})) {
    Tensor in_t = input, ker_t = kernel, b_t = bias, out_t = out;
    const bool want_in = detail::wants_grad(in_t);
    const bool want_ker = detail::wants_grad(ker_t);
    const bool want_b = detail::wants_grad(b_t);
    out_t.set_requires_grad(true);
    tape.record("conv2d", [in_t, ker_t, b_t, out_t, want_in, want_ker, want_b, h, w, cin, kh, kw,
                           cout, ph, pw]() mutable {
      const double* go = out_t.grad().data();
      const double* in = in_t.data().data();
      const double* ker = ker_t.data().data();
      double* gin = want_in ? in_t.grad().data() : nullptr;
      double* gker = want_ker ? ker_t.grad().data() : nullptr;
      double* gb = want_b ? b_t.grad().data() : nullptr;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const double* gop = go + (static_cast<std::size_t>(i) * w + j) * cout;
          if (gb)
            for (int co = 0; co < cout; ++co) gb[co] += gop[co];
          for (int di = 0; di < kh; ++di) {
            const int y = i + di - ph;
            if (y < 0 || y >= h) continue;
            for (int dj = 0; dj < kw; ++dj) {
              const int x = j + dj - pw;
              if (x < 0 || x >= w) continue;
              const std::size_t in_off = (static_cast<std::size_t>(y) * w + x) * cin;
              const double* kp = ker + (static_cast<std::size_t>(di) * kw + dj) * cin * cout;
              double* gkp = gker ? gker + (static_cast<std::size_t>(di) * kw + dj) * cin * cout : nullptr;
              for (int ci = 0; ci < cin; ++ci) {
                const double v = in[in_off + ci];
                const double* kq = kp + static_cast<std::size_t>(ci) * cout;
                double acc = 0.0;
                if (gkp) {
                  double* gkq = gkp + static_cast<std::size_t>(ci) * cout;
                  for (int co = 0; co < cout; ++co) {
                    const double g = gop[co];
                    gkq[co] += v * g;
                    acc += kq[co] * g;
                  }
                } else {
                  for (int co = 0; co < cout; ++co) acc += kq[co] * gop[co];
                }
                if (gin) gin[in_off + ci] += acc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// Elementwise max(0, x); the subgradient at 0 is taken as 0.
inline Tensor relu(Tape& tape, const Tensor& input) {
  Tensor out = Tensor::zeros(input.shape());
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = input.at(i) > 0.0 ? input.at(i) : 0.0;
  if (detail::track_inputs({&input})) {
    Tensor in_t = input, out_t = out;
    in_t.ensure_grad();
    out_t.set_requires_grad(true);
    tape.record("relu", [in_t, out_t, n]() mutable {
      for (std::size_t i = 0; i < n; ++i)
        if (in_t.at(i) > 0.0) in_t.grad()[i] += out_t.grad()[i];
    });
  }
  return out;
}

/// 2x2 average pooling, stride 2; spatial dims must be even.
inline Tensor avg_pool2(Tape& tape, const Tensor& input) {
  if (input.rank() != 3) throw ShapeError("avg_pool2: input must be rank 3");
  const int h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool2: spatial dims must be even");
  Tensor out = Tensor::zeros({h / 2, w / 2, c});
  for (int i = 0; i < h / 2; ++i)
    for (int j = 0; j < w / 2; ++j)
      for (int k = 0; k < c; ++k)
        out.at3(i, j, k) = 0.25 * (input.at3(2 * i, 2 * j, k) + input.at3(2 * i, 2 * j + 1, k) +
                                   input.at3(2 * i + 1, 2 * j, k) + input.at3(2 * i + 1, 2 * j + 1, k));
  if (detail::track_inputs({&input})) {
    Tensor in_t = input, out_t = out;
    in_t.ensure_grad();
    out_t.set_requires_grad(true);
    tape.record("avg_pool2", [in_t, out_t, h, w, c]() mutable {
      for (int i = 0; i < h / 2; ++i)
        for (int j = 0; j < w / 2; ++j)
          for (int k = 0; k < c; ++k) {
            const double g = 0.25 * out_t.grad()[(static_cast<std::size_t>(i) * (w / 2) + j) * c + k];
            in_t.grad()[(static_cast<std::size_t>(2 * i) * w + 2 * j) * c + k] += g;
            in_t.grad()[(static_cast<std::size_t>(2 * i) * w + 2 * j + 1) * c + k] += g;
            in_t.grad()[(static_cast<std::size_t>(2 * i + 1) * w + 2 * j) * c + k] += g;
            in_t.grad()[(static_cast<std::size_t>(2 * i + 1) * w + 2 * j + 1) * c + k] += g;
          }
    });
  }
  return out;
}

/// Stacks b's channels after a's; spatial dims must agree.
inline Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3) throw ShapeError("concat_channels: inputs must be rank 3");
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1))
    throw ShapeError("concat_channels: spatial dims differ");
  const int h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  Tensor out = Tensor::zeros({h, w, ca + cb});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      for (int k = 0; k < ca; ++k) out.at3(i, j, k) = a.at3(i, j, k);
      for (int k = 0; k < cb; ++k) out.at3(i, j, ca + k) = b.at3(i, j, k);
    }
  if (detail::track_inputs({&a, &b})) {
    Tensor a_t = a, b_t = b, out_t = out;
    if (a_t.requires_grad() || a_t.has_grad()) a_t.ensure_grad();
    if (b_t.requires_grad() || b_t.has_grad()) b_t.ensure_grad();
    out_t.set_requires_grad(true);
    tape.record("concat_channels", [a_t, b_t, out_t, h, w, ca, cb]() mutable {
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const std::size_t off = (static_cast<std::size_t>(i) * w + j) * (ca + cb);
          if (a_t.has_grad())
            for (int k = 0; k < ca; ++k)
              a_t.grad()[(static_cast<std::size_t>(i) * w + j) * ca + k] += out_t.grad()[off + k];
          if (b_t.has_grad())
            for (int k = 0; k < cb; ++k)
              b_t.grad()[(static_cast<std::size_t>(i) * w + j) * cb + k] += out_t.grad()[off + ca + k];
        }
    });
  }
  return out;
}

/// Elementwise sum of two same-shape tensors.
inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shapes differ");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
  if (detail::track_inputs({&a, &b})) {
    Tensor a_t = a, b_t = b, out_t = out;
    if (a_t.requires_grad() || a_t.has_grad()) a_t.ensure_grad();
    if (b_t.requires_grad() || b_t.has_grad()) b_t.ensure_grad();
    out_t.set_requires_grad(true);
    tape.record("add", [a_t, b_t, out_t, n]() mutable {
      for (std::size_t i = 0; i < n; ++i) {
        if (a_t.has_grad()) a_t.grad()[i] += out_t.grad()[i];
        if (b_t.has_grad()) b_t.grad()[i] += out_t.grad()[i];
      }
    });
  }
  return out;
}

/// Multiplication by a constant scalar.
inline Tensor scale(Tape& tape, const Tensor& a, double factor) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * factor;
  if (detail::track_inputs({&a})) {
    Tensor a_t = a, out_t = out;
    a_t.ensure_grad();
    out_t.set_requires_grad(true);
    tape.record("scale", [a_t, out_t, n, factor]() mutable {
      for (std::size_t i = 0; i < n; ++i) a_t.grad()[i] += factor * out_t.grad()[i];
    });
  }
  return out;
}

/// Mean over non-ignored pixels of -log softmax(logits)[target].
/// logits [h,w,2]; target in {0,1}; `ignore` pixels are excluded from the mean.
inline Tensor pixel_cross_entropy(Tape& tape, const Tensor& logits, const BinaryMask& target,
                                  const BinaryMask* ignore = nullptr) {
  if (logits.rank() != 3 || logits.dim(2) != 2)
    throw ShapeError("pixel_cross_entropy: logits must be [h,w,2]");
  const int h = logits.dim(0), w = logits.dim(1);
  if (target.height() != h || target.width() != w)
    throw ShapeError("pixel_cross_entropy: target shape mismatch");
  if (ignore && (ignore->height() != h || ignore->width() != w))
    throw ShapeError("pixel_cross_entropy: ignore shape mismatch");

  std::size_t valid = 0;
  double total = 0.0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (ignore && ignore->at(i, j)) continue;
      ++valid;
      const double l0 = logits.at3(i, j, 0), l1 = logits.at3(i, j, 1);
      const double m = std::max(l0, l1);
      const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
      total += lse - (target.at(i, j) ? l1 : l0);
    }
  if (valid == 0) throw EmptyLossError("pixel_cross_entropy: every pixel ignored");
  Tensor out = Tensor::scalar(total / static_cast<double>(valid));

  if (detail::track_inputs({&logits})) {
    Tensor l_t = logits, out_t = out;
    BinaryMask tgt = target;
    BinaryMask ign = ignore ? *ignore : BinaryMask();
    const bool has_ignore = ignore != nullptr;
    l_t.ensure_grad();
    out_t.set_requires_grad(true);
    tape.record("pixel_cross_entropy", [l_t, out_t, tgt, ign, has_ignore, h, w, valid]() mutable {
      const double g = out_t.grad()[0] / static_cast<double>(valid);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          if (has_ignore && ign.at(i, j)) continue;
          const double l0 = l_t.at3(i, j, 0), l1 = l_t.at3(i, j, 1);
          const double m = std::max(l0, l1);
          const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
          const double p1 = e1 / (e0 + e1);
          const int t = tgt.at(i, j) ? 1 : 0;
          const std::size_t off = (static_cast<std::size_t>(i) * w + j) * 2;
          l_t.grad()[off] += g * ((1.0 - p1) - (t == 0 ? 1.0 : 0.0));
          l_t.grad()[off + 1] += g * (p1 - (t == 1 ? 1.0 : 0.0));
        }
    });
  }
  return out;
}

/// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
inline void backward(Tape& tape, Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar");
  loss.ensure_grad();
  loss.grad()[0] += 1.0;
  tape.replay_backward();
}

}  // namespace scnet
