#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "saic/tensor.hpp"

namespace saic {

// Define-by-run reverse-mode differentiation over Tensor values. Each op
// records a closure that routes the output gradient to the inputs; backward()
// walks the recorded graph in reverse topological order.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor(value.dims());
    return grad;
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  void zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(0.0f);
  }
  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

inline void accumulate_grad(Node& parent, const float* g, std::size_t n) {
  Tensor& dst = parent.ensure_grad();
  float* d = dst.data();
  for (std::size_t i = 0; i < n; ++i) d[i] += g[i];
}

// Builds an op node. The backward closure receives the op's own node and must
// push gradients into parents that require them.
inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rg = false;
  if (grad_enabled()) {
    for (const Var& p : parents) rg = rg || p.requires_grad();
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (Var& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

// Reverse-topological traversal from a scalar root.
inline void backward(const Var& root) {
  check_contract(root.defined() && root.value().numel() == 1,
                 "backward: root must be a defined scalar");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad().fill(1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  check_contract(a.value().same_shape(b.value()), "add: shape mismatch ",
                 shape_str(a.value().dims()), " vs ", shape_str(b.value().dims()));
  Tensor out(a.value().dims());
  const std::size_t n = out.numel();
  const float* pa = a.value().data();
  const float* pb = b.value().data();
  float* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  return make_op(std::move(out), {a, b}, [n](Node& self) {
    for (int k = 0; k < 2; ++k)
      if (self.parents[k]->requires_grad)
        accumulate_grad(*self.parents[k], self.grad.data(), n);
  });
}

inline Var scale(const Var& a, float s) {
  Tensor out(a.value().dims());
  const std::size_t n = out.numel();
  const float* pa = a.value().data();
  float* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  return make_op(std::move(out), {a}, [n, s](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& dst = self.parents[0]->ensure_grad();
    const float* g = self.grad.data();
    float* d = dst.data();
    for (std::size_t i = 0; i < n; ++i) d[i] += s * g[i];
  });
}

inline Var leaky_relu(const Var& x, float slope = 0.1f) {
  Tensor out(x.value().dims());
  const std::size_t n = out.numel();
  const float* px = x.value().data();
  float* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : slope * px[i];
  return make_op(std::move(out), {x}, [n, slope](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const float* px = self.parents[0]->value.data();
    const float* g = self.grad.data();
    float* d = self.parents[0]->ensure_grad().data();
    for (std::size_t i = 0; i < n; ++i) d[i] += px[i] > 0.0f ? g[i] : slope * g[i];
  });
}

inline Var relu(const Var& x) { return leaky_relu(x, 0.0f); }

inline Var sigmoid(const Var& x) {
  Tensor out(x.value().dims());
  const std::size_t n = out.numel();
  const float* px = x.value().data();
  float* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = 1.0f / (1.0f + std::exp(-px[i]));
  return make_op(std::move(out), {x}, [n](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const float* y = self.value.data();
    const float* g = self.grad.data();
    float* d = self.parents[0]->ensure_grad().data();
    for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * y[i] * (1.0f - y[i]);
  });
}

// Binary quantization with a straight-through gradient: forward thresholds at
// 0.5 (the boundary itself maps to 0), backward is the identity.
inline Var ste_binarize(const Var& e) {
  Tensor out(e.value().dims());
  const std::size_t n = out.numel();
  const float* pe = e.value().data();
  float* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pe[i] > 0.5f ? 1.0f : 0.0f;
  return make_op(std::move(out), {e}, [n](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    accumulate_grad(*self.parents[0], self.grad.data(), n);
  });
}

// ---------------------------------------------------------------------------
// Dense / pooling ops
// ---------------------------------------------------------------------------

// y = x * w^T + b with x:[B,in], w:[out,in], b:[out].
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  check_contract(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1),
                 "linear: shape mismatch ", shape_str(xv.dims()), " vs ",
                 shape_str(wv.dims()));
  const int B = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  check_contract(b.value().numel() == static_cast<std::size_t>(out),
                 "linear: bias size mismatch");
  Tensor y({B, out});
  y.as_matrix(B, out).noalias() =
      xv.as_matrix(B, in) * wv.as_matrix(out, in).transpose();
  {
    float* py = y.data();
    const float* pb = b.value().data();
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < out; ++j) py[i * out + j] += pb[j];
  }
  return make_op(std::move(y), {x, w, b}, [B, in, out](Node& self) {
    ConstMatMap g(self.grad.data(), B, out);
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    if (xn.requires_grad)
      xn.ensure_grad().as_matrix(B, in).noalias() +=
          g * wn.value.as_matrix(out, in);
    if (wn.requires_grad)
      wn.ensure_grad().as_matrix(out, in).noalias() +=
          g.transpose() * xn.value.as_matrix(B, in);
    if (bn.requires_grad) {
      float* db = bn.ensure_grad().data();
      const float* pg = self.grad.data();
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < out; ++j) db[j] += pg[i * out + j];
    }
  });
}

inline Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.value();
  check_contract(xv.rank() == 4, "global_avg_pool: expected 4-D input");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int hw = H * W;
  Tensor y({B, C});
  const float* px = xv.data();
  float* py = y.data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const float* p = px + (static_cast<std::size_t>(b) * C + c) * hw;
      float s = 0.0f;
      for (int i = 0; i < hw; ++i) s += p[i];
      py[b * C + c] = s / hw;
    }
  return make_op(std::move(y), {x}, [B, C, hw](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    float* dx = self.parents[0]->ensure_grad().data();
    const float* g = self.grad.data();
    const float inv = 1.0f / hw;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        float gv = g[b * C + c] * inv;
        float* p = dx + (static_cast<std::size_t>(b) * C + c) * hw;
        for (int i = 0; i < hw; ++i) p[i] += gv;
      }
  });
}

// Nearest-neighbour 2x upsampling; backward sum-pools the gradient.
inline Var upsample2x(const Var& x) {
  const Tensor& xv = x.value();
  check_contract(xv.rank() == 4, "upsample2x: expected 4-D input");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor y({B, C, 2 * H, 2 * W});
  const float* px = xv.data();
  float* py = y.data();
  for (int bc = 0; bc < B * C; ++bc) {
    const float* src = px + static_cast<std::size_t>(bc) * H * W;
    float* dst = py + static_cast<std::size_t>(bc) * 4 * H * W;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        float v = src[h * W + w];
        float* d = dst + (2 * h) * 2 * W + 2 * w;
        d[0] = v;
        d[1] = v;
        d[2 * W] = v;
        d[2 * W + 1] = v;
      }
  }
  return make_op(std::move(y), {x}, [B, C, H, W](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    float* dx = self.parents[0]->ensure_grad().data();
    const float* g = self.grad.data();
    for (int bc = 0; bc < B * C; ++bc) {
      const float* gs = g + static_cast<std::size_t>(bc) * 4 * H * W;
      float* d = dx + static_cast<std::size_t>(bc) * H * W;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const float* s = gs + (2 * h) * 2 * W + 2 * w;
          d[h * W + w] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

// Unpacks one image into [Cin*kh*kw, OH*OW]. Row-contiguous copies where the
// stride allows it.
inline void im2col(const float* x, int C, int H, int W, int kh, int kw,
                   int stride, int pad, int OH, int OW, float* cols) {
  for (int c = 0; c < C; ++c) {
    const float* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        float* row =
            cols + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride + ki - pad;
          float* out = row + static_cast<std::size_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::memset(out, 0, sizeof(float) * OW);
            continue;
          }
          const float* xrow = xc + static_cast<std::size_t>(ih) * W;
          if (stride == 1) {
            int lo = std::max(0, pad - kj);
            int hi = std::min(OW, W + pad - kj);
            if (lo > 0) std::memset(out, 0, sizeof(float) * lo);
            if (hi < OW) std::memset(out + hi, 0, sizeof(float) * (OW - hi));
            if (hi > lo) std::memcpy(out + lo, xrow + lo + kj - pad,
                                     sizeof(float) * (hi - lo));
          } else {
            for (int ow = 0; ow < OW; ++ow) {
              const int iw = ow * stride + kj - pad;
              out[ow] = (iw >= 0 && iw < W) ? xrow[iw] : 0.0f;
            }
          }
        }
      }
  }
}

// Scatter-adds [Cin*kh*kw, OH*OW] columns back onto one image.
inline void col2im_add(const float* cols, int C, int H, int W, int kh, int kw,
                       int stride, int pad, int OH, int OW, float* dx) {
  for (int c = 0; c < C; ++c) {
    float* xc = dx + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const float* row =
            cols + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= H) continue;
          float* xrow = xc + static_cast<std::size_t>(ih) * W;
          const float* in = row + static_cast<std::size_t>(oh) * OW;
          if (stride == 1) {
            int lo = std::max(0, pad - kj);
            int hi = std::min(OW, W + pad - kj);
            for (int ow = lo; ow < hi; ++ow) xrow[ow + kj - pad] += in[ow];
          } else {
            for (int ow = 0; ow < OW; ++ow) {
              const int iw = ow * stride + kj - pad;
              if (iw >= 0 && iw < W) xrow[iw] += in[ow];
            }
          }
        }
      }
  }
}

}  // namespace detail

// x:[B,Cin,H,W], w:[Cout,Cin,kh,kw], b:[Cout]. Gradients for frozen inputs
// are skipped, so running a frozen feature extractor only pays for the
// input-gradient GEMM.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  check_contract(xv.rank() == 4 && wv.rank() == 4 && xv.dim(1) == wv.dim(1),
                 "conv2d: shape mismatch ", shape_str(xv.dims()), " vs ",
                 shape_str(wv.dims()));
  const int B = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  check_contract(OH > 0 && OW > 0, "conv2d: kernel larger than padded input");
  check_contract(b.value().numel() == static_cast<std::size_t>(Cout),
                 "conv2d: bias size mismatch");
  const int K = Cin * kh * kw;
  const int P = OH * OW;

  Tensor y({B, Cout, OH, OW});
  std::vector<float> cols(static_cast<std::size_t>(K) * P);
  ConstMatMap wm(wv.data(), Cout, K);
  for (int bi = 0; bi < B; ++bi) {
    detail::im2col(xv.data() + xv.idx4(bi, 0, 0, 0), Cin, H, W, kh, kw, stride,
                   pad, OH, OW, cols.data());
    MatMap ym(y.data() + y.idx4(bi, 0, 0, 0), Cout, P);
    ym.noalias() = wm * ConstMatMap(cols.data(), K, P);
    const float* pb = b.value().data();
    for (int c = 0; c < Cout; ++c) ym.row(c).array() += pb[c];
  }

  auto bw = [B, Cin, H, W, Cout, kh, kw, stride, pad, OH, OW, K, P](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    std::vector<float> cols;
    if (wn.requires_grad || xn.requires_grad)
      cols.resize(static_cast<std::size_t>(K) * P);
    ConstMatMap wm(wn.value.data(), Cout, K);
    for (int bi = 0; bi < B; ++bi) {
      ConstMatMap gm(self.grad.data() + self.grad.idx4(bi, 0, 0, 0), Cout, P);
      if (bn.requires_grad) {
        float* db = bn.ensure_grad().data();
        for (int c = 0; c < Cout; ++c) db[c] += gm.row(c).sum();
      }
      if (wn.requires_grad) {
        detail::im2col(xn.value.data() + xn.value.idx4(bi, 0, 0, 0), Cin, H, W,
                       kh, kw, stride, pad, OH, OW, cols.data());
        wn.ensure_grad().as_matrix(Cout, K).noalias() +=
            gm * ConstMatMap(cols.data(), K, P).transpose();
      }
      if (xn.requires_grad) {
        MatMap cm(cols.data(), K, P);
        cm.noalias() = wm.transpose() * gm;
        detail::col2im_add(cols.data(), Cin, H, W, kh, kw, stride, pad, OH, OW,
                           xn.ensure_grad().data() + xn.grad.idx4(bi, 0, 0, 0));
      }
    }
  };
  return make_op(std::move(y), {x, w, b}, std::move(bw));
}

// ---------------------------------------------------------------------------
// Heads and losses
// ---------------------------------------------------------------------------

inline Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  check_contract(xv.rank() == 2, "softmax_rows: expected 2-D input");
  const int B = xv.dim(0), C = xv.dim(1);
  Tensor y({B, C});
  const float* px = xv.data();
  float* py = y.data();
  for (int i = 0; i < B; ++i) {
    const float* r = px + static_cast<std::size_t>(i) * C;
    float* o = py + static_cast<std::size_t>(i) * C;
    float m = r[0];
    for (int j = 1; j < C; ++j) m = std::max(m, r[j]);
    float s = 0.0f;
    for (int j = 0; j < C; ++j) {
      o[j] = std::exp(r[j] - m);
      s += o[j];
    }
    const float inv = 1.0f / s;
    for (int j = 0; j < C; ++j) o[j] *= inv;
  }
  return make_op(std::move(y), {x}, [B, C](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const float* y = self.value.data();
    const float* g = self.grad.data();
    float* d = self.parents[0]->ensure_grad().data();
    for (int i = 0; i < B; ++i) {
      const float* yr = y + static_cast<std::size_t>(i) * C;
      const float* gr = g + static_cast<std::size_t>(i) * C;
      float* dr = d + static_cast<std::size_t>(i) * C;
      float dot = 0.0f;
      for (int j = 0; j < C; ++j) dot += gr[j] * yr[j];
      for (int j = 0; j < C; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

// Mean negative log-likelihood over the batch, fused log-softmax.
inline Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels) {
  const Tensor& xv = logits.value();
  check_contract(xv.rank() == 2, "cross_entropy_logits: expected 2-D logits");
  const int B = xv.dim(0), C = xv.dim(1);
  check_contract(static_cast<int>(labels.size()) == B,
                 "cross_entropy_logits: batch size mismatch");
  const float* px = xv.data();
  double loss = 0.0;
  Tensor probs({B, C});
  float* pp = probs.data();
  for (int i = 0; i < B; ++i) {
    check_contract(labels[i] >= 0 && labels[i] < C,
                   "cross_entropy_logits: label out of range");
    const float* r = px + static_cast<std::size_t>(i) * C;
    float m = r[0];
    for (int j = 1; j < C; ++j) m = std::max(m, r[j]);
    double s = 0.0;
    for (int j = 0; j < C; ++j) s += std::exp(static_cast<double>(r[j]) - m);
    const double logz = m + std::log(s);
    loss += logz - r[labels[i]];
    float* o = pp + static_cast<std::size_t>(i) * C;
    for (int j = 0; j < C; ++j)
      o[j] = static_cast<float>(std::exp(r[j] - logz));
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss / B));
  return make_op(std::move(out), {logits},
                 [B, C, labels, probs = std::move(probs)](Node& self) {
                   if (!self.parents[0]->requires_grad) return;
                   const float g = self.grad.data()[0] / B;
                   float* d = self.parents[0]->ensure_grad().data();
                   const float* pp = probs.data();
                   for (int i = 0; i < B; ++i) {
                     float* dr = d + static_cast<std::size_t>(i) * C;
                     const float* pr = pp + static_cast<std::size_t>(i) * C;
                     for (int j = 0; j < C; ++j) dr[j] += g * pr[j];
                     dr[labels[i]] -= g;
                   }
                 });
}

// Sum over the batch of one class column; backprop from this to the feature
// maps yields per-image gradients because the head acts per sample.
inline Var class_score_sum(const Var& scores, int cls) {
  const Tensor& sv = scores.value();
  check_contract(sv.rank() == 2 && cls >= 0 && cls < sv.dim(1),
                 "class_score_sum: class index out of range");
  const int B = sv.dim(0), C = sv.dim(1);
  double s = 0.0;
  for (int i = 0; i < B; ++i) s += sv.data()[static_cast<std::size_t>(i) * C + cls];
  return make_op(Tensor::scalar(static_cast<float>(s)), {scores},
                 [B, C, cls](Node& self) {
                   if (!self.parents[0]->requires_grad) return;
                   const float g = self.grad.data()[0];
                   float* d = self.parents[0]->ensure_grad().data();
                   for (int i = 0; i < B; ++i)
                     d[static_cast<std::size_t>(i) * C + cls] += g;
                 });
}

// Mean-per-element squared difference.
inline Var mse_loss(const Var& a, const Var& b) {
  check_contract(a.value().same_shape(b.value()), "mse_loss: shape mismatch ",
                 shape_str(a.value().dims()), " vs ", shape_str(b.value().dims()));
  const std::size_t n = a.value().numel();
  const float* pa = a.value().data();
  const float* pb = b.value().data();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    s += d * d;
  }
  return make_op(Tensor::scalar(static_cast<float>(s / n)), {a, b}, [n](Node& self) {
    const float g = self.grad.data()[0] * 2.0f / n;
    const float* pa = self.parents[0]->value.data();
    const float* pb = self.parents[1]->value.data();
    if (self.parents[0]->requires_grad) {
      float* d = self.parents[0]->ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) d[i] += g * (pa[i] - pb[i]);
    }
    if (self.parents[1]->requires_grad) {
      float* d = self.parents[1]->ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) d[i] += g * (pb[i] - pa[i]);
    }
  });
}

// (1/B) sum_b sum_k w_k * mean_{m,n}((rec - ref)^2) / K over [B,K,M,N] stacks.
// With all-ones weights this reduces exactly to mse_loss's value.
inline Var weighted_channel_mse(const Var& rec, const Var& ref, const Tensor& w) {
  const Tensor& av = rec.value();
  check_contract(av.same_shape(ref.value()),
                 "weighted_channel_mse: shape mismatch");
  check_contract(av.rank() == 4, "weighted_channel_mse: expected 4-D stacks");
  const int B = av.dim(0), K = av.dim(1), M = av.dim(2), N = av.dim(3);
  check_contract(w.numel() == static_cast<std::size_t>(K),
                 "weighted_channel_mse: weight count ", w.numel(),
                 " does not match channels ", K);
  const int mn = M * N;
  const float* pa = av.data();
  const float* pb = ref.value().data();
  double total = 0.0;
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k) {
      const std::size_t off = (static_cast<std::size_t>(b) * K + k) * mn;
      double s = 0.0;
      for (int i = 0; i < mn; ++i) {
        const double d = static_cast<double>(pa[off + i]) - pb[off + i];
        s += d * d;
      }
      total += static_cast<double>(w[k]) * (s / mn);
    }
  total /= static_cast<double>(B) * K;
  return make_op(
      Tensor::scalar(static_cast<float>(total)), {rec, ref},
      [B, K, mn, w](Node& self) {
        const float g0 = self.grad.data()[0];
        const float* pa = self.parents[0]->value.data();
        const float* pb = self.parents[1]->value.data();
        const double denom = static_cast<double>(B) * K * mn;
        for (int side = 0; side < 2; ++side) {
          if (!self.parents[side]->requires_grad) continue;
          float* d = self.parents[side]->ensure_grad().data();
          const float sign = side == 0 ? 1.0f : -1.0f;
          for (int b = 0; b < B; ++b)
            for (int k = 0; k < K; ++k) {
              const float c =
                  sign * g0 * 2.0f * w[k] / static_cast<float>(denom);
              const std::size_t off = (static_cast<std::size_t>(b) * K + k) * mn;
              for (int i = 0; i < mn; ++i)
                d[off + i] += c * (pa[off + i] - pb[off + i]);
            }
        }
      });
}

// Diagonal-Gaussian negative log-likelihood, mean over rows. logvar is floored
// elementwise at log(var_floor); floored entries get zero variance gradient.
inline Var gaussian_nll(const Var& mu, const Var& logvar, const Tensor& target,
                        float var_floor = 1e-6f) {
  const Tensor& mv = mu.value();
  check_contract(mv.same_shape(logvar.value()) && mv.same_shape(target),
                 "gaussian_nll: shape mismatch");
  check_contract(mv.rank() == 2, "gaussian_nll: expected 2-D inputs");
  const int B = mv.dim(0), C = mv.dim(1);
  const float log_floor = std::log(var_floor);
  const float* pm = mv.data();
  const float* ps = logvar.value().data();
  const float* pt = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < mv.numel(); ++i) {
    const float s = std::max(ps[i], log_floor);
    const double diff = static_cast<double>(pt[i]) - pm[i];
    total += 0.5 * (s + diff * diff * std::exp(-s) + 1.8378770664093454836);
  }
  total /= B;
  return make_op(
      Tensor::scalar(static_cast<float>(total)), {mu, logvar},
      [B, C, target, log_floor](Node& self) {
        const float g0 = self.grad.data()[0] / B;
        const float* pm = self.parents[0]->value.data();
        const float* ps = self.parents[1]->value.data();
        const float* pt = target.data();
        const std::size_t n = static_cast<std::size_t>(B) * C;
        if (self.parents[0]->requires_grad) {
          float* d = self.parents[0]->ensure_grad().data();
          for (std::size_t i = 0; i < n; ++i) {
            const float s = std::max(ps[i], log_floor);
            d[i] += g0 * (pm[i] - pt[i]) * std::exp(-s);
          }
        }
        if (self.parents[1]->requires_grad) {
          float* d = self.parents[1]->ensure_grad().data();
          for (std::size_t i = 0; i < n; ++i) {
            if (ps[i] <= log_floor) continue;
            const float diff = pt[i] - pm[i];
            d[i] += g0 * 0.5f * (1.0f - diff * diff * std::exp(-ps[i]));
          }
        }
      });
}

}  // namespace saic
