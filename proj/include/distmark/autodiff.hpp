#pragma once

// Tape-based reverse-mode differentiation over small dense tensors.
// A Graph is built fresh for each optimization step; leaves are created with
// input()/param(), ops append nodes, backward() walks the tape in reverse.
// Instantiated with T=float for training and T=double for gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "distmark/errors.hpp"
#include "distmark/tensor.hpp"

namespace distmark {

template <typename T>
class Graph {
 public:
  using Id = std::int32_t;

  Id input(TensorT<T> v, bool requires_grad) {
    Node node;
    node.value = std::move(v);
    node.requires_grad = requires_grad;
    node.grad = TensorT<T>(node.value.shape);
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }
  Id constant(TensorT<T> v) { return input(std::move(v), false); }
  Id param(TensorT<T> v) { return input(std::move(v), true); }

  const TensorT<T>& value(Id id) const { return nodes_[id].value; }
  const TensorT<T>& grad(Id id) const { return nodes_[id].grad; }
  bool needs_grad(Id id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Id add(Id a, Id b) {
    check_same_shape(a, b, "add");
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    const auto& vb = nodes_[b].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va[i] + vb[i];
    return emit(std::move(out), {a, b}, [a, b](Graph& g, const TensorT<T>& go) {
      g.accumulate(a, go.data, [](T gv, std::size_t) { return gv; });
      g.accumulate(b, go.data, [](T gv, std::size_t) { return gv; });
    });
  }

  Id sub(Id a, Id b) {
    check_same_shape(a, b, "sub");
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    const auto& vb = nodes_[b].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va[i] - vb[i];
    return emit(std::move(out), {a, b}, [a, b](Graph& g, const TensorT<T>& go) {
      g.accumulate(a, go.data, [](T gv, std::size_t) { return gv; });
      g.accumulate(b, go.data, [](T gv, std::size_t) { return -gv; });
    });
  }

  Id mul(Id a, Id b) {
    check_same_shape(a, b, "mul");
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    const auto& vb = nodes_[b].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va[i] * vb[i];
    return emit(std::move(out), {a, b}, [a, b](Graph& g, const TensorT<T>& go) {
      const auto& va = g.nodes_[a].value.data;
      const auto& vb = g.nodes_[b].value.data;
      g.accumulate(a, go.data, [&vb](T gv, std::size_t i) { return gv * vb[i]; });
      g.accumulate(b, go.data, [&va](T gv, std::size_t i) { return gv * va[i]; });
    });
  }

  Id div(Id a, Id b) {
    check_same_shape(a, b, "div");
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    const auto& vb = nodes_[b].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va[i] / vb[i];
    return emit(std::move(out), {a, b}, [a, b](Graph& g, const TensorT<T>& go) {
      const auto& va = g.nodes_[a].value.data;
      const auto& vb = g.nodes_[b].value.data;
      g.accumulate(a, go.data, [&vb](T gv, std::size_t i) { return gv / vb[i]; });
      g.accumulate(b, go.data, [&va, &vb](T gv, std::size_t i) {
        return -gv * va[i] / (vb[i] * vb[i]);
      });
    });
  }

  Id scale(Id a, T s) {
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va[i] * s;
    return emit(std::move(out), {a}, [a, s](Graph& g, const TensorT<T>& go) {
      g.accumulate(a, go.data, [s](T gv, std::size_t) { return gv * s; });
    });
  }

  Id add_scalar(Id a, T s) {
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va[i] + s;
    return emit(std::move(out), {a}, [a](Graph& g, const TensorT<T>& go) {
      g.accumulate(a, go.data, [](T gv, std::size_t) { return gv; });
    });
  }

  Id exp(Id a) {
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::exp(va[i]);
    Id id = emit(std::move(out), {a}, nullptr);
    attach(id, [a, id](Graph& g, const TensorT<T>& go) {
      const auto& vo = g.nodes_[id].value.data;
      g.accumulate(a, go.data, [&vo](T gv, std::size_t i) { return gv * vo[i]; });
    });
    return id;
  }

  Id log(Id a) {
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::log(va[i]);
    return emit(std::move(out), {a}, [a](Graph& g, const TensorT<T>& go) {
      const auto& va = g.nodes_[a].value.data;
      g.accumulate(a, go.data, [&va](T gv, std::size_t i) { return gv / va[i]; });
    });
  }

  Id relu(Id a) {
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = va[i] > T(0) ? va[i] : T(0);
    return emit(std::move(out), {a}, [a](Graph& g, const TensorT<T>& go) {
      const auto& va = g.nodes_[a].value.data;
      g.accumulate(a, go.data, [&va](T gv, std::size_t i) {
        return va[i] > T(0) ? gv : T(0);
      });
    });
  }

  Id clamp_min(Id a, T lo) {
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = va[i] > lo ? va[i] : lo;
    return emit(std::move(out), {a}, [a, lo](Graph& g, const TensorT<T>& go) {
      const auto& va = g.nodes_[a].value.data;
      g.accumulate(a, go.data, [&va, lo](T gv, std::size_t i) {
        return va[i] > lo ? gv : T(0);
      });
    });
  }

  Id clamp01(Id a) {
    TensorT<T> out(nodes_[a].value.shape);
    const auto& va = nodes_[a].value.data;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = va[i] < T(0) ? T(0) : (va[i] > T(1) ? T(1) : va[i]);
    return emit(std::move(out), {a}, [a](Graph& g, const TensorT<T>& go) {
      const auto& va = g.nodes_[a].value.data;
      g.accumulate(a, go.data, [&va](T gv, std::size_t i) {
        return (va[i] >= T(0) && va[i] <= T(1)) ? gv : T(0);
      });
    });
  }

  Id reshape(Id a, std::vector<std::size_t> shape) {
    if (TensorT<T>::numel_of(shape) != nodes_[a].value.numel()) {
      raise(ErrorCode::ShapeMismatch, "reshape changes element count");
    }
    TensorT<T> out(std::move(shape), nodes_[a].value.data);
    return emit(std::move(out), {a}, [a](Graph& g, const TensorT<T>& go) {
      g.accumulate(a, go.data, [](T gv, std::size_t) { return gv; });
    });
  }

  Id sum(Id a) {
    T total = T(0);
    for (T v : nodes_[a].value.data) total += v;
    TensorT<T> out({1});
    out.data[0] = total;
    return emit(std::move(out), {a}, [a](Graph& g, const TensorT<T>& go) {
      T gv = go.data[0];
      auto& ga = g.nodes_[a].grad.data;
      if (!g.nodes_[a].requires_grad) return;
      for (auto& x : ga) x += gv;
    });
  }

  Id mean(Id a) {
    std::size_t n = nodes_[a].value.numel();
    if (n == 0) raise(ErrorCode::EmptyBatch, "mean of empty tensor");
    T total = T(0);
    for (T v : nodes_[a].value.data) total += v;
    TensorT<T> out({1});
    out.data[0] = total / static_cast<T>(n);
    return emit(std::move(out), {a}, [a, n](Graph& g, const TensorT<T>& go) {
      if (!g.nodes_[a].requires_grad) return;
      T gv = go.data[0] / static_cast<T>(n);
      for (auto& x : g.nodes_[a].grad.data) x += gv;
    });
  }

  // [B, C, H, W] -> [B], per-sample mean over channel and spatial dims.
  Id mean_chw(Id a) {
    const auto& va = nodes_[a].value;
    if (va.rank() != 4) raise(ErrorCode::ShapeMismatch, "mean_chw expects rank 4");
    std::size_t b = va.dim(0);
    std::size_t inner = va.numel() / b;
    TensorT<T> out({b});
    for (std::size_t i = 0; i < b; ++i) {
      T total = T(0);
      for (std::size_t j = 0; j < inner; ++j) total += va.data[i * inner + j];
      out.data[i] = total / static_cast<T>(inner);
    }
    return emit(std::move(out), {a}, [a, b, inner](Graph& g, const TensorT<T>& go) {
      if (!g.nodes_[a].requires_grad) return;
      auto& ga = g.nodes_[a].grad.data;
      for (std::size_t i = 0; i < b; ++i) {
        T gv = go.data[i] / static_cast<T>(inner);
        for (std::size_t j = 0; j < inner; ++j) ga[i * inner + j] += gv;
      }
    });
  }

  // out[i] = table[rows[i]] where table is [K, ...]; backward scatter-adds.
  Id gather_rows(Id table, std::vector<std::int32_t> rows) {
    const auto& vt = nodes_[table].value;
    if (vt.rank() < 2) raise(ErrorCode::ShapeMismatch, "gather_rows expects rank >= 2");
    std::size_t k = vt.dim(0);
    std::size_t inner = vt.numel() / k;
    std::vector<std::size_t> shape = vt.shape;
    shape[0] = rows.size();
    TensorT<T> out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto r = static_cast<std::size_t>(rows[i]);
      if (rows[i] < 0 || r >= k) raise(ErrorCode::ShapeMismatch, "gather row out of range");
      for (std::size_t j = 0; j < inner; ++j)
        out.data[i * inner + j] = vt.data[r * inner + j];
    }
    return emit(std::move(out), {table},
                [table, rows = std::move(rows), inner](Graph& g, const TensorT<T>& go) {
      if (!g.nodes_[table].requires_grad) return;
      auto& gt = g.nodes_[table].grad.data;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        auto r = static_cast<std::size_t>(rows[i]);
        for (std::size_t j = 0; j < inner; ++j)
          gt[r * inner + j] += go.data[i * inner + j];
      }
    });
  }

  // x [N, Cin, H, W], w [Cout, Cin, kh, kw] (odd kernel), bias [Cout].
  // Stride 1, zero padding k/2, output spatial size preserved.
  Id conv2d(Id x, Id w, Id bias) {
    const auto& vx = nodes_[x].value;
    const auto& vw = nodes_[w].value;
    const auto& vb = nodes_[bias].value;
    if (vx.rank() != 4 || vw.rank() != 4 || vb.rank() != 1)
      raise(ErrorCode::ShapeMismatch, "conv2d rank");
    std::size_t n = vx.dim(0), ci = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
    std::size_t co = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    if (vw.dim(1) != ci || vb.dim(0) != co || kh % 2 == 0 || kw % 2 == 0)
      raise(ErrorCode::ShapeMismatch, "conv2d kernel/channel mismatch");
    std::size_t ph = kh / 2, pw = kw / 2;
    TensorT<T> out({n, co, h, wd});
    for (std::size_t in = 0; in < n; ++in)
      for (std::size_t f = 0; f < co; ++f)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < wd; ++xx) {
            T acc = vb.data[f];
            for (std::size_t c = 0; c < ci; ++c)
              for (std::size_t ky = 0; ky < kh; ++ky) {
                std::size_t iy = y + ky;
                if (iy < ph || iy - ph >= h) continue;
                iy -= ph;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  std::size_t ix = xx + kx;
                  if (ix < pw || ix - pw >= wd) continue;
                  ix -= pw;
                  acc += vx.data[vx.idx4(in, c, iy, ix)] *
                         vw.data[vw.idx4(f, c, ky, kx)];
                }
              }
            out.data[out.idx4(in, f, y, xx)] = acc;
          }
    return emit(std::move(out), {x, w, bias},
                [x, w, bias](Graph& g, const TensorT<T>& go) {
      const auto& vx = g.nodes_[x].value;
      const auto& vw = g.nodes_[w].value;
      std::size_t n = vx.dim(0), ci = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
      std::size_t co = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
      std::size_t ph = kh / 2, pw = kw / 2;
      bool gx = g.nodes_[x].requires_grad;
      bool gw = g.nodes_[w].requires_grad;
      bool gb = g.nodes_[bias].requires_grad;
      auto& dx = g.nodes_[x].grad;
      auto& dw = g.nodes_[w].grad;
      auto& db = g.nodes_[bias].grad;
      for (std::size_t in = 0; in < n; ++in)
        for (std::size_t f = 0; f < co; ++f)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < wd; ++xx) {
              T gv = go.data[go.idx4(in, f, y, xx)];
              if (gv == T(0)) continue;
              if (gb) db.data[f] += gv;
              for (std::size_t c = 0; c < ci; ++c)
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  std::size_t iy = y + ky;
                  if (iy < ph || iy - ph >= h) continue;
                  iy -= ph;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    std::size_t ix = xx + kx;
                    if (ix < pw || ix - pw >= wd) continue;
                    ix -= pw;
                    if (gx)
                      dx.data[vx.idx4(in, c, iy, ix)] +=
                          gv * vw.data[vw.idx4(f, c, ky, kx)];
                    if (gw)
                      dw.data[vw.idx4(f, c, ky, kx)] +=
                          gv * vx.data[vx.idx4(in, c, iy, ix)];
                  }
                }
            }
    });
  }

  // Depthwise valid-mode correlation with a fixed (non-learned) kernel.
  Id blur_valid(Id x, std::vector<T> kernel, std::size_t kh, std::size_t kw) {
    const auto& vx = nodes_[x].value;
    if (vx.rank() != 4) raise(ErrorCode::ShapeMismatch, "blur_valid expects rank 4");
    if (kernel.size() != kh * kw) raise(ErrorCode::ShapeMismatch, "blur kernel size");
    std::size_t n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
    if (h < kh || wd < kw)
      raise(ErrorCode::ImageTooSmall, "blur window larger than image");
    std::size_t oh = h - kh + 1, ow = wd - kw + 1;
    TensorT<T> out({n, c, oh, ow});
    for (std::size_t in = 0; in < n; ++in)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) {
            T acc = T(0);
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx)
                acc += vx.data[vx.idx4(in, ch, y + ky, xx + kx)] *
                       kernel[ky * kw + kx];
            out.data[out.idx4(in, ch, y, xx)] = acc;
          }
    return emit(std::move(out), {x},
                [x, kernel = std::move(kernel), kh, kw](Graph& g,
                                                        const TensorT<T>& go) {
      if (!g.nodes_[x].requires_grad) return;
      const auto& vx = g.nodes_[x].value;
      auto& dx = g.nodes_[x].grad;
      std::size_t n = vx.dim(0), c = vx.dim(1);
      std::size_t oh = go.dim(2), ow = go.dim(3);
      for (std::size_t in = 0; in < n; ++in)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
              T gv = go.data[go.idx4(in, ch, y, xx)];
              if (gv == T(0)) continue;
              for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx)
                  dx.data[vx.idx4(in, ch, y + ky, xx + kx)] +=
                      gv * kernel[ky * kw + kx];
            }
    });
  }

  // 2x2 average pooling, stride 2; spatial dims must be even.
  Id avgpool2(Id x) {
    const auto& vx = nodes_[x].value;
    if (vx.rank() != 4) raise(ErrorCode::ShapeMismatch, "avgpool2 expects rank 4");
    std::size_t n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
    if (h % 2 != 0 || wd % 2 != 0 || h == 0 || wd == 0)
      raise(ErrorCode::ShapeMismatch, "avgpool2 needs even spatial dims");
    std::size_t oh = h / 2, ow = wd / 2;
    TensorT<T> out({n, c, oh, ow});
    for (std::size_t in = 0; in < n; ++in)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) {
            T acc = vx.data[vx.idx4(in, ch, 2 * y, 2 * xx)] +
                    vx.data[vx.idx4(in, ch, 2 * y, 2 * xx + 1)] +
                    vx.data[vx.idx4(in, ch, 2 * y + 1, 2 * xx)] +
                    vx.data[vx.idx4(in, ch, 2 * y + 1, 2 * xx + 1)];
            out.data[out.idx4(in, ch, y, xx)] = acc / T(4);
          }
    return emit(std::move(out), {x}, [x](Graph& g, const TensorT<T>& go) {
      if (!g.nodes_[x].requires_grad) return;
      const auto& vx = g.nodes_[x].value;
      auto& dx = g.nodes_[x].grad;
      std::size_t n = vx.dim(0), c = vx.dim(1);
      std::size_t oh = go.dim(2), ow = go.dim(3);
      for (std::size_t in = 0; in < n; ++in)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
              T gv = go.data[go.idx4(in, ch, y, xx)] / T(4);
              dx.data[vx.idx4(in, ch, 2 * y, 2 * xx)] += gv;
              dx.data[vx.idx4(in, ch, 2 * y, 2 * xx + 1)] += gv;
              dx.data[vx.idx4(in, ch, 2 * y + 1, 2 * xx)] += gv;
              dx.data[vx.idx4(in, ch, 2 * y + 1, 2 * xx + 1)] += gv;
            }
    });
  }

  // x [N, D], w [D, M], bias [M] -> [N, M].
  Id linear(Id x, Id w, Id bias) {
    const auto& vx = nodes_[x].value;
    const auto& vw = nodes_[w].value;
    const auto& vb = nodes_[bias].value;
    if (vx.rank() != 2 || vw.rank() != 2 || vb.rank() != 1 ||
        vx.dim(1) != vw.dim(0) || vw.dim(1) != vb.dim(0))
      raise(ErrorCode::ShapeMismatch, "linear shapes");
    std::size_t n = vx.dim(0), d = vx.dim(1), m = vw.dim(1);
    TensorT<T> out({n, m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        T acc = vb.data[j];
        for (std::size_t k = 0; k < d; ++k)
          acc += vx.data[i * d + k] * vw.data[k * m + j];
        out.data[i * m + j] = acc;
      }
    return emit(std::move(out), {x, w, bias},
                [x, w, bias](Graph& g, const TensorT<T>& go) {
      const auto& vx = g.nodes_[x].value;
      const auto& vw = g.nodes_[w].value;
      std::size_t n = vx.dim(0), d = vx.dim(1), m = vw.dim(1);
      bool gx = g.nodes_[x].requires_grad;
      bool gw = g.nodes_[w].requires_grad;
      bool gb = g.nodes_[bias].requires_grad;
      auto& dx = g.nodes_[x].grad;
      auto& dw = g.nodes_[w].grad;
      auto& db = g.nodes_[bias].grad;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          T gv = go.data[i * m + j];
          if (gv == T(0)) continue;
          if (gb) db.data[j] += gv;
          for (std::size_t k = 0; k < d; ++k) {
            if (gx) dx.data[i * d + k] += gv * vw.data[k * m + j];
            if (gw) dw.data[k * m + j] += gv * vx.data[i * d + k];
          }
        }
    });
  }

  // Mean over the batch of -log softmax(logits)[label]; log-sum-exp stabilized.
  Id softmax_cross_entropy(Id logits, std::vector<std::int32_t> labels) {
    const auto& vl = nodes_[logits].value;
    if (vl.rank() != 2) raise(ErrorCode::ShapeMismatch, "cross entropy expects [N,K]");
    std::size_t n = vl.dim(0), k = vl.dim(1);
    if (labels.size() != n) raise(ErrorCode::ShapeMismatch, "label count");
    if (n == 0) raise(ErrorCode::EmptyBatch, "cross entropy on empty batch");
    std::vector<T> probs(n * k);
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      auto y = static_cast<std::size_t>(labels[i]);
      if (labels[i] < 0 || y >= k)
        raise(ErrorCode::ShapeMismatch, "label out of range");
      T mx = vl.data[i * k];
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, vl.data[i * k + j]);
      T denom = T(0);
      for (std::size_t j = 0; j < k; ++j) {
        probs[i * k + j] = std::exp(vl.data[i * k + j] - mx);
        denom += probs[i * k + j];
      }
      for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= denom;
      loss += mx + std::log(denom) - vl.data[i * k + y];
    }
    TensorT<T> out({1});
    out.data[0] = loss / static_cast<T>(n);
    return emit(std::move(out), {logits},
                [logits, labels = std::move(labels), probs = std::move(probs), n,
                 k](Graph& g, const TensorT<T>& go) {
      if (!g.nodes_[logits].requires_grad) return;
      T gv = go.data[0] / static_cast<T>(n);
      auto& dl = g.nodes_[logits].grad.data;
      for (std::size_t i = 0; i < n; ++i) {
        auto y = static_cast<std::size_t>(labels[i]);
        for (std::size_t j = 0; j < k; ++j) {
          T ind = (j == y) ? T(1) : T(0);
          dl[i * k + j] += gv * (probs[i * k + j] - ind);
        }
      }
    });
  }

  // Row-wise cosine similarity of two [N, D] matrices -> [N].
  Id cosine_rows(Id a, Id b) {
    check_same_shape(a, b, "cosine_rows");
    const auto& va = nodes_[a].value;
    if (va.rank() != 2) raise(ErrorCode::ShapeMismatch, "cosine_rows expects [N,D]");
    std::size_t n = va.dim(0), d = va.dim(1);
    const auto& vb = nodes_[b].value;
    TensorT<T> out({n});
    const T eps = static_cast<T>(1e-12);
    for (std::size_t i = 0; i < n; ++i) {
      T dot = T(0), na = T(0), nb = T(0);
      for (std::size_t j = 0; j < d; ++j) {
        dot += va.data[i * d + j] * vb.data[i * d + j];
        na += va.data[i * d + j] * va.data[i * d + j];
        nb += vb.data[i * d + j] * vb.data[i * d + j];
      }
      out.data[i] = dot / std::max(std::sqrt(na) * std::sqrt(nb), eps);
    }
    return emit(std::move(out), {a, b}, [a, b, n, d, eps](Graph& g,
                                                          const TensorT<T>& go) {
      const auto& va = g.nodes_[a].value;
      const auto& vb = g.nodes_[b].value;
      bool ga = g.nodes_[a].requires_grad;
      bool gb = g.nodes_[b].requires_grad;
      auto& da = g.nodes_[a].grad;
      auto& db = g.nodes_[b].grad;
      for (std::size_t i = 0; i < n; ++i) {
        T gv = go.data[i];
        if (gv == T(0)) continue;
        T dot = T(0), na2 = T(0), nb2 = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          dot += va.data[i * d + j] * vb.data[i * d + j];
          na2 += va.data[i * d + j] * va.data[i * d + j];
          nb2 += vb.data[i * d + j] * vb.data[i * d + j];
        }
        T na = std::sqrt(na2), nb = std::sqrt(nb2);
        T denom = std::max(na * nb, eps);
        T cosv = dot / denom;
        for (std::size_t j = 0; j < d; ++j) {
          if (ga)
            da.data[i * d + j] +=
                gv * (vb.data[i * d + j] / denom -
                      cosv * va.data[i * d + j] / std::max(na2, eps));
          if (gb)
            db.data[i * d + j] +=
                gv * (va.data[i * d + j] / denom -
                      cosv * vb.data[i * d + j] / std::max(nb2, eps));
        }
      }
    });
  }

  void backward(Id root) {
    if (nodes_[root].value.numel() != 1)
      raise(ErrorCode::ShapeMismatch, "backward root must be scalar");
    for (auto& node : nodes_) {
      std::fill(node.grad.data.begin(), node.grad.data.end(), T(0));
    }
    nodes_[root].grad.data[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& node = nodes_[i];
      if (node.back && node.requires_grad) node.back(*this, node.grad);
    }
  }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    std::function<void(Graph&, const TensorT<T>&)> back;
  };

  std::vector<Node> nodes_;

  void check_same_shape(Id a, Id b, const char* op) const {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
      raise(ErrorCode::ShapeMismatch, std::string(op) + ": operand shapes differ");
  }

  Id emit(TensorT<T> value, std::initializer_list<Id> parents,
          std::function<void(Graph&, const TensorT<T>&)> back) {
    bool rg = false;
    for (Id p : parents) rg = rg || nodes_[p].requires_grad;
    Node node;
    node.value = std::move(value);
    node.grad = TensorT<T>(node.value.shape);
    node.requires_grad = rg;
    node.back = rg ? std::move(back) : nullptr;
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  void attach(Id id, std::function<void(Graph&, const TensorT<T>&)> back) {
    if (nodes_[id].requires_grad) nodes_[id].back = std::move(back);
  }

  template <typename F>
  void accumulate(Id target, const std::vector<T>& upstream, F&& fn) {
    if (!nodes_[target].requires_grad) return;
    auto& gt = nodes_[target].grad.data;
    for (std::size_t i = 0; i < upstream.size(); ++i)
      gt[i] += fn(upstream[i], i);
  }
};

}  // namespace distmark
