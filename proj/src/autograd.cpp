#include "enas/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <unordered_set>

#include "kernels.hpp"

namespace enas {

namespace {
thread_local bool g_no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

template <class T>
T* Node<T>::grad_buffer() {
  if (grad.empty() && value.numel() > 0) grad = BasicTensor<T>(value.shape());
  if (leaf && touched.size() != value.numel()) touched.assign(value.numel(), 0);
  return grad.data();
}

template <class T>
void Node<T>::mark_all_touched() {
  if (leaf) std::fill(touched.begin(), touched.end(), std::uint8_t{1});
}

template <class T>
void Node<T>::accumulate(const T* src) {
  T* g = grad_buffer();
  const std::size_t n = value.numel();
  for (std::size_t i = 0; i < n; ++i) g[i] += src[i];
  mark_all_touched();
}

template <class T>
void Node<T>::clear_grad() {
  grad = BasicTensor<T>();
  touched.clear();
}

template <class T>
Var<T> Var<T>::constant(BasicTensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node));
}

template <class T>
Var<T> Var<T>::parameter(BasicTensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var<T>(std::move(node));
}

namespace {

template <class T>
bool any_requires_grad(std::initializer_list<const Var<T>*> inputs) {
  for (const auto* v : inputs) {
    if (v && v->valid() && v->requires_grad()) return true;
  }
  return false;
}

/// Wraps a computed value as a graph node; attaches the closure only when
/// some input needs a gradient and grad recording is on.
template <class T, class Fn>
Var<T> make_result(BasicTensor<T> value, std::initializer_list<const Var<T>*> inputs, Fn&& fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->leaf = false;
  if (!g_no_grad && any_requires_grad<T>(inputs)) {
    node->requires_grad = true;
    for (const auto* v : inputs) {
      if (v && v->valid()) node->parents.push_back(v->ptr());
    }
    node->backward_fn = std::forward<Fn>(fn);
  }
  return Var<T>(std::move(node));
}

[[noreturn]] void dim_error(const std::string& op, const std::string& what) {
  throw DimensionError(op + ": " + what);
}

std::size_t conv_out_size(std::size_t in, int k, int stride, int pad) {
  const long long v = (static_cast<long long>(in) + 2LL * pad - k);
  if (v < 0) return 0;
  return static_cast<std::size_t>(v / stride + 1);
}

// Copies one channel plane into a zero-padded buffer of (h + 2p) x (w + 2p).
template <class T>
void pad_plane(const T* src, std::size_t h, std::size_t w, int pad, T* dst) {
  const std::size_t wp = w + 2 * pad;
  std::fill(dst, dst + (h + 2 * pad) * wp, T(0));
  for (std::size_t y = 0; y < h; ++y) std::memcpy(dst + (y + pad) * wp + pad, src + y * w, w * sizeof(T));
}

template <class T>
void im2col(const T* padded, std::size_t channels, std::size_t hp, std::size_t wp, int k, int stride,
            std::size_t ho, std::size_t wo, T* cols) {
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = padded + c * hp * wp;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const T* src = plane + (oy * stride + ki) * wp + kj;
          T* dst = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) dst[ox] = src[ox * stride];
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, std::size_t channels, std::size_t hp, std::size_t wp, int k, int stride,
                std::size_t ho, std::size_t wo, T* padded) {
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = padded + c * hp * wp;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          T* dst = plane + (oy * stride + ki) * wp + kj;
          const T* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) dst[ox * stride] += src[ox];
        }
      }
    }
  }
}

}  // namespace

// ---- backward ----------------------------------------------------------------

template <class T>
void backward(const Var<T>& loss) {
  if (!loss.valid() || loss.value().numel() != 1) {
    throw RankError("backward: loss must be a scalar, got shape " +
                    (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (!n->leaf) n->grad = BasicTensor<T>();
  }
  loss.node()->grad_buffer()[0] += T(1);
  loss.node()->mark_all_touched();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->leaf || !n->backward_fn || n->grad.empty()) continue;
    n->backward_fn(*n);
  }
}

// ---- conv2d ------------------------------------------------------------------

template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, int stride, int padding, int groups) {
  const auto& x = input.value();
  const auto& w = weight.value();
  if (x.rank() != 4) dim_error("conv2d", "input must be NCHW, got " + shape_str(x.shape()));
  if (w.rank() != 4) dim_error("conv2d", "weight must be [O, C/groups, k, k], got " + shape_str(w.shape()));
  if (groups < 1 || stride < 1 || padding < 0) dim_error("conv2d", "invalid stride/padding/groups");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const auto g = static_cast<std::size_t>(groups);
  if (c % g != 0) dim_error("conv2d", "input channels (axis 1) = " + std::to_string(c) + " not divisible by groups " + std::to_string(g));
  if (o % g != 0) dim_error("conv2d", "weight output channels (axis 0) = " + std::to_string(o) + " not divisible by groups");
  if (w.dim(1) != c / g) {
    dim_error("conv2d", "weight input channels (axis 1) = " + std::to_string(w.dim(1)) +
                            " but input channels / groups = " + std::to_string(c / g));
  }
  if (w.dim(3) != k || k % 2 == 0) dim_error("conv2d", "kernel must be square and odd, got " + shape_str(w.shape()));
  const int ki = static_cast<int>(k);
  const std::size_t ho = conv_out_size(h, ki, stride, padding), wo = conv_out_size(wd, ki, stride, padding);
  if (ho == 0 || wo == 0) dim_error("conv2d", "kernel larger than padded input (axes 2, 3)");

  const std::size_t cg = c / g, og = o / g;
  const std::size_t hp = h + 2 * padding, wp = wd + 2 * padding;
  const std::size_t hw = h * wd, ohw = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && padding == 0 && g == 1);
  const bool depthwise = (g == c && o == c && cg == 1);

  BasicTensor<T> y({n, o, ho, wo});
  if (pointwise) {
    for (std::size_t b = 0; b < n; ++b) kernels::gemm_nn(o, hw, c, w.data(), x.data() + b * c * hw, y.data() + b * o * hw);
  } else if (depthwise) {
    std::vector<T> padded(hp * wp);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        pad_plane(x.data() + (b * c + ch) * hw, h, wd, padding, padded.data());
        T* out = y.data() + (b * c + ch) * ohw;
        const T* kw = w.data() + ch * k * k;
        for (std::size_t a = 0; a < k; ++a) {
          for (std::size_t bb = 0; bb < k; ++bb) {
            const T wv = kw[a * k + bb];
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const T* src = padded.data() + (oy * stride + a) * wp + bb;
              T* dst = out + oy * wo;
              if (stride == 1) {
                for (std::size_t ox = 0; ox < wo; ++ox) dst[ox] += wv * src[ox];
              } else {
                for (std::size_t ox = 0; ox < wo; ++ox) dst[ox] += wv * src[ox * stride];
              }
            }
          }
        }
      }
    }
  } else {
    std::vector<T> padded(cg * hp * wp);
    std::vector<T> cols(cg * k * k * ohw);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t gi = 0; gi < g; ++gi) {
        for (std::size_t ch = 0; ch < cg; ++ch) {
          pad_plane(x.data() + (b * c + gi * cg + ch) * hw, h, wd, padding, padded.data() + ch * hp * wp);
        }
        im2col(padded.data(), cg, hp, wp, ki, stride, ho, wo, cols.data());
        kernels::gemm_nn(og, ohw, cg * k * k, w.data() + gi * og * cg * k * k, cols.data(),
                         y.data() + (b * o + gi * og) * ohw);
      }
    }
  }

  return make_result<T>(std::move(y), {&input, &weight}, [=, xin = input.ptr(), wgt = weight.ptr()](Node<T>& self) {
    const auto& x = xin->value;
    const auto& w = wgt->value;
    const T* dy = self.grad.data();
    const bool need_dx = xin->requires_grad;
    const bool need_dw = wgt->requires_grad;
    BasicTensor<T> dx = need_dx ? BasicTensor<T>(x.shape()) : BasicTensor<T>();
    BasicTensor<T> dw = need_dw ? BasicTensor<T>(w.shape()) : BasicTensor<T>();
    if (pointwise) {
      for (std::size_t b = 0; b < n; ++b) {
        const T* dyb = dy + b * o * hw;
        if (need_dw) kernels::gemm_nt(o, c, hw, dyb, x.data() + b * c * hw, dw.data());
        if (need_dx) kernels::gemm_tn(c, hw, o, w.data(), dyb, dx.data() + b * c * hw);
      }
    } else if (depthwise) {
      std::vector<T> padded(hp * wp), dpad(hp * wp);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          pad_plane(x.data() + (b * c + ch) * hw, h, wd, padding, padded.data());
          std::fill(dpad.begin(), dpad.end(), T(0));
          const T* dyp = dy + (b * c + ch) * ohw;
          const T* kw = w.data() + ch * k * k;
          T* dkw = need_dw ? dw.data() + ch * k * k : nullptr;
          for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t bb = 0; bb < k; ++bb) {
              const T wv = kw[a * k + bb];
              T acc = 0;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const T* src = padded.data() + (oy * stride + a) * wp + bb;
                T* dsrc = dpad.data() + (oy * stride + a) * wp + bb;
                const T* g = dyp + oy * wo;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  acc += g[ox] * src[ox * stride];
                  dsrc[ox * stride] += wv * g[ox];
                }
              }
              if (need_dw) dkw[a * k + bb] += acc;
            }
          }
          if (need_dx) {
            T* dxp = dx.data() + (b * c + ch) * hw;
            for (std::size_t yy = 0; yy < h; ++yy) {
              const T* src = dpad.data() + (yy + padding) * wp + padding;
              for (std::size_t xx = 0; xx < wd; ++xx) dxp[yy * wd + xx] += src[xx];
            }
          }
        }
      }
    } else {
      std::vector<T> padded(cg * hp * wp), dpad(cg * hp * wp);
      std::vector<T> cols(cg * k * k * ohw), dcols(cg * k * k * ohw);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t gi = 0; gi < g; ++gi) {
          const T* dyg = dy + (b * o + gi * og) * ohw;
          const std::size_t kk = cg * k * k;
          if (need_dw) {
            for (std::size_t ch = 0; ch < cg; ++ch) {
              pad_plane(x.data() + (b * c + gi * cg + ch) * hw, h, wd, padding, padded.data() + ch * hp * wp);
            }
            im2col(padded.data(), cg, hp, wp, ki, stride, ho, wo, cols.data());
            kernels::gemm_nt(og, kk, ohw, dyg, cols.data(), dw.data() + gi * og * kk);
          }
          if (need_dx) {
            std::fill(dcols.begin(), dcols.end(), T(0));
            kernels::gemm_tn(kk, ohw, og, w.data() + gi * og * kk, dyg, dcols.data());
            std::fill(dpad.begin(), dpad.end(), T(0));
            col2im_add(dcols.data(), cg, hp, wp, ki, stride, ho, wo, dpad.data());
            for (std::size_t ch = 0; ch < cg; ++ch) {
              T* dxp = dx.data() + (b * c + gi * cg + ch) * hw;
              const T* plane = dpad.data() + ch * hp * wp;
              for (std::size_t yy = 0; yy < h; ++yy) {
                for (std::size_t xx = 0; xx < wd; ++xx) dxp[yy * wd + xx] += plane[(yy + padding) * wp + xx + padding];
              }
            }
          }
        }
      }
    }
    if (need_dx) xin->accumulate(dx.data());
    if (need_dw) wgt->accumulate(dw.data());
  });
}

// ---- normalization -----------------------------------------------------------

template <class T>
Var<T> normalize_batch(const Var<T>& input, const Var<T>& scale_v, const Var<T>& shift_v, NormMode mode,
                       const NormStats<T>* calib, NormStats<T>* batch_stats) {
  const auto& x = input.value();
  if (x.rank() != 4) dim_error("normalize_batch", "input must be NCHW, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (scale_v.value().numel() != c || shift_v.value().numel() != c) {
    dim_error("normalize_batch", "scale/shift length must equal channels (axis 1) = " + std::to_string(c));
  }
  if (mode == NormMode::eval) {
    if (!calib) throw MissingCalibrationError("normalize_batch: eval mode requires calibration statistics");
    if (calib->mean.size() != c || calib->var.size() != c) {
      dim_error("normalize_batch", "calibration statistics sized " + std::to_string(calib->mean.size()) +
                                       " but channels (axis 1) = " + std::to_string(c));
    }
  }
  if (n * hw == 0) dim_error("normalize_batch", "empty batch");

  std::vector<T> mean(c), invstd(c), var(c);
  const double count = static_cast<double>(n * hw);
  if (mode == NormMode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / count;
      double v = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - m;
          v += d * d;
        }
      }
      mean[ch] = static_cast<T>(m);
      var[ch] = static_cast<T>(v / count);
    }
    if (batch_stats) *batch_stats = NormStats<T>{mean, var};
  } else {
    mean = calib->mean;
    var = calib->var;
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    invstd[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[ch]) + kNormEpsilon));
  }

  BasicTensor<T> xhat(x.shape()), y(x.shape());
  const T* sc = scale_v.value().data();
  const T* sh = shift_v.value().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * hw;
      const T m = mean[ch], is = invstd[ch], a = sc[ch], s = sh[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (x[off + i] - m) * is;
        xhat[off + i] = xh;
        y[off + i] = a * xh + s;
      }
    }
  }

  return make_result<T>(
      std::move(y), {&input, &scale_v, &shift_v},
      [=, xin = input.ptr(), scp = scale_v.ptr(), shp = shift_v.ptr(), xhat = std::move(xhat)](Node<T>& self) {
        const T* dy = self.grad.data();
        std::vector<T> dscale(c, T(0)), dshift(c, T(0));
        for (std::size_t ch = 0; ch < c; ++ch) {
          double ds = 0, dsh = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              ds += static_cast<double>(dy[off + i]) * xhat[off + i];
              dsh += dy[off + i];
            }
          }
          dscale[ch] = static_cast<T>(ds);
          dshift[ch] = static_cast<T>(dsh);
        }
        if (xin->requires_grad) {
          BasicTensor<T> dx(xhat.shape());
          const T* sc = scp->value.data();
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T a = sc[ch] * invstd[ch];
            if (mode == NormMode::train) {
              const T inv_count = static_cast<T>(1.0 / count);
              const T mdy = dshift[ch] * inv_count, mdyx = dscale[ch] * inv_count;
              for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) dx[off + i] = a * (dy[off + i] - mdy - xhat[off + i] * mdyx);
              }
            } else {
              for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) dx[off + i] = a * dy[off + i];
              }
            }
          }
          xin->accumulate(dx.data());
        }
        if (scp->requires_grad) scp->accumulate(dscale.data());
        if (shp->requires_grad) shp->accumulate(dshift.data());
      });
}

// ---- elementwise -------------------------------------------------------------

template <class T>
Var<T> hswish(const Var<T>& x) {
  const auto& v = x.value();
  BasicTensor<T> y(v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) {
    const T a = v[i];
    y[i] = a * std::clamp(a + T(3), T(0), T(6)) / T(6);
  }
  return make_result<T>(std::move(y), {&x}, [xin = x.ptr()](Node<T>& self) {
    const auto& v = xin->value;
    std::vector<T> d(v.numel());
    for (std::size_t i = 0; i < v.numel(); ++i) {
      const T a = v[i];
      const T slope = a <= T(-3) ? T(0) : (a >= T(3) ? T(1) : (T(2) * a + T(3)) / T(6));
      d[i] = slope * self.grad[i];
    }
    xin->accumulate(d.data());
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  const auto& v = x.value();
  BasicTensor<T> y(v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) y[i] = v[i] > T(0) ? v[i] : T(0);
  return make_result<T>(std::move(y), {&x}, [xin = x.ptr()](Node<T>& self) {
    const auto& v = xin->value;
    std::vector<T> d(v.numel());
    for (std::size_t i = 0; i < v.numel(); ++i) d[i] = v[i] > T(0) ? self.grad[i] : T(0);
    xin->accumulate(d.data());
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) dim_error("add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  BasicTensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(y), {&a, &b}, [pa = a.ptr(), pb = b.ptr()](Node<T>& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.data());
    if (pb->requires_grad) pb->accumulate(self.grad.data());
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) dim_error("mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  BasicTensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(y), {&a, &b}, [pa = a.ptr(), pb = b.ptr()](Node<T>& self) {
    const std::size_t n = self.value.numel();
    std::vector<T> d(n);
    if (pa->requires_grad) {
      for (std::size_t i = 0; i < n; ++i) d[i] = self.grad[i] * pb->value[i];
      pa->accumulate(d.data());
    }
    if (pb->requires_grad) {
      for (std::size_t i = 0; i < n; ++i) d[i] = self.grad[i] * pa->value[i];
      pb->accumulate(d.data());
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  BasicTensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * factor;
  return make_result<T>(std::move(y), {&a}, [pa = a.ptr(), factor](Node<T>& self) {
    std::vector<T> d(self.value.numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = self.grad[i] * factor;
    pa->accumulate(d.data());
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return make_result<T>(BasicTensor<T>({1}, s), {&a}, [pa = a.ptr()](Node<T>& self) {
    std::vector<T> d(pa->value.numel(), self.grad[0]);
    pa->accumulate(d.data());
  });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& v = x.value();
  if (v.rank() != 4) dim_error("global_avg_pool", "input must be NCHW, got " + shape_str(v.shape()));
  const std::size_t n = v.dim(0), c = v.dim(1), hw = v.dim(2) * v.dim(3);
  BasicTensor<T> y({n, c});
  const T inv = T(1) / static_cast<T>(hw);
  for (std::size_t i = 0; i < n * c; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < hw; ++j) s += v[i * hw + j];
    y[i] = s * inv;
  }
  return make_result<T>(std::move(y), {&x}, [xin = x.ptr(), n, c, hw, inv](Node<T>& self) {
    std::vector<T> d(n * c * hw);
    for (std::size_t i = 0; i < n * c; ++i) {
      const T g = self.grad[i] * inv;
      std::fill(d.begin() + i * hw, d.begin() + (i + 1) * hw, g);
    }
    xin->accumulate(d.data());
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias) {
  const auto& xv = x.value();
  const auto& w = weight.value();
  if (xv.rank() != 2 || w.rank() != 2 || xv.dim(1) != w.dim(1)) {
    dim_error("linear", "input " + shape_str(xv.shape()) + " axis 1 must match weight " + shape_str(w.shape()) + " axis 1");
  }
  const std::size_t n = xv.dim(0), f = xv.dim(1), k = w.dim(0);
  if (bias && bias->value().numel() != k) dim_error("linear", "bias length must equal weight axis 0");
  BasicTensor<T> y({n, k});
  kernels::gemm_nt(n, k, f, xv.data(), w.data(), y.data());
  if (bias) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) y[i * k + j] += bias->value()[j];
    }
  }
  return make_result<T>(std::move(y), {&x, &weight, bias},
                        [=, xin = x.ptr(), wp = weight.ptr(), bp = bias ? bias->ptr() : nullptr](Node<T>& self) {
                          const T* dy = self.grad.data();
                          if (xin->requires_grad) {
                            std::vector<T> dx(n * f, T(0));
                            kernels::gemm_nn(n, f, k, dy, wp->value.data(), dx.data());
                            xin->accumulate(dx.data());
                          }
                          if (wp->requires_grad) {
                            std::vector<T> dw(k * f, T(0));
                            kernels::gemm_tn(k, f, n, dy, xin->value.data(), dw.data());
                            wp->accumulate(dw.data());
                          }
                          if (bp && bp->requires_grad) {
                            std::vector<T> db(k, T(0));
                            for (std::size_t i = 0; i < n; ++i) {
                              for (std::size_t j = 0; j < k; ++j) db[j] += dy[i * k + j];
                            }
                            bp->accumulate(db.data());
                          }
                        });
}

// ---- slicing -----------------------------------------------------------------

namespace {

// Visits every element of a sub-box: fn(source_index, destination_index).
template <class Fn>
void for_each_in_box(const Shape& src_shape, std::span<const std::size_t> offsets, std::span<const std::size_t> sizes,
                     Fn&& fn) {
  const std::size_t rank = src_shape.size();
  std::vector<std::size_t> src_stride(rank, 1);
  for (std::size_t a = rank; a-- > 1;) src_stride[a - 1] = src_stride[a] * src_shape[a];
  const std::size_t total = shape_numel(Shape(sizes.begin(), sizes.end()));
  if (total == 0) return;
  const std::size_t inner = sizes[rank - 1];
  const std::size_t rows = total / inner;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t dst = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t src = offsets[rank - 1];
    for (std::size_t a = 0; a + 1 < rank; ++a) src += (offsets[a] + idx[a]) * src_stride[a];
    fn(src, dst, inner);
    dst += inner;
    for (std::size_t a = rank - 1; a-- > 0;) {
      if (++idx[a] < sizes[a]) break;
      idx[a] = 0;
    }
  }
}

}  // namespace

template <class T>
Var<T> crop(const Var<T>& x, std::span<const std::size_t> offsets, std::span<const std::size_t> sizes) {
  const Shape& s = x.shape();
  if (offsets.size() != s.size() || sizes.size() != s.size()) dim_error("crop", "offset/size rank mismatch");
  for (std::size_t a = 0; a < s.size(); ++a) {
    if (offsets[a] + sizes[a] > s[a]) {
      dim_error("crop", "axis " + std::to_string(a) + " range [" + std::to_string(offsets[a]) + ", " +
                            std::to_string(offsets[a] + sizes[a]) + ") exceeds extent " + std::to_string(s[a]));
    }
  }
  Shape out_shape(sizes.begin(), sizes.end());
  if (out_shape == s) {
    // Full view: still a distinct node so gradient bookkeeping stays uniform.
    BasicTensor<T> y = x.value();
    return make_result<T>(std::move(y), {&x}, [xin = x.ptr()](Node<T>& self) { xin->accumulate(self.grad.data()); });
  }
  BasicTensor<T> y(out_shape);
  const T* src = x.value().data();
  T* dst = y.data();
  for_each_in_box(s, offsets, sizes, [&](std::size_t si, std::size_t di, std::size_t len) {
    std::memcpy(dst + di, src + si, len * sizeof(T));
  });
  std::vector<std::size_t> off(offsets.begin(), offsets.end()), sz(sizes.begin(), sizes.end());
  return make_result<T>(std::move(y), {&x}, [xin = x.ptr(), off, sz](Node<T>& self) {
    T* g = xin->grad_buffer();
    const bool mark = xin->leaf;
    const T* dy = self.grad.data();
    for_each_in_box(xin->value.shape(), off, sz, [&](std::size_t si, std::size_t di, std::size_t len) {
      for (std::size_t i = 0; i < len; ++i) g[si + i] += dy[di + i];
      if (mark) std::fill(xin->touched.begin() + si, xin->touched.begin() + si + len, std::uint8_t{1});
    });
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  BasicTensor<T> y = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(y), {&x}, [xin = x.ptr()](Node<T>& self) { xin->accumulate(self.grad.data()); });
}

template <class T>
Var<T> narrow_rows(const Var<T>& x, std::size_t begin, std::size_t count) {
  std::vector<std::size_t> off(x.shape().size(), 0), sz(x.shape().begin(), x.shape().end());
  if (off.empty()) dim_error("narrow_rows", "scalar input");
  off[0] = begin;
  sz[0] = count;
  return crop(x, off, sz);
}

// ---- losses ------------------------------------------------------------------

template <class T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits) {
  if (logits.rank() != 2) dim_error("softmax_rows", "expected [N, K], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.data() + i * k;
    T* out = p.data() + i * k;
    const T mx = *std::max_element(z, z + k);
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) {
      out[j] = static_cast<T>(std::exp(static_cast<double>(z[j] - mx)));
      s += out[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[j] = static_cast<T>(out[j] / s);
  }
  return p;
}

namespace {

template <class T>
void check_ce_inputs(const BasicTensor<T>& z, std::span<const int> targets) {
  if (z.rank() != 2) dim_error("cross_entropy", "logits must be [N, K], got " + shape_str(z.shape()));
  if (z.dim(1) < 2) dim_error("cross_entropy", "need at least 2 classes (axis 1)");
  if (targets.size() != z.dim(0)) {
    dim_error("cross_entropy", "target count " + std::to_string(targets.size()) + " vs logits rows (axis 0) " +
                                   std::to_string(z.dim(0)));
  }
  const auto k = static_cast<int>(z.dim(1));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= k) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(k) + ")");
    }
  }
}

// Per-row loss -log softmax(z)[t] computed as logsumexp(z - max) - (z_t - max).
template <class T>
std::vector<double> row_losses(const BasicTensor<T>& z, std::span<const int> targets) {
  const std::size_t n = z.dim(0), k = z.dim(1);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    out[i] = std::log(s) - (static_cast<double>(row[targets[i]]) - mx);
  }
  return out;
}

}  // namespace

template <class T>
Var<T> cross_entropy_from_logits(const Var<T>& logits, std::span<const int> targets, Reduction reduction) {
  const auto& z = logits.value();
  check_ce_inputs(z, targets);
  const std::size_t n = z.dim(0), k = z.dim(1);
  const auto losses = row_losses(z, targets);
  std::vector<int> tg(targets.begin(), targets.end());
  if (reduction == Reduction::none) {
    BasicTensor<T> y({n});
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<T>(losses[i]);
    return make_result<T>(std::move(y), {&logits}, [zin = logits.ptr(), tg, n, k](Node<T>& self) {
      BasicTensor<T> p = softmax_rows(zin->value);
      for (std::size_t i = 0; i < n; ++i) {
        const T g = self.grad[i];
        for (std::size_t j = 0; j < k; ++j) p[i * k + j] = g * (p[i * k + j] - (static_cast<int>(j) == tg[i] ? T(1) : T(0)));
      }
      zin->accumulate(p.data());
    });
  }
  std::vector<T> ones(n, T(1));
  return weighted_cross_entropy<T>(logits, targets, ones, static_cast<T>(n));
}

template <class T>
Var<T> weighted_cross_entropy(const Var<T>& logits, std::span<const int> targets, std::span<const T> row_weights,
                              T denominator) {
  const auto& z = logits.value();
  check_ce_inputs(z, targets);
  if (row_weights.size() != z.dim(0)) dim_error("weighted_cross_entropy", "row weight count vs logits rows (axis 0)");
  if (!(denominator > T(0))) dim_error("weighted_cross_entropy", "denominator must be positive");
  const std::size_t n = z.dim(0), k = z.dim(1);
  const auto losses = row_losses(z, targets);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (row_weights[i] != T(0)) total += static_cast<double>(row_weights[i]) * losses[i];
  }
  BasicTensor<T> y({1}, static_cast<T>(total / static_cast<double>(denominator)));
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<T> wt(row_weights.begin(), row_weights.end());
  return make_result<T>(std::move(y), {&logits}, [zin = logits.ptr(), tg, wt, denominator, n, k](Node<T>& self) {
    BasicTensor<T> p = softmax_rows(zin->value);
    const T g = self.grad[0] / denominator;
    for (std::size_t i = 0; i < n; ++i) {
      const T gw = g * wt[i];
      for (std::size_t j = 0; j < k; ++j) {
        p[i * k + j] = gw == T(0) ? T(0) : gw * (p[i * k + j] - (static_cast<int>(j) == tg[i] ? T(1) : T(0)));
      }
    }
    zin->accumulate(p.data());
  });
}

// ---- instantiations ------------------------------------------------------------

#define ENAS_INSTANTIATE(T)                                                                                     \
  template struct Node<T>;                                                                                      \
  template class Var<T>;                                                                                        \
  template void backward(const Var<T>&);                                                                        \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, int, int, int);                                          \
  template Var<T> normalize_batch(const Var<T>&, const Var<T>&, const Var<T>&, NormMode, const NormStats<T>*,  \
                                  NormStats<T>*);                                                               \
  template Var<T> hswish(const Var<T>&);                                                                        \
  template Var<T> relu(const Var<T>&);                                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                            \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                            \
  template Var<T> scale(const Var<T>&, T);                                                                      \
  template Var<T> sum(const Var<T>&);                                                                           \
  template Var<T> global_avg_pool(const Var<T>&);                                                               \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>*);                                          \
  template Var<T> crop(const Var<T>&, std::span<const std::size_t>, std::span<const std::size_t>);              \
  template Var<T> narrow_rows(const Var<T>&, std::size_t, std::size_t);                                         \
  template Var<T> reshape(const Var<T>&, Shape);                                         \
  template Var<T> cross_entropy_from_logits(const Var<T>&, std::span<const int>, Reduction);                    \
  template Var<T> weighted_cross_entropy(const Var<T>&, std::span<const int>, std::span<const T>, T);           \
  template BasicTensor<T> softmax_rows(const BasicTensor<T>&);

ENAS_INSTANTIATE(float)
ENAS_INSTANTIATE(double)

#undef ENAS_INSTANTIATE

}  // namespace enas
