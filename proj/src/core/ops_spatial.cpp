// Convolution, pooling and resampling primitives over NCHW tensors.

#include <algorithm>
#include <cstring>
#include <limits>

#include "weedsense/core/ops.hpp"

namespace weedsense {
namespace {

template <typename Scalar>
using MatRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapRM = Eigen::Map<MatRM<Scalar>>;
template <typename Scalar>
using CMapRM = Eigen::Map<const MatRM<Scalar>>;
template <typename Scalar>
using StridedMapRM = Eigen::Map<MatRM<Scalar>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col scratch, in elements.
constexpr Index kColumnBudget = Index{1} << 22;

struct ConvGeometry {
  Index n, cin, h, w;
  Index cout, cin_g, cout_g;
  Index kh, kw, stride, pad, groups;
  Index ho, wo;

  Index patch() const { return cin_g * kh * kw; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  bool depthwise() const { return cin_g == 1 && cout_g == 1; }
  Index rows_per_tile() const {
    return std::clamp<Index>(kColumnBudget / std::max<Index>(1, patch() * wo), 1, ho);
  }
};

void require_rank(const Shape& s, int rank, const char* op, const char* what) {
  if (s.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + s.str());
  }
}

// Valid output-column range [lo, hi) whose input column ow*stride - pad + j lies in [0, w).
inline void valid_cols(Index w, Index wo, Index stride, Index pad, Index j, Index& lo, Index& hi) {
  const Index off = j - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = (w - 1 - off) < 0 ? 0 : (w - 1 - off) / stride + 1;
  lo = std::min(lo, wo);
  hi = std::clamp(hi, lo, wo);
}

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Index oh0, Index oh1, Scalar* col) {
  const Index len = (oh1 - oh0) * g.wo;
  for (Index c = 0; c < g.cin_g; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        Scalar* dst = col + ((c * g.kh + i) * g.kw + j) * len;
        Index lo, hi;
        valid_cols(g.w, g.wo, g.stride, g.pad, j, lo, hi);
        for (Index oh = oh0; oh < oh1; ++oh, dst += g.wo) {
          const Index ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, Scalar(0));
            continue;
          }
          const Scalar* src = x + (c * g.h + ih) * g.w + j - g.pad;
          std::fill(dst, dst + lo, Scalar(0));
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (Index ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride];
          }
          std::fill(dst + hi, dst + g.wo, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Index oh0, Index oh1, Scalar* x) {
  const Index len = (oh1 - oh0) * g.wo;
  for (Index c = 0; c < g.cin_g; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const Scalar* src = col + ((c * g.kh + i) * g.kw + j) * len;
        Index lo, hi;
        valid_cols(g.w, g.wo, g.stride, g.pad, j, lo, hi);
        for (Index oh = oh0; oh < oh1; ++oh, src += g.wo) {
          const Index ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.h) continue;
          Scalar* dst = x + (c * g.h + ih) * g.w + j - g.pad;
          for (Index ow = lo; ow < hi; ++ow) dst[ow * g.stride] += src[ow];
        }
      }
    }
  }
}

// Single-channel correlation: y (ho x wo) += x (h x w) * k (kh x kw).
template <typename Scalar>
void depthwise_forward(const Scalar* x, const Scalar* k, const ConvGeometry& g, Scalar* y) {
  for (Index oh = 0; oh < g.ho; ++oh) {
    Scalar* yrow = y + oh * g.wo;
    for (Index i = 0; i < g.kh; ++i) {
      const Index ih = oh * g.stride - g.pad + i;
      if (ih < 0 || ih >= g.h) continue;
      const Scalar* xrow = x + ih * g.w;
      for (Index j = 0; j < g.kw; ++j) {
        const Scalar kv = k[i * g.kw + j];
        Index lo, hi;
        valid_cols(g.w, g.wo, g.stride, g.pad, j, lo, hi);
        const Scalar* src = xrow + j - g.pad;
        if (g.stride == 1) {
          for (Index ow = lo; ow < hi; ++ow) yrow[ow] += kv * src[ow];
        } else {
          for (Index ow = lo; ow < hi; ++ow) yrow[ow] += kv * src[ow * g.stride];
        }
      }
    }
  }
}

template <typename Scalar>
void depthwise_backward(const Scalar* x, const Scalar* k, const Scalar* gy, const ConvGeometry& g,
                        Scalar* gx, Scalar* gk) {
  for (Index oh = 0; oh < g.ho; ++oh) {
    const Scalar* gyrow = gy + oh * g.wo;
    for (Index i = 0; i < g.kh; ++i) {
      const Index ih = oh * g.stride - g.pad + i;
      if (ih < 0 || ih >= g.h) continue;
      for (Index j = 0; j < g.kw; ++j) {
        Index lo, hi;
        valid_cols(g.w, g.wo, g.stride, g.pad, j, lo, hi);
        const Index base = ih * g.w + j - g.pad;
        if (gk != nullptr) {
          Scalar acc = 0;
          for (Index ow = lo; ow < hi; ++ow) acc += gyrow[ow] * x[base + ow * g.stride];
          gk[i * g.kw + j] += acc;
        }
        if (gx != nullptr) {
          const Scalar kv = k[i * g.kw + j];
          for (Index ow = lo; ow < hi; ++ow) gx[base + ow * g.stride] += kv * gyrow[ow];
        }
      }
    }
  }
}

template <typename Scalar>
ConvGeometry conv_geometry(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Conv2dOptions o) {
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(w.shape(), 4, "conv2d", "weight");
  if (o.groups < 1 || o.stride < 1 || o.padding < 0) {
    throw ConfigError("conv2d: stride and groups must be >= 1 and padding >= 0");
  }
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.cin_g = w.dim(1);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = o.stride;
  g.pad = o.padding;
  g.groups = o.groups;
  if (g.cin % g.groups != 0) {
    throw DimensionError("conv2d: input channel axis (1) extent " + std::to_string(g.cin) +
                         " not divisible by groups " + std::to_string(g.groups));
  }
  if (g.cin / g.groups != g.cin_g) {
    throw DimensionError("conv2d: weight axis 1 is " + std::to_string(g.cin_g) + " but input has " +
                         std::to_string(g.cin) + " channels in " + std::to_string(g.groups) +
                         " groups");
  }
  if (g.cout % g.groups != 0) {
    throw DimensionError("conv2d: output channel axis (weight axis 0) not divisible by groups");
  }
  g.cout_g = g.cout / g.groups;
  const Index hnum = g.h + 2 * g.pad - g.kh;
  const Index wnum = g.w + 2 * g.pad - g.kw;
  if (hnum < 0) throw DimensionError("conv2d: height axis (2) too small for kernel");
  if (wnum < 0) throw DimensionError("conv2d: width axis (3) too small for kernel");
  g.ho = hnum / g.stride + 1;
  g.wo = wnum / g.stride + 1;
  return g;
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   Conv2dOptions opts) {
  const Tensor<Scalar>& x = input.value();
  const Tensor<Scalar>& w = weight.value();
  const ConvGeometry g = conv_geometry(x, w, opts);
  if (bias.defined() && (bias.shape().rank() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d: bias must be [" + std::to_string(g.cout) + "], got " +
                         bias.shape().str());
  }
  MacCounter::add(g.n * g.cout * g.ho * g.wo * g.patch());

  Tensor<Scalar> y(Shape{g.n, g.cout, g.ho, g.wo});
  const Index plane_in = g.h * g.w;
  const Index plane_out = g.ho * g.wo;
  const Index rows = g.rows_per_tile();
  std::vector<Scalar> col;
  if (!g.pointwise() && !g.depthwise()) col.resize(static_cast<std::size_t>(g.patch() * rows * g.wo));

  for (Index n = 0; n < g.n; ++n) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      const Scalar* xg = x.data() + (n * g.cin + grp * g.cin_g) * plane_in;
      Scalar* yg = y.data() + (n * g.cout + grp * g.cout_g) * plane_out;
      const Scalar* wg = w.data() + grp * g.cout_g * g.patch();
      if (g.depthwise()) {
        depthwise_forward(xg, wg, g, yg);
      } else if (g.pointwise()) {
        MapRM<Scalar>(yg, g.cout_g, plane_out).noalias() =
            CMapRM<Scalar>(wg, g.cout_g, g.patch()) * CMapRM<Scalar>(xg, g.cin_g, plane_in);
      } else {
        for (Index oh0 = 0; oh0 < g.ho; oh0 += rows) {
          const Index oh1 = std::min(g.ho, oh0 + rows);
          const Index len = (oh1 - oh0) * g.wo;
          im2col(xg, g, oh0, oh1, col.data());
          StridedMapRM<Scalar>(yg + oh0 * g.wo, g.cout_g, len, Eigen::OuterStride<>(plane_out))
              .noalias() = CMapRM<Scalar>(wg, g.cout_g, g.patch()) *
                           CMapRM<Scalar>(col.data(), g.patch(), len);
        }
      }
    }
    if (bias.defined()) {
      MapRM<Scalar> yn(y.data() + n * g.cout * plane_out, g.cout, plane_out);
      yn.colwise() += bias.value().vec();
    }
  }

  const bool needs = detail::needs_grad<Scalar>({&input, &weight, &bias});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (!needs) return out;

  Node<Scalar>* self = out.node();
  auto xn = input.node_ptr();
  auto wn = weight.node_ptr();
  auto bn = bias.node_ptr();
  self->backward = [self, xn, wn, bn, g]() {
    const Tensor<Scalar>& gy = self->grad;
    const Tensor<Scalar>& x = xn->value();
    const Tensor<Scalar>& w = wn->value();
    const Index plane_in = g.h * g.w;
    const Index plane_out = g.ho * g.wo;
    Scalar* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
    Scalar* gw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
    if (bn && bn->requires_grad) {
      auto& gb = bn->grad_buffer().vec();
      for (Index n = 0; n < g.n; ++n) {
        gb += CMapRM<Scalar>(gy.data() + n * g.cout * plane_out, g.cout, plane_out).rowwise().sum();
      }
    }
    if (gx == nullptr && gw == nullptr) return;
    const Index rows = g.rows_per_tile();
    std::vector<Scalar> col, dcol;
    if (!g.pointwise() && !g.depthwise()) {
      col.resize(static_cast<std::size_t>(g.patch() * rows * g.wo));
      dcol.resize(col.size());
    }
    for (Index n = 0; n < g.n; ++n) {
      for (Index grp = 0; grp < g.groups; ++grp) {
        const Index xoff = (n * g.cin + grp * g.cin_g) * plane_in;
        const Index woff = grp * g.cout_g * g.patch();
        const Scalar* xg = x.data() + xoff;
        const Scalar* gyg = gy.data() + (n * g.cout + grp * g.cout_g) * plane_out;
        const Scalar* wg = w.data() + woff;
        if (g.depthwise()) {
          depthwise_backward(xg, wg, gyg, g, gx ? gx + xoff : nullptr, gw ? gw + woff : nullptr);
        } else if (g.pointwise()) {
          CMapRM<Scalar> gym(gyg, g.cout_g, plane_out);
          if (gw) {
            MapRM<Scalar>(gw + woff, g.cout_g, g.patch()).noalias() +=
                gym * CMapRM<Scalar>(xg, g.cin_g, plane_in).transpose();
          }
          if (gx) {
            MapRM<Scalar>(gx + xoff, g.cin_g, plane_in).noalias() +=
                CMapRM<Scalar>(wg, g.cout_g, g.patch()).transpose() * gym;
          }
        } else {
          for (Index oh0 = 0; oh0 < g.ho; oh0 += rows) {
            const Index oh1 = std::min(g.ho, oh0 + rows);
            const Index len = (oh1 - oh0) * g.wo;
            Eigen::Map<const MatRM<Scalar>, 0, Eigen::OuterStride<>> gyt(
                gyg + oh0 * g.wo, g.cout_g, len, Eigen::OuterStride<>(plane_out));
            if (gw) {
              im2col(xg, g, oh0, oh1, col.data());
              MapRM<Scalar>(gw + woff, g.cout_g, g.patch()).noalias() +=
                  gyt * CMapRM<Scalar>(col.data(), g.patch(), len).transpose();
            }
            if (gx) {
              MapRM<Scalar>(dcol.data(), g.patch(), len).noalias() =
                  CMapRM<Scalar>(wg, g.cout_g, g.patch()).transpose() * gyt;
              col2im_add(dcol.data(), g, oh0, oh1, gx + xoff);
            }
          }
        }
      }
    }
  };
  return out;
}

template <typename Scalar>
Var<Scalar> pixel_shuffle(const Var<Scalar>& x, int r) {
  require_rank(x.shape(), 4, "pixel_shuffle", "input");
  if (r < 1) throw ConfigError("pixel_shuffle: factor must be >= 1");
  const Index n = x.dim(0), cr = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index rr = Index{r} * r;
  if (cr % rr != 0) {
    throw DimensionError("pixel_shuffle: channel axis (1) extent " + std::to_string(cr) +
                         " not divisible by r^2 = " + std::to_string(rr));
  }
  const Index c = cr / rr;
  Tensor<Scalar> y(Shape{n, c, h * r, w * r});
  const Scalar* src = x.value().data();
  Scalar* dst = y.data();
  // output(n, c, h*r+i, w*r+j) = input(n, c*r^2 + i*r + j, h, w)
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      for (Index i = 0; i < r; ++i) {
        for (Index j = 0; j < r; ++j) {
          const Scalar* in = src + ((b * cr + ch * rr + i * r + j) * h) * w;
          Scalar* o = dst + ((b * c + ch) * h * r + i) * w * r + j;
          for (Index hh = 0; hh < h; ++hh) {
            Scalar* orow = o + hh * r * w * r;
            const Scalar* irow = in + hh * w;
            for (Index ww = 0; ww < w; ++ww) orow[ww * r] = irow[ww];
          }
        }
      }
    }
  }
  const bool needs = detail::needs_grad<Scalar>({&x});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn, r]() {
      Var<Scalar> g = pixel_unshuffle(Var<Scalar>::constant(self->grad), r);
      xn->grad_buffer() += g.value();
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> pixel_unshuffle(const Var<Scalar>& x, int r) {
  require_rank(x.shape(), 4, "pixel_unshuffle", "input");
  if (r < 1) throw ConfigError("pixel_unshuffle: factor must be >= 1");
  const Index n = x.dim(0), c = x.dim(1), hr = x.dim(2), wr = x.dim(3);
  if (hr % r != 0) throw DimensionError("pixel_unshuffle: height axis (2) not divisible by r");
  if (wr % r != 0) throw DimensionError("pixel_unshuffle: width axis (3) not divisible by r");
  const Index h = hr / r, w = wr / r, rr = Index{r} * r;
  Tensor<Scalar> y(Shape{n, c * rr, h, w});
  const Scalar* src = x.value().data();
  Scalar* dst = y.data();
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      for (Index i = 0; i < r; ++i) {
        for (Index j = 0; j < r; ++j) {
          Scalar* o = dst + ((b * c * rr + ch * rr + i * r + j) * h) * w;
          const Scalar* in = src + ((b * c + ch) * hr + i) * wr + j;
          for (Index hh = 0; hh < h; ++hh) {
            const Scalar* irow = in + hh * r * wr;
            Scalar* orow = o + hh * w;
            for (Index ww = 0; ww < w; ++ww) orow[ww] = irow[ww * r];
          }
        }
      }
    }
  }
  const bool needs = detail::needs_grad<Scalar>({&x});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn, r]() {
      Var<Scalar> g = pixel_shuffle(Var<Scalar>::constant(self->grad), r);
      xn->grad_buffer() += g.value();
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> adaptive_avg_pool(const Var<Scalar>& x, Index out_h, Index out_w) {
  require_rank(x.shape(), 4, "adaptive_avg_pool", "input");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h < 1 || out_h > h) {
    throw DimensionError("adaptive_avg_pool: output height " + std::to_string(out_h) +
                         " outside [1, " + std::to_string(h) + "] on axis 2");
  }
  if (out_w < 1 || out_w > w) {
    throw DimensionError("adaptive_avg_pool: output width " + std::to_string(out_w) +
                         " outside [1, " + std::to_string(w) + "] on axis 3");
  }
  auto start = [](Index i, Index in, Index out) { return (i * in) / out; };
  auto stop = [](Index i, Index in, Index out) { return ((i + 1) * in + out - 1) / out; };
  Tensor<Scalar> y(Shape{n, c, out_h, out_w});
  const Tensor<Scalar>& xv = x.value();
  for (Index p = 0; p < n * c; ++p) {
    const Scalar* plane = xv.data() + p * h * w;
    for (Index oh = 0; oh < out_h; ++oh) {
      const Index h0 = start(oh, h, out_h), h1 = stop(oh, h, out_h);
      for (Index ow = 0; ow < out_w; ++ow) {
        const Index w0 = start(ow, w, out_w), w1 = stop(ow, w, out_w);
        Scalar acc = 0;
        for (Index hh = h0; hh < h1; ++hh) {
          for (Index ww = w0; ww < w1; ++ww) acc += plane[hh * w + ww];
        }
        y[(p * out_h + oh) * out_w + ow] = acc / static_cast<Scalar>((h1 - h0) * (w1 - w0));
      }
    }
  }
  const bool needs = detail::needs_grad<Scalar>({&x});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn, n, c, h, w, out_h, out_w, start, stop]() {
      Tensor<Scalar>& gx = xn->grad_buffer();
      const Tensor<Scalar>& gy = self->grad;
      for (Index p = 0; p < n * c; ++p) {
        Scalar* plane = gx.data() + p * h * w;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index h0 = start(oh, h, out_h), h1 = stop(oh, h, out_h);
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index w0 = start(ow, w, out_w), w1 = stop(ow, w, out_w);
            const Scalar gv = gy[(p * out_h + oh) * out_w + ow] /
                              static_cast<Scalar>((h1 - h0) * (w1 - w0));
            for (Index hh = h0; hh < h1; ++hh) {
              for (Index ww = w0; ww < w1; ++ww) plane[hh * w + ww] += gv;
            }
          }
        }
      }
    };
  }
  return out;
}

namespace {

struct PoolGeometry {
  Index n, c, h, w, ho, wo, k, stride, pad;
};

PoolGeometry pool_geometry(const Shape& s, int k, int stride, int pad, const char* op) {
  require_rank(s, 4, op, "input");
  PoolGeometry g{s[0], s[1], s[2], s[3], 0, 0, k, stride, pad};
  if (k < 1 || stride < 1 || pad < 0 || 2 * pad > k) {
    throw ConfigError(std::string(op) + ": invalid kernel/stride/padding");
  }
  if (g.h + 2 * pad < k) throw DimensionError(std::string(op) + ": height axis (2) smaller than kernel");
  if (g.w + 2 * pad < k) throw DimensionError(std::string(op) + ": width axis (3) smaller than kernel");
  g.ho = (g.h + 2 * pad - k) / stride + 1;
  g.wo = (g.w + 2 * pad - k) / stride + 1;
  return g;
}

}  // namespace

template <typename Scalar>
Var<Scalar> max_pool2d(const Var<Scalar>& x, int kernel, int stride, int padding) {
  const PoolGeometry g = pool_geometry(x.shape(), kernel, stride, padding, "max_pool2d");
  Tensor<Scalar> y(Shape{g.n, g.c, g.ho, g.wo});
  std::vector<Index> argmax(static_cast<std::size_t>(y.numel()));
  const Tensor<Scalar>& xv = x.value();
  for (Index p = 0; p < g.n * g.c; ++p) {
    const Scalar* plane = xv.data() + p * g.h * g.w;
    for (Index oh = 0; oh < g.ho; ++oh) {
      for (Index ow = 0; ow < g.wo; ++ow) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Index best_idx = -1;
        for (Index i = 0; i < g.k; ++i) {
          const Index ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.h) continue;
          for (Index j = 0; j < g.k; ++j) {
            const Index iw = ow * g.stride - g.pad + j;
            if (iw < 0 || iw >= g.w) continue;
            const Scalar v = plane[ih * g.w + iw];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = ih * g.w + iw;
            }
          }
        }
        const Index o = (p * g.ho + oh) * g.wo + ow;
        y[o] = best;
        argmax[static_cast<std::size_t>(o)] = p * g.h * g.w + best_idx;
      }
    }
  }
  const bool needs = detail::needs_grad<Scalar>({&x});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn, argmax = std::move(argmax)]() {
      Tensor<Scalar>& gx = xn->grad_buffer();
      for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self->grad[static_cast<Index>(o)];
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> avg_pool2d(const Var<Scalar>& x, int kernel, int stride, int padding) {
  const PoolGeometry g = pool_geometry(x.shape(), kernel, stride, padding, "avg_pool2d");
  Tensor<Scalar> y(Shape{g.n, g.c, g.ho, g.wo});
  const Scalar inv = Scalar(1) / static_cast<Scalar>(g.k * g.k);
  const Tensor<Scalar>& xv = x.value();
  for (Index p = 0; p < g.n * g.c; ++p) {
    const Scalar* plane = xv.data() + p * g.h * g.w;
    for (Index oh = 0; oh < g.ho; ++oh) {
      for (Index ow = 0; ow < g.wo; ++ow) {
        Scalar acc = 0;
        for (Index i = 0; i < g.k; ++i) {
          const Index ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.h) continue;
          for (Index j = 0; j < g.k; ++j) {
            const Index iw = ow * g.stride - g.pad + j;
            if (iw >= 0 && iw < g.w) acc += plane[ih * g.w + iw];
          }
        }
        y[(p * g.ho + oh) * g.wo + ow] = acc * inv;
      }
    }
  }
  const bool needs = detail::needs_grad<Scalar>({&x});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn, g, inv]() {
      Tensor<Scalar>& gx = xn->grad_buffer();
      for (Index p = 0; p < g.n * g.c; ++p) {
        Scalar* plane = gx.data() + p * g.h * g.w;
        for (Index oh = 0; oh < g.ho; ++oh) {
          for (Index ow = 0; ow < g.wo; ++ow) {
            const Scalar gv = self->grad[(p * g.ho + oh) * g.wo + ow] * inv;
            for (Index i = 0; i < g.k; ++i) {
              const Index ih = oh * g.stride - g.pad + i;
              if (ih < 0 || ih >= g.h) continue;
              for (Index j = 0; j < g.k; ++j) {
                const Index iw = ow * g.stride - g.pad + j;
                if (iw >= 0 && iw < g.w) plane[ih * g.w + iw] += gv;
              }
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> upsample_nearest(const Var<Scalar>& x, int factor) {
  require_rank(x.shape(), 4, "upsample_nearest", "input");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index f = factor;
  Tensor<Scalar> y(Shape{n, c, h * f, w * f});
  const Tensor<Scalar>& xv = x.value();
  for (Index p = 0; p < n * c; ++p) {
    const Scalar* in = xv.data() + p * h * w;
    Scalar* o = y.data() + p * h * w * f * f;
    for (Index oh = 0; oh < h * f; ++oh) {
      const Scalar* irow = in + (oh / f) * w;
      Scalar* orow = o + oh * w * f;
      for (Index ow = 0; ow < w * f; ++ow) orow[ow] = irow[ow / f];
    }
  }
  const bool needs = detail::needs_grad<Scalar>({&x});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto xn = x.node_ptr();
    self->backward = [self, xn, n, c, h, w, f]() {
      Tensor<Scalar>& gx = xn->grad_buffer();
      for (Index p = 0; p < n * c; ++p) {
        Scalar* gin = gx.data() + p * h * w;
        const Scalar* go = self->grad.data() + p * h * w * f * f;
        for (Index oh = 0; oh < h * f; ++oh) {
          Scalar* grow = gin + (oh / f) * w;
          const Scalar* orow = go + oh * w * f;
          for (Index ow = 0; ow < w * f; ++ow) grow[ow / f] += orow[ow];
        }
      }
    };
  }
  return out;
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_rank(a.shape(), 4, "concat_channels", "first input");
  require_rank(b.shape(), 4, "concat_channels", "second input");
  for (int axis : {0, 2, 3}) {
    if (a.dim(axis) != b.dim(axis)) {
      throw DimensionError("concat_channels: axis " + std::to_string(axis) + " differs (" +
                           a.shape().str() + " vs " + b.shape().str() + ")");
    }
  }
  const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor<Scalar> y(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  for (Index i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * ca * plane, ca * plane, y.data() + i * (ca + cb) * plane);
    std::copy_n(b.value().data() + i * cb * plane, cb * plane,
                y.data() + (i * (ca + cb) + ca) * plane);
  }
  const bool needs = detail::needs_grad<Scalar>({&a, &b});
  Var<Scalar> out = detail::make_output(std::move(y), needs);
  if (needs) {
    Node<Scalar>* self = out.node();
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    self->backward = [self, an, bn, n, ca, cb, plane]() {
      const Scalar* g = self->grad.data();
      for (Index i = 0; i < n; ++i) {
        if (an->requires_grad) {
          Eigen::Map<typename Tensor<Scalar>::Vector>(an->grad_buffer().data() + i * ca * plane, ca * plane) +=
              Eigen::Map<const typename Tensor<Scalar>::Vector>(g + i * (ca + cb) * plane, ca * plane);
        }
        if (bn->requires_grad) {
          Eigen::Map<typename Tensor<Scalar>::Vector>(bn->grad_buffer().data() + i * cb * plane, cb * plane) +=
              Eigen::Map<const typename Tensor<Scalar>::Vector>(g + (i * (ca + cb) + ca) * plane, cb * plane);
        }
      }
    };
  }
  return out;
}

#define WEEDSENSE_INSTANTIATE(S)                                                          \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, Conv2dOptions);     \
  template Var<S> pixel_shuffle(const Var<S>&, int);                                      \
  template Var<S> pixel_unshuffle(const Var<S>&, int);                                    \
  template Var<S> adaptive_avg_pool(const Var<S>&, Index, Index);                         \
  template Var<S> max_pool2d(const Var<S>&, int, int, int);                               \
  template Var<S> avg_pool2d(const Var<S>&, int, int, int);                               \
  template Var<S> upsample_nearest(const Var<S>&, int);                                   \
  template Var<S> concat_channels(const Var<S>&, const Var<S>&);

WEEDSENSE_INSTANTIATE(float)
WEEDSENSE_INSTANTIATE(double)

}  // namespace weedsense
