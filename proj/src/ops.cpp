#include "lfd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace lfd::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

[[noreturn]] void shape_mismatch(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

// Fixed-order sums: Eigen's reductions peel by pointer alignment, which
// would make results depend on where the allocator put the buffer.
template <typename T>
void add_column_sums(T* dst, const T* m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c] += m[r * cols + c];
}

template <typename T>
void add_row_sums(T* dst, const T* m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T s{0};
    for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c];
    dst[r] += s;
  }
}

template <typename T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Output columns ox whose input column ox*s - p + kx lies inside [0, w).
inline void valid_range(std::size_t kx, const ConvGeom& g, std::size_t w, std::size_t wo, std::size_t& lo,
                        std::size_t& hi) {
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.padding);
  std::ptrdiff_t l = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t h = static_cast<std::ptrdiff_t>(w) - 1 - off;
  h = h < 0 ? 0 : h / s + 1;
  l = std::min<std::ptrdiff_t>(l, static_cast<std::ptrdiff_t>(wo));
  h = std::clamp<std::ptrdiff_t>(h, l, static_cast<std::ptrdiff_t>(wo));
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h);
}

// col[(c*k*k + ky*k + kx), oy*wo + ox] = img[c, oy*s - p + ky, ox*s - p + kx]
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, const ConvGeom& g,
            std::size_t ho, std::size_t wo, T* col) {
  const std::size_t k = g.kernel, s = g.stride;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        std::size_t lo, hi;
        valid_range(kx, g, w, wo, lo, hi);
        T* row = col + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - pad;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + wo, T{0});
            continue;
          }
          const T* src = img + (c * h + static_cast<std::size_t>(iy)) * w;
          const std::size_t first = lo * s + kx - static_cast<std::size_t>(pad);
          std::fill(dst, dst + lo, T{0});
          for (std::size_t ox = lo, ix = first; ox < hi; ++ox, ix += s) dst[ox] = src[ix];
          std::fill(dst + hi, dst + wo, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds col back onto img.
template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, const ConvGeom& g,
            std::size_t ho, std::size_t wo, T* img) {
  const std::size_t k = g.kernel, s = g.stride;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        std::size_t lo, hi;
        valid_range(kx, g, w, wo, lo, hi);
        const T* row = col + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = img + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * wo;
          const std::size_t first = lo * s + kx - static_cast<std::size_t>(pad);
          for (std::size_t ox = lo, ix = first; ox < hi; ++ox, ix += s) dst[ix] += src[ox];
        }
      }
    }
  }
}

void check_geom(const ConvGeom& g) {
  if (g.kernel < 1 || g.stride < 1) throw ShapeError("conv geometry needs kernel >= 1 and stride >= 1");
  if (g.output_padding >= g.stride) throw ShapeError("conv output_padding must be smaller than stride");
}

}  // namespace

std::size_t conv_out_size(std::size_t in, const ConvGeom& g) {
  check_geom(g);
  if (in + 2 * g.padding < g.kernel)
    throw ShapeError("conv kernel " + std::to_string(g.kernel) + " larger than padded input " +
                     std::to_string(in + 2 * g.padding));
  return (in + 2 * g.padding - g.kernel) / g.stride + 1;
}

std::size_t deconv_out_size(std::size_t in, const ConvGeom& g) {
  check_geom(g);
  const std::size_t full = (in - 1) * g.stride + g.kernel + g.output_padding;
  if (full <= 2 * g.padding) throw ShapeError("deconv padding consumes the whole output");
  return full - 2 * g.padding;
}

std::size_t restoring_output_padding(std::size_t in, const ConvGeom& g) {
  check_geom(g);
  return (in + 2 * g.padding - g.kernel) % g.stride;
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) shape_mismatch("dense input/weight", xs, ws);
  if (b.shape() != Shape{ws[0]}) shape_mismatch("dense weight/bias", ws, b.shape());
  const std::size_t batch = xs[0], in = xs[1], out = ws[0];

  Tensor<T> y({batch, out});
  MatMap<T> ym(y.data().data(), batch, out);
  ConstMatMap<T> xm(x.value().data().data(), batch, in);
  ConstMatMap<T> wm(w.value().data().data(), out, in);
  ConstVecMap<T> bv(b.value().data().data(), out);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += bv.transpose();

  return x.tape->record(std::move(y), {x.id, w.id, b.id},
                        [xi = x.id, wi = w.id, bi = b.id, batch, in, out](Tape<T>& t, std::size_t self) {
                          ConstMatMap<T> dy(t.grad(self).data(), batch, out);
                          ConstMatMap<T> xm(t.value(xi).data().data(), batch, in);
                          ConstMatMap<T> wm(t.value(wi).data().data(), out, in);
                          if (t.requires_grad(wi)) MatMap<T>(t.grad(wi).data(), out, in).noalias() += dy.transpose() * xm;
                          if (t.requires_grad(bi)) add_column_sums(t.grad(bi).data(), dy.data(), batch, out);
                          if (t.requires_grad(xi)) MatMap<T>(t.grad(xi).data(), batch, in).noalias() += dy * wm;
                        });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, const ConvGeom& g) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != g.kernel || ws[3] != g.kernel)
    shape_mismatch("conv2d input/weight", xs, ws);
  if (b.shape() != Shape{ws[0]}) shape_mismatch("conv2d weight/bias", ws, b.shape());
  const std::size_t batch = xs[0], ch = xs[1], h = xs[2], wd = xs[3], filters = ws[0];
  const std::size_t ho = conv_out_size(h, g), wo = conv_out_size(wd, g);
  const std::size_t ckk = ch * g.kernel * g.kernel, plane = ho * wo;

  Tensor<T> y({batch, filters, ho, wo});
  // One sample's columns at a time; backward rebuilds them instead of keeping
  // the whole batch alive.
  std::vector<T> col(ckk * plane);
  ConstMatMap<T> wm(w.value().data().data(), filters, ckk);
  ConstVecMap<T> bv(b.value().data().data(), filters);
  const T* xin = x.value().data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(xin + n * ch * h * wd, ch, h, wd, g, ho, wo, col.data());
    MatMap<T> ym(y.data().data() + n * filters * plane, filters, plane);
    ym.noalias() = wm * ConstMatMap<T>(col.data(), ckk, plane);
    ym.colwise() += bv;
  }

  return x.tape->record(
      std::move(y), {x.id, w.id, b.id},
      [xi = x.id, wi = w.id, bi = b.id, g, batch, ch, h, wd, filters, ho, wo, ckk, plane](Tape<T>& t,
                                                                                          std::size_t self) {
        const T* dy = t.grad(self).data();
        const T* xin = t.value(xi).data().data();
        ConstMatMap<T> wm(t.value(wi).data().data(), filters, ckk);
        const bool need_w = t.requires_grad(wi), need_b = t.requires_grad(bi), need_x = t.requires_grad(xi);
        std::vector<T> col(need_w ? ckk * plane : 0);
        std::vector<T> dcol(need_x ? ckk * plane : 0);
        for (std::size_t n = 0; n < batch; ++n) {
          ConstMatMap<T> dym(dy + n * filters * plane, filters, plane);
          if (need_w) {
            im2col(xin + n * ch * h * wd, ch, h, wd, g, ho, wo, col.data());
            MatMap<T>(t.grad(wi).data(), filters, ckk).noalias() +=
                dym * ConstMatMap<T>(col.data(), ckk, plane).transpose();
          }
          if (need_b) add_row_sums(t.grad(bi).data(), dy + n * filters * plane, filters, plane);
          if (need_x) {
            MatMap<T>(dcol.data(), ckk, plane).noalias() = wm.transpose() * dym;
            col2im(dcol.data(), ch, h, wd, g, ho, wo, t.grad(xi).data() + n * ch * h * wd);
          }
        }
      });
}

template <typename T>
Var<T> deconv2d(Var<T> x, Var<T> w, Var<T> b, const ConvGeom& g) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != xs[1] || ws[2] != g.kernel || ws[3] != g.kernel)
    shape_mismatch("deconv2d input/weight", xs, ws);
  if (b.shape() != Shape{ws[1]}) shape_mismatch("deconv2d weight/bias", ws, b.shape());
  const std::size_t batch = xs[0], ch = xs[1], h = xs[2], wd = xs[3], filters = ws[1];
  const std::size_t ho = deconv_out_size(h, g), wo = deconv_out_size(wd, g);
  if (conv_out_size(ho, g) != h || conv_out_size(wo, g) != wd)
    throw ShapeError("deconv2d geometry is not the transpose of a convolution for input " + shape_string(xs));
  const std::size_t fkk = filters * g.kernel * g.kernel, in_plane = h * wd, out_plane = ho * wo;

  Tensor<T> y({batch, filters, ho, wo});
  ConstMatMap<T> wm(w.value().data().data(), ch, fkk);
  std::vector<T> col(fkk * in_plane);
  const T* xin = x.value().data().data();
  const T* bias = b.value().data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    MatMap<T>(col.data(), fkk, in_plane).noalias() =
        wm.transpose() * ConstMatMap<T>(xin + n * ch * in_plane, ch, in_plane);
    T* out = y.data().data() + n * filters * out_plane;
    col2im(col.data(), filters, ho, wo, g, h, wd, out);
    for (std::size_t f = 0; f < filters; ++f)
      for (std::size_t i = 0; i < out_plane; ++i) out[f * out_plane + i] += bias[f];
  }

  return x.tape->record(
      std::move(y), {x.id, w.id, b.id},
      [xi = x.id, wi = w.id, bi = b.id, g, batch, ch, h, wd, filters, ho, wo, fkk, in_plane, out_plane](
          Tape<T>& t, std::size_t self) {
        const T* dy = t.grad(self).data();
        const T* xin = t.value(xi).data().data();
        ConstMatMap<T> wm(t.value(wi).data().data(), ch, fkk);
        const bool need_w = t.requires_grad(wi), need_b = t.requires_grad(bi), need_x = t.requires_grad(xi);
        std::vector<T> dcol(fkk * in_plane);
        for (std::size_t n = 0; n < batch; ++n) {
          const T* dyn = dy + n * filters * out_plane;
          if (need_b) {
            auto gb = t.grad(bi);
            for (std::size_t f = 0; f < filters; ++f) {
              T s{0};
              for (std::size_t i = 0; i < out_plane; ++i) s += dyn[f * out_plane + i];
              gb[f] += s;
            }
          }
          if (!need_w && !need_x) continue;
          im2col(dyn, filters, ho, wo, g, h, wd, dcol.data());
          ConstMatMap<T> dc(dcol.data(), fkk, in_plane);
          if (need_w)
            MatMap<T>(t.grad(wi).data(), ch, fkk).noalias() +=
                ConstMatMap<T>(xin + n * ch * in_plane, ch, in_plane) * dc.transpose();
          if (need_x) MatMap<T>(t.grad(xi).data() + n * ch * in_plane, ch, in_plane).noalias() += wm * dc;
        }
      });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  Tensor<T> y(x.shape());
  auto in = x.value().data();
  auto out = y.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : slope * in[i];
  return x.tape->record(std::move(y), {x.id}, [xi = x.id, slope](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    auto in = t.value(xi).data();
    auto dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += in[i] > T{0} ? dy[i] : slope * dy[i];
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> y(x.shape());
  auto in = x.value().data();
  auto out = y.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = T{1} / (T{1} + std::exp(-in[i]));
  return x.tape->record(std::move(y), {x.id}, [xi = x.id](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    auto s = t.value(self).data();
    auto dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * s[i] * (T{1} - s[i]);
  });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tensor<T> y(x.shape());
  auto in = x.value().data();
  auto out = y.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
  return x.tape->record(std::move(y), {x.id}, [xi = x.id](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    auto s = t.value(self).data();
    auto dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (T{1} - s[i] * s[i]);
  });
}

template <typename T>
Var<T> dropout(Var<T> x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ShapeError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  // Each 64-bit draw yields two 32-bit uniforms; an element is kept when its
  // uniform is >= p.
  const auto threshold = static_cast<std::uint64_t>(std::ceil(p * 4294967296.0));
  std::vector<T> mask(x.value().size());
  for (std::size_t i = 0; i < mask.size(); i += 2) {
    const std::uint64_t r = rng.next_u64();
    mask[i] = (r >> 32) >= threshold ? keep_scale : T{0};
    if (i + 1 < mask.size()) mask[i + 1] = (r & 0xffffffffu) >= threshold ? keep_scale : T{0};
  }
  Tensor<T> y(x.shape());
  auto in = x.value().data();
  auto out = y.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * mask[i];
  return x.tape->record(std::move(y), {x.id}, [xi = x.id, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    auto dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(y), {x.id}, [xi = x.id](Tape<T>& t, std::size_t self) {
    accumulate<T>(t.grad(xi), t.grad(self));
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  Tensor<T> y(a.shape());
  auto av = a.value().data();
  auto bv = b.value().data();
  auto out = y.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape->record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
    if (t.requires_grad(ai)) accumulate<T>(t.grad(ai), t.grad(self));
    if (t.requires_grad(bi)) accumulate<T>(t.grad(bi), t.grad(self));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> y(a.shape());
  auto av = a.value().data();
  auto out = y.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * av[i];
  return a.tape->record(std::move(y), {a.id}, [ai = a.id, s](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    auto dx = t.grad(ai);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += s * dy[i];
  });
}

template <typename T>
Var<T> mse(Var<T> pred, Var<T> target) {
  if (pred.shape() != target.shape()) shape_mismatch("mse", pred.shape(), target.shape());
  auto p = pred.value().data();
  auto q = target.value().data();
  T sum{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - q[i];
    sum += d * d;
  }
  const T n = static_cast<T>(p.size());
  return pred.tape->record(Tensor<T>({1}, sum / n), {pred.id, target.id},
                           [pi = pred.id, ti = target.id, n](Tape<T>& t, std::size_t self) {
                             const T g = t.grad(self)[0] * T{2} / n;
                             auto p = t.value(pi).data();
                             auto q = t.value(ti).data();
                             if (t.requires_grad(pi)) {
                               auto dp = t.grad(pi);
                               for (std::size_t i = 0; i < p.size(); ++i) dp[i] += g * (p[i] - q[i]);
                             }
                             if (t.requires_grad(ti)) {
                               auto dq = t.grad(ti);
                               for (std::size_t i = 0; i < p.size(); ++i) dq[i] -= g * (p[i] - q[i]);
                             }
                           });
}

template <typename T>
Var<T> dot(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) shape_mismatch("dot", a.shape(), b.shape());
  auto av = a.value().data();
  auto bv = b.value().data();
  T sum{0};
  for (std::size_t i = 0; i < av.size(); ++i) sum += av[i] * bv[i];
  return a.tape->record(Tensor<T>({1}, sum), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto av = t.value(ai).data();
    auto bv = t.value(bi).data();
    if (t.requires_grad(ai)) {
      auto da = t.grad(ai);
      for (std::size_t i = 0; i < av.size(); ++i) da[i] += g * bv[i];
    }
    if (t.requires_grad(bi)) {
      auto db = t.grad(bi);
      for (std::size_t i = 0; i < av.size(); ++i) db[i] += g * av[i];
    }
  });
}

template <typename T>
Var<T> lstm_cell(Var<T> x, Var<T> h, Var<T> c, Var<T> w, Var<T> b) {
  const Shape& xs = x.shape();
  const Shape& hs = h.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || hs.size() != 2 || xs[0] != hs[0]) shape_mismatch("lstm_cell x/h", xs, hs);
  if (c.shape() != hs) shape_mismatch("lstm_cell h/c", hs, c.shape());
  const std::size_t batch = xs[0], in = xs[1], hid = hs[1], cat = in + hid;
  if (ws != Shape{4 * hid, cat}) shape_mismatch("lstm_cell weight", ws, Shape{4 * hid, cat});
  if (b.shape() != Shape{4 * hid}) shape_mismatch("lstm_cell bias", b.shape(), Shape{4 * hid});

  RowMat<T> xh(batch, cat);
  xh.leftCols(in) = ConstMatMap<T>(x.value().data().data(), batch, in);
  xh.rightCols(hid) = ConstMatMap<T>(h.value().data().data(), batch, hid);
  // gates: [i | f | g | o] after activation
  RowMat<T> gates = xh * ConstMatMap<T>(w.value().data().data(), 4 * hid, cat).transpose();
  gates.rowwise() += ConstVecMap<T>(b.value().data().data(), 4 * hid).transpose();
  const T* cprev = c.value().data().data();

  Tensor<T> y({batch, 2 * hid});
  RowMat<T> tanh_c(batch, hid);
  T* out = y.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < hid; ++j) {
      T& gi = gates(n, j);
      T& gf = gates(n, hid + j);
      T& gg = gates(n, 2 * hid + j);
      T& go = gates(n, 3 * hid + j);
      gi = T{1} / (T{1} + std::exp(-gi));
      gf = T{1} / (T{1} + std::exp(-gf));
      gg = std::tanh(gg);
      go = T{1} / (T{1} + std::exp(-go));
      const T cn = gf * cprev[n * hid + j] + gi * gg;
      tanh_c(n, j) = std::tanh(cn);
      out[n * 2 * hid + j] = go * tanh_c(n, j);
      out[n * 2 * hid + hid + j] = cn;
    }
  }

  return x.tape->record(
      std::move(y), {x.id, h.id, c.id, w.id, b.id},
      [xi = x.id, hi = h.id, ci = c.id, wi = w.id, bi = b.id, batch, in, hid, cat, xh = std::move(xh),
       gates = std::move(gates), tanh_c = std::move(tanh_c)](Tape<T>& t, std::size_t self) {
        const T* dy = t.grad(self).data();
        const T* cprev = t.value(ci).data().data();
        RowMat<T> dz(batch, 4 * hid);
        RowMat<T> dc_prev(batch, hid);
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t j = 0; j < hid; ++j) {
            const T gi = gates(n, j), gf = gates(n, hid + j), gg = gates(n, 2 * hid + j), go = gates(n, 3 * hid + j);
            const T dh = dy[n * 2 * hid + j];
            const T tc = tanh_c(n, j);
            const T dc = dy[n * 2 * hid + hid + j] + dh * go * (T{1} - tc * tc);
            dz(n, j) = dc * gg * gi * (T{1} - gi);
            dz(n, hid + j) = dc * cprev[n * hid + j] * gf * (T{1} - gf);
            dz(n, 2 * hid + j) = dc * gi * (T{1} - gg * gg);
            dz(n, 3 * hid + j) = dh * tc * go * (T{1} - go);
            dc_prev(n, j) = dc * gf;
          }
        }
        ConstMatMap<T> wm(t.value(wi).data().data(), 4 * hid, cat);
        if (t.requires_grad(wi)) MatMap<T>(t.grad(wi).data(), 4 * hid, cat).noalias() += dz.transpose() * xh;
        if (t.requires_grad(bi)) add_column_sums(t.grad(bi).data(), dz.data(), batch, 4 * hid);
        const bool need_x = t.requires_grad(xi), need_h = t.requires_grad(hi);
        if (need_x || need_h) {
          RowMat<T> dxh = dz * wm;
          if (need_x) MatMap<T>(t.grad(xi).data(), batch, in) += dxh.leftCols(in);
          if (need_h) MatMap<T>(t.grad(hi).data(), batch, hid) += dxh.rightCols(hid);
        }
        if (t.requires_grad(ci)) MatMap<T>(t.grad(ci).data(), batch, hid) += dc_prev;
      });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
  const Shape& xs = x.shape();
  if (xs.size() != 2 || begin >= end || end > xs[1])
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_string(xs));
  const std::size_t rows = xs[0], cols = xs[1], width = end - begin;
  Tensor<T> y({rows, width});
  MatMap<T>(y.data().data(), rows, width) =
      ConstMatMap<T>(x.value().data().data(), rows, cols).middleCols(begin, width);
  return x.tape->record(std::move(y), {x.id}, [xi = x.id, rows, cols, begin, width](Tape<T>& t, std::size_t self) {
    MatMap<T>(t.grad(xi).data(), rows, cols).middleCols(begin, width) += ConstMatMap<T>(t.grad(self).data(), rows, width);
  });
}

#define LFD_INSTANTIATE_OPS(T)                                                  \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, const ConvGeom&);              \
  template Var<T> deconv2d(Var<T>, Var<T>, Var<T>, const ConvGeom&);            \
  template Var<T> leaky_relu(Var<T>, T);                                        \
  template Var<T> sigmoid(Var<T>);                                              \
  template Var<T> tanh(Var<T>);                                                 \
  template Var<T> dropout(Var<T>, double, Mode, Rng&);                          \
  template Var<T> reshape(Var<T>, Shape);                                       \
  template Var<T> add(Var<T>, Var<T>);                                          \
  template Var<T> scale(Var<T>, T);                                             \
  template Var<T> mse(Var<T>, Var<T>);                                          \
  template Var<T> dot(Var<T>, Var<T>);                                          \
  template Var<T> lstm_cell(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>);            \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);

LFD_INSTANTIATE_OPS(float)
LFD_INSTANTIATE_OPS(double)

}  // namespace lfd::nn
