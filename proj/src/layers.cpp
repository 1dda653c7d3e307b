#include "patchprobe/layers.hpp"

#include <algorithm>
#include <cmath>

#include "patchprobe/errors.hpp"
#include "patchprobe/simd/kernels.hpp"

namespace patchprobe {

double uniform_pm1(std::mt19937_64& rng) {
  return 2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

void fill_init(Param& p, Init kind, int fan_in, int fan_out, std::mt19937_64& rng) {
  double bound = 0.0;
  switch (kind) {
    case Init::Zero: bound = 0.0; break;
    case Init::HeUniform: bound = std::sqrt(6.0 / fan_in); break;
    case Init::XavierUniform: bound = std::sqrt(6.0 / (fan_in + fan_out)); break;
  }
  for (auto& x : p.value) x = bound * uniform_pm1(rng);
}

}  // namespace

PointwiseConv::PointwiseConv(std::string name, int in, int out)
    : in_(in), out_(out),
      weight_(name + ".weight", static_cast<std::size_t>(in) * out),
      bias_(name + ".bias", static_cast<std::size_t>(out)) {}

void PointwiseConv::init(Init kind, std::mt19937_64& rng) {
  fill_init(weight_, kind, in_, out_, rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

Tensor PointwiseConv::forward(const Tensor& x) const {
  if (x.c != in_) {
    throw ShapeError("pointwise conv expects " + std::to_string(in_) + " channels, got " +
                     std::to_string(x.c));
  }
  const auto& k = simd::kernels();
  Tensor y(out_, x.h, x.w);
  const std::size_t n = x.plane();
  for (int o = 0; o < out_; ++o) {
    double* yo = y.channel(o);
    std::fill(yo, yo + n, bias_.value[o]);
    const double* wrow = weight_.value.data() + static_cast<std::size_t>(o) * in_;
    for (int i = 0; i < in_; ++i) k.axpy(wrow[i], x.channel(i), yo, n);
  }
  return y;
}

Tensor PointwiseConv::backward(const Tensor& x, const Tensor& grad_out, bool want_input_grad) {
  const auto& k = simd::kernels();
  const std::size_t n = x.plane();
  Tensor gx;
  if (want_input_grad) gx = Tensor(in_, x.h, x.w);
  for (int o = 0; o < out_; ++o) {
    const double* go = grad_out.channel(o);
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p) s += go[p];
    bias_.grad[o] += s;
    double* wg = weight_.grad.data() + static_cast<std::size_t>(o) * in_;
    const double* wv = weight_.value.data() + static_cast<std::size_t>(o) * in_;
    for (int i = 0; i < in_; ++i) {
      wg[i] += k.dot(go, x.channel(i), n);
      if (want_input_grad) k.axpy(wv[i], go, gx.channel(i), n);
    }
  }
  return gx;
}

Conv3x3::Conv3x3(std::string name, int in, int out)
    : in_(in), out_(out),
      weight_(name + ".weight", static_cast<std::size_t>(in) * out * 9),
      bias_(name + ".bias", static_cast<std::size_t>(out)) {}

void Conv3x3::init(Init kind, std::mt19937_64& rng) {
  fill_init(weight_, kind, in_ * 9, out_ * 9, rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

namespace {

// Replicate-padded copy of one channel, (h + 2) x (w + 2).
void pad_replicate(const double* src, int h, int w, std::vector<double>& dst) {
  const int pw = w + 2;
  dst.resize(static_cast<std::size_t>(h + 2) * pw);
  for (int y = -1; y <= h; ++y) {
    const int sy = std::clamp(y, 0, h - 1);
    double* row = dst.data() + static_cast<std::size_t>(y + 1) * pw;
    const double* s = src + static_cast<std::size_t>(sy) * w;
    row[0] = s[0];
    std::copy(s, s + w, row + 1);
    row[w + 1] = s[w - 1];
  }
}

}  // namespace

Tensor Conv3x3::forward(const Tensor& x) const {
  if (x.c != in_) {
    throw ShapeError("3x3 conv expects " + std::to_string(in_) + " channels, got " +
                     std::to_string(x.c));
  }
  const auto& k = simd::kernels();
  const int h = x.h, w = x.w, pw = w + 2;
  Tensor y(out_, h, w);
  for (int o = 0; o < out_; ++o) {
    double* yo = y.channel(o);
    std::fill(yo, yo + y.plane(), bias_.value[o]);
  }
  std::vector<double> padded;
  for (int i = 0; i < in_; ++i) {
    pad_replicate(x.channel(i), h, w, padded);
    for (int o = 0; o < out_; ++o) {
      const double* wk = weight_.value.data() + (static_cast<std::size_t>(o) * in_ + i) * 9;
      double* yo = y.channel(o);
      for (int yy = 0; yy < h; ++yy) {
        double* dst = yo + static_cast<std::size_t>(yy) * w;
        for (int ky = 0; ky < 3; ++ky) {
          const double* src = padded.data() + static_cast<std::size_t>(yy + ky) * pw;
          for (int kx = 0; kx < 3; ++kx) k.axpy(wk[ky * 3 + kx], src + kx, dst, w);
        }
      }
    }
  }
  return y;
}

Tensor Conv3x3::backward(const Tensor& x, const Tensor& grad_out) {
  const auto& k = simd::kernels();
  const int h = x.h, w = x.w, pw = w + 2;
  Tensor gx(in_, h, w);
  for (int o = 0; o < out_; ++o) {
    const double* go = grad_out.channel(o);
    double s = 0.0;
    for (std::size_t p = 0; p < grad_out.plane(); ++p) s += go[p];
    bias_.grad[o] += s;
  }
  std::vector<double> padded;
  std::vector<double> gpad(static_cast<std::size_t>(h + 2) * pw);
  for (int i = 0; i < in_; ++i) {
    pad_replicate(x.channel(i), h, w, padded);
    std::fill(gpad.begin(), gpad.end(), 0.0);
    for (int o = 0; o < out_; ++o) {
      const std::size_t base = (static_cast<std::size_t>(o) * in_ + i) * 9;
      const double* wk = weight_.value.data() + base;
      double* gw = weight_.grad.data() + base;
      const double* go = grad_out.channel(o);
      for (int yy = 0; yy < h; ++yy) {
        const double* grow = go + static_cast<std::size_t>(yy) * w;
        for (int ky = 0; ky < 3; ++ky) {
          const std::size_t row = static_cast<std::size_t>(yy + ky) * pw;
          for (int kx = 0; kx < 3; ++kx) {
            gw[ky * 3 + kx] += k.dot(grow, padded.data() + row + kx, w);
            k.axpy(wk[ky * 3 + kx], grow, gpad.data() + row + kx, w);
          }
        }
      }
    }
    // Fold the padded gradient back onto the replicated source pixels.
    double* g = gx.channel(i);
    for (int py = 0; py < h + 2; ++py) {
      const int sy = std::clamp(py - 1, 0, h - 1);
      for (int px = 0; px < pw; ++px) {
        const int sx = std::clamp(px - 1, 0, w - 1);
        g[static_cast<std::size_t>(sy) * w + sx] += gpad[static_cast<std::size_t>(py) * pw + px];
      }
    }
  }
  return gx;
}

void relu_inplace(Tensor& t) { simd::kernels().relu(t.v.data(), t.v.size()); }

void relu_backward(const Tensor& activation, Tensor& grad) {
  simd::kernels().relu_backward(activation.v.data(), grad.v.data(), grad.v.size());
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  Tensor y(x.c, x.h * factor, x.w * factor);
  for (int c = 0; c < x.c; ++c) {
    for (int yy = 0; yy < y.h; ++yy) {
      const double* src = x.channel(c) + static_cast<std::size_t>(yy / factor) * x.w;
      double* dst = y.channel(c) + static_cast<std::size_t>(yy) * y.w;
      for (int xx = 0; xx < y.w; ++xx) dst[xx] = src[xx / factor];
    }
  }
  return y;
}

Tensor upsample_nearest_backward(const Tensor& grad, int factor) {
  Tensor x(grad.c, grad.h / factor, grad.w / factor);
  for (int c = 0; c < grad.c; ++c) {
    for (int yy = 0; yy < grad.h; ++yy) {
      const double* src = grad.channel(c) + static_cast<std::size_t>(yy) * grad.w;
      double* dst = x.channel(c) + static_cast<std::size_t>(yy / factor) * x.w;
      for (int xx = 0; xx < grad.w; ++xx) dst[xx / factor] += src[xx];
    }
  }
  return x;
}

}  // namespace patchprobe
