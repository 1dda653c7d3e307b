#pragma once
// Minimal dense layers with hand-written backward passes. Tensors are
// single-image (channels, height, width) in double precision.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace patchprobe {

struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width),
        v(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t size() const { return v.size(); }
  double& at(int ch, int y, int x) { return v[(ch * static_cast<std::size_t>(h) + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(ch * static_cast<std::size_t>(h) + y) * w + x]; }
  double* channel(int ch) { return v.data() + ch * plane(); }
  const double* channel(int ch) const { return v.data() + ch * plane(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Param {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;

  explicit Param(std::string n = {}, std::size_t size = 0)
      : name(std::move(n)), value(size, 0.0), grad(size, 0.0) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

enum class Init { Zero, HeUniform, XavierUniform };

// Uniform in [-1, 1) from raw engine bits; identical across standard libraries.
double uniform_pm1(std::mt19937_64& rng);

// 1x1 convolution: y[o] = sum_i W[o, i] x[i] + b[o] at every pixel.
class PointwiseConv {
 public:
  PointwiseConv() = default;
  PointwiseConv(std::string name, int in, int out);

  void init(Init kind, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  // Accumulates parameter grads; returns dL/dx when want_input_grad.
  Tensor backward(const Tensor& x, const Tensor& grad_out, bool want_input_grad = true);

  int in() const { return in_; }
  int out() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  Param weight_;
  Param bias_;
};

// 3x3 convolution, stride 1, replicate padding (border pixels are repeated),
// so a spatially constant input gives a spatially constant output.
class Conv3x3 {
 public:
  Conv3x3() = default;
  Conv3x3(std::string name, int in, int out);

  void init(Init kind, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_out);

  int in() const { return in_; }
  int out() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  Param weight_;  // (out, in, 3, 3)
  Param bias_;
};

void relu_inplace(Tensor& t);
// grad <- grad where activation > 0, else 0.
void relu_backward(const Tensor& activation, Tensor& grad);

Tensor upsample_nearest(const Tensor& x, int factor);
// Adjoint of upsample_nearest: sums each factor x factor block.
Tensor upsample_nearest_backward(const Tensor& grad, int factor);

double sigmoid(double x);

}  // namespace patchprobe
