#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dplab/error.hpp"
#include "dplab/rng.hpp"
#include "dplab/tensor.hpp"

namespace dplab {

namespace detail {

// Geometry shared by strided convolution and its transpose. The "big" side is
// the convolution input (transpose output); the "small" side is the
// convolution output (transpose input). Weights are laid out [small_ch,
// big_ch, k, k], so big index = small index * stride - pad + kernel offset.
struct ConvGeometry {
  std::size_t big_ch, big_h, big_w;
  std::size_t small_ch, small_h, small_w;
  std::size_t kernel, stride, pad;

  std::size_t big_size() const { return big_ch * big_h * big_w; }
  std::size_t small_size() const { return small_ch * small_h * small_w; }
  std::size_t weight_size() const { return small_ch * big_ch * kernel * kernel; }
};

// Patch matrix of the big side: row p = (oy, ox) holds the R = big_ch*K*K
// taps (b, ky, kx) feeding that output position, zero where the tap falls in
// the padding. idx[p*R + r] is the big index, or -1 for padding.
struct PatchIndex {
  std::size_t positions = 0, taps = 0;
  std::vector<long> idx;
};

inline const PatchIndex& patch_index(const ConvGeometry& g) {
  thread_local std::deque<std::pair<std::array<std::size_t, 9>, PatchIndex>> cache;
  const std::array<std::size_t, 9> key{g.big_ch, g.big_h, g.big_w, g.small_ch, g.small_h,
                                       g.small_w, g.kernel, g.stride, g.pad};
  for (const auto& [k, v] : cache)
    if (k == key) return v;
  PatchIndex pi;
  const std::size_t K = g.kernel;
  pi.positions = g.small_h * g.small_w;
  pi.taps = g.big_ch * K * K;
  pi.idx.assign(pi.positions * pi.taps, -1);
  for (std::size_t oy = 0; oy < g.small_h; ++oy)
    for (std::size_t ox = 0; ox < g.small_w; ++ox) {
      long* row = pi.idx.data() + (oy * g.small_w + ox) * pi.taps;
      for (std::size_t b = 0; b < g.big_ch; ++b)
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.big_h) || ix >= static_cast<long>(g.big_w))
              continue;
            row[(b * K + ky) * K + kx] = static_cast<long>((b * g.big_h + iy) * g.big_w + ix);
          }
    }
  cache.emplace_back(key, std::move(pi));
  return cache.back().second;
}

inline void im2col(const PatchIndex& pi, const double* big, double* cols) {
  const std::size_t n = pi.idx.size();
  for (std::size_t i = 0; i < n; ++i) cols[i] = pi.idx[i] < 0 ? 0.0 : big[pi.idx[i]];
}

inline double* scratch(std::size_t n, int slot) {
  thread_local std::vector<double> buf[2];
  if (buf[slot].size() < n) buf[slot].resize(n);
  return buf[slot].data();
}

// small[s, oy, ox] += sum_{b, ky, kx} w[s, b, ky, kx] * big[b, iy, ix]
inline void conv_gather(const ConvGeometry& g, const double* big, const double* w,
                        double* small) {
  const PatchIndex& pi = patch_index(g);
  const std::size_t P = pi.positions, R = pi.taps;
  double* cols = scratch(P * R, 0);
  im2col(pi, big, cols);
  for (std::size_t s = 0; s < g.small_ch; ++s) {
    const double* ws = w + s * R;
    for (std::size_t p = 0; p < P; ++p) {
      const double* c = cols + p * R;
      double acc = 0.0;
      for (std::size_t r = 0; r < R; ++r) acc += ws[r] * c[r];
      small[s * P + p] += acc;
    }
  }
}

// big[b, iy, ix] += sum_{s, ky, kx} w[s, b, ky, kx] * small[s, oy, ox]
inline void conv_scatter(const ConvGeometry& g, const double* small, const double* w,
                         double* big) {
  const PatchIndex& pi = patch_index(g);
  const std::size_t P = pi.positions, R = pi.taps;
  double* dcols = scratch(R, 1);
  for (std::size_t p = 0; p < P; ++p) {
    std::fill_n(dcols, R, 0.0);
    for (std::size_t s = 0; s < g.small_ch; ++s) {
      const double v = small[s * P + p];
      const double* ws = w + s * R;
      for (std::size_t r = 0; r < R; ++r) dcols[r] += v * ws[r];
    }
    const long* idx = pi.idx.data() + p * R;
    for (std::size_t r = 0; r < R; ++r)
      if (idx[r] >= 0) big[idx[r]] += dcols[r];
  }
}

// gw[s, b, ky, kx] += sum_{oy, ox} small[s, oy, ox] * big[b, iy, ix]
inline void conv_weight_grad(const ConvGeometry& g, const double* small, const double* big,
                             double* gw) {
  const PatchIndex& pi = patch_index(g);
  const std::size_t P = pi.positions, R = pi.taps;
  double* cols = scratch(P * R, 0);
  im2col(pi, big, cols);
  for (std::size_t s = 0; s < g.small_ch; ++s) {
    double* gs = gw + s * R;
    for (std::size_t p = 0; p < P; ++p) {
      const double v = small[s * P + p];
      const double* c = cols + p * R;
      for (std::size_t r = 0; r < R; ++r) gs[r] += v * c[r];
    }
  }
}

inline Shape batched(std::size_t n, const Shape& feature) {
  Shape s{n};
  s.insert(s.end(), feature.begin(), feature.end());
  return s;
}

}  // namespace detail

/// y = W x + b with W of shape (out, in).
struct Dense {
  std::string name;
  std::size_t in = 0, out = 0;
  std::size_t weight = 0, bias = 0;

  Tensor apply(const ParamSet& p, const Tensor& x, bool with_bias) const {
    const std::size_t n = x.batch();
    Tensor y(detail::batched(n, {out}));
    const double* W = p[weight].data();
    const double* B = p[bias].data();
    for (std::size_t e = 0; e < n; ++e) {
      const double* xe = x.data() + e * in;
      double* ye = y.data() + e * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wr = W + o * in;
        double acc = with_bias ? B[o] : 0.0;
        for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xe[i];
        ye[o] = acc;
      }
    }
    return y;
  }

  Tensor pullback(const ParamSet& p, const Tensor& x, const Tensor& gy, ParamSet* grads,
                  bool with_bias) const {
    const std::size_t n = x.batch();
    Tensor gx(x.shape());
    const double* W = p[weight].data();
    double* gW = grads ? (*grads)[weight].data() : nullptr;
    double* gB = grads ? (*grads)[bias].data() : nullptr;
    for (std::size_t e = 0; e < n; ++e) {
      const double* xe = x.data() + e * in;
      const double* ge = gy.data() + e * out;
      double* gxe = gx.data() + e * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double go = ge[o];
        if (go == 0.0) continue;
        const double* wr = W + o * in;
        for (std::size_t i = 0; i < in; ++i) gxe[i] += wr[i] * go;
        if (gW) {
          double* gwr = gW + o * in;
          for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xe[i];
          if (with_bias) gB[o] += go;
        }
      }
    }
    return gx;
  }
};

/// Strided 2-D convolution, weight (out_ch, in_ch, k, k).
struct Conv2d {
  std::string name;
  detail::ConvGeometry geom{};
  std::size_t weight = 0, bias = 0;

  Tensor apply(const ParamSet& p, const Tensor& x, bool with_bias) const {
    const std::size_t n = x.batch();
    Tensor y(detail::batched(n, {geom.small_ch, geom.small_h, geom.small_w}));
    const double* B = p[bias].data();
    const std::size_t plane = geom.small_h * geom.small_w;
    for (std::size_t e = 0; e < n; ++e) {
      double* ye = y.data() + e * geom.small_size();
      if (with_bias)
        for (std::size_t c = 0; c < geom.small_ch; ++c)
          std::fill(ye + c * plane, ye + (c + 1) * plane, B[c]);
      detail::conv_gather(geom, x.data() + e * geom.big_size(), p[weight].data(), ye);
    }
    return y;
  }

  Tensor pullback(const ParamSet& p, const Tensor& x, const Tensor& gy, ParamSet* grads,
                  bool with_bias) const {
    const std::size_t n = x.batch();
    Tensor gx(x.shape());
    const std::size_t plane = geom.small_h * geom.small_w;
    for (std::size_t e = 0; e < n; ++e) {
      const double* ge = gy.data() + e * geom.small_size();
      detail::conv_scatter(geom, ge, p[weight].data(), gx.data() + e * geom.big_size());
      if (grads) {
        detail::conv_weight_grad(geom, ge, x.data() + e * geom.big_size(),
                                 (*grads)[weight].data());
        if (with_bias) {
          double* gB = (*grads)[bias].data();
          for (std::size_t c = 0; c < geom.small_ch; ++c)
            for (std::size_t i = 0; i < plane; ++i) gB[c] += ge[c * plane + i];
        }
      }
    }
    return gx;
  }
};

/// Transposed strided convolution, weight (in_ch, out_ch, k, k).
struct ConvTranspose2d {
  std::string name;
  detail::ConvGeometry geom{};  // small side is the input here
  std::size_t output_pad = 0;
  std::size_t weight = 0, bias = 0;

  Tensor apply(const ParamSet& p, const Tensor& x, bool with_bias) const {
    const std::size_t n = x.batch();
    Tensor y(detail::batched(n, {geom.big_ch, geom.big_h, geom.big_w}));
    const double* B = p[bias].data();
    const std::size_t plane = geom.big_h * geom.big_w;
    for (std::size_t e = 0; e < n; ++e) {
      double* ye = y.data() + e * geom.big_size();
      if (with_bias)
        for (std::size_t c = 0; c < geom.big_ch; ++c)
          std::fill(ye + c * plane, ye + (c + 1) * plane, B[c]);
      detail::conv_scatter(geom, x.data() + e * geom.small_size(), p[weight].data(), ye);
    }
    return y;
  }

  Tensor pullback(const ParamSet& p, const Tensor& x, const Tensor& gy, ParamSet* grads,
                  bool with_bias) const {
    const std::size_t n = x.batch();
    Tensor gx(x.shape());
    const std::size_t plane = geom.big_h * geom.big_w;
    for (std::size_t e = 0; e < n; ++e) {
      const double* ge = gy.data() + e * geom.big_size();
      detail::conv_gather(geom, ge, p[weight].data(), gx.data() + e * geom.small_size());
      if (grads) {
        detail::conv_weight_grad(geom, x.data() + e * geom.small_size(), ge,
                                 (*grads)[weight].data());
        if (with_bias) {
          double* gB = (*grads)[bias].data();
          for (std::size_t c = 0; c < geom.big_ch; ++c)
            for (std::size_t i = 0; i < plane; ++i) gB[c] += ge[c * plane + i];
        }
      }
    }
    return gx;
  }
};

enum class Activation { LeakyRelu, Tanh, Sigmoid };

/// Elementwise activation with first and second derivatives.
struct Pointwise {
  std::string name;
  Activation kind = Activation::LeakyRelu;
  double slope = 0.2;

  double f(double x) const {
    switch (kind) {
      case Activation::LeakyRelu: return x > 0.0 ? x : slope * x;
      case Activation::Tanh: return std::tanh(x);
      case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    }
    return x;
  }

  double d1(double x) const {
    switch (kind) {
      case Activation::LeakyRelu: return x > 0.0 ? 1.0 : slope;
      case Activation::Tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      }
      case Activation::Sigmoid: {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s);
      }
    }
    return 1.0;
  }

  double d2(double x) const {
    switch (kind) {
      case Activation::LeakyRelu: return 0.0;
      case Activation::Tanh: {
        const double t = std::tanh(x);
        return -2.0 * t * (1.0 - t * t);
      }
      case Activation::Sigmoid: {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s) * (1.0 - 2.0 * s);
      }
    }
    return 0.0;
  }
};

/// Changes the per-example shape; the batch axis is untouched.
struct Reshape {
  std::string name;
  Shape to;
};

using Layer = std::variant<Dense, Conv2d, ConvTranspose2d, Pointwise, Reshape>;

inline const std::string& layer_name(const Layer& l) {
  return std::visit([](const auto& x) -> const std::string& { return x.name; }, l);
}

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
};

/// A feed-forward stack over the supported layer set. Input and output
/// tensors carry a leading batch axis; shapes below exclude it.
class Sequential {
 public:
  /// A graph with no layers over a scalar input.
  Sequential() : Sequential(Shape{1}) {}
  explicit Sequential(Shape input_shape) : shapes_{std::move(input_shape)} {}

  const Shape& input_shape() const { return shapes_.front(); }
  const Shape& output_shape() const { return shapes_.back(); }
  const std::vector<Layer>& layers() const { return layers_; }
  /// shapes()[k] is the per-example input shape of layer k.
  const std::vector<Shape>& shapes() const { return shapes_; }
  const std::vector<ParamSpec>& param_specs() const { return specs_; }

  Sequential& dense(std::size_t out, std::string name = {}) {
    const Shape& in = output_shape();
    if (in.size() != 1) throw ShapeError(label(name, "dense") + " expects flat input", {shape_size(in)}, in);
    Dense d;
    d.name = label(name, "dense");
    d.in = in[0];
    d.out = out;
    d.weight = add_param(d.name + ".weight", {out, d.in}, d.in);
    d.bias = add_param(d.name + ".bias", {out}, d.in);
    push(std::move(d), {out});
    return *this;
  }

  Sequential& conv2d(std::size_t out_ch, std::size_t kernel, std::size_t stride,
                     std::size_t pad, std::string name = {}) {
    const Shape& in = output_shape();
    Conv2d c;
    c.name = label(name, "conv");
    if (in.size() != 3) throw ShapeError(c.name + " expects (C, H, W) input", {0, 0, 0}, in);
    if (in[1] + 2 * pad < kernel || in[2] + 2 * pad < kernel)
      throw ShapeError(c.name + ": kernel larger than padded input", {kernel, kernel}, in);
    c.geom = {in[0], in[1], in[2], out_ch,
              (in[1] + 2 * pad - kernel) / stride + 1,
              (in[2] + 2 * pad - kernel) / stride + 1, kernel, stride, pad};
    const std::size_t fan = in[0] * kernel * kernel;
    c.weight = add_param(c.name + ".weight", {out_ch, in[0], kernel, kernel}, fan);
    c.bias = add_param(c.name + ".bias", {out_ch}, fan);
    Shape out{out_ch, c.geom.small_h, c.geom.small_w};
    push(std::move(c), std::move(out));
    return *this;
  }

  Sequential& conv_transpose2d(std::size_t out_ch, std::size_t kernel, std::size_t stride,
                               std::size_t pad, std::size_t output_pad,
                               std::string name = {}) {
    const Shape& in = output_shape();
    ConvTranspose2d c;
    c.name = label(name, "deconv");
    if (in.size() != 3) throw ShapeError(c.name + " expects (C, H, W) input", {0, 0, 0}, in);
    if (output_pad >= stride)
      throw ParameterError(c.name + ": output padding must be smaller than the stride");
    const auto extent = [&](std::size_t n) -> std::size_t {
      const long v = static_cast<long>((n - 1) * stride + kernel + output_pad) -
                     2 * static_cast<long>(pad);
      if (v <= 0) throw ShapeError(c.name + ": non-positive output extent", {1}, in);
      return static_cast<std::size_t>(v);
    };
    c.geom = {out_ch, extent(in[1]), extent(in[2]), in[0], in[1], in[2], kernel, stride, pad};
    c.output_pad = output_pad;
    const std::size_t fan = std::max<std::size_t>(1, in[0] * kernel * kernel / (stride * stride));
    c.weight = add_param(c.name + ".weight", {in[0], out_ch, kernel, kernel}, fan);
    c.bias = add_param(c.name + ".bias", {out_ch}, fan);
    Shape out{out_ch, c.geom.big_h, c.geom.big_w};
    push(std::move(c), std::move(out));
    return *this;
  }

  Sequential& leaky_relu(double slope, std::string name = {}) {
    return activation(Activation::LeakyRelu, slope, label(name, "lrelu"));
  }
  Sequential& tanh(std::string name = {}) {
    return activation(Activation::Tanh, 0.0, label(name, "tanh"));
  }
  Sequential& sigmoid(std::string name = {}) {
    return activation(Activation::Sigmoid, 0.0, label(name, "sigmoid"));
  }

  Sequential& reshape(Shape to, std::string name = {}) {
    if (shape_size(to) != shape_size(output_shape()))
      throw ShapeError(label(name, "reshape"), {shape_size(output_shape())}, to);
    Reshape r{label(name, "reshape"), to};
    push(std::move(r), std::move(to));
    return *this;
  }

  Sequential& flatten(std::string name = {}) {
    return reshape({shape_size(output_shape())}, label(name, "flatten"));
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  ParamSet init_params(CounterRng& rng) const {
    ParamSet p;
    for (const auto& s : specs_) {
      Tensor t(s.shape);
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
      for (auto& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
      p.add(s.name, std::move(t));
    }
    return p;
  }

  ParamSet zero_params() const {
    ParamSet p;
    for (const auto& s : specs_) p.add(s.name, Tensor(s.shape));
    return p;
  }

  void check_params(const ParamSet& p) const {
    if (p.size() != specs_.size())
      throw ShapeError("parameter set (count)", {specs_.size()}, {p.size()});
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      if (p.name(i) != specs_[i].name)
        throw ParameterError("parameter set: expected '" + specs_[i].name + "' at position " +
                             std::to_string(i) + ", found '" + p.name(i) + "'");
      if (p[i].shape() != specs_[i].shape)
        throw ShapeError("layer parameter " + specs_[i].name, specs_[i].shape, p[i].shape());
    }
  }

 private:
  std::string label(const std::string& given, const char* kind) const {
    return given.empty() ? std::string(kind) + std::to_string(layers_.size()) : given;
  }

  std::size_t add_param(std::string name, Shape shape, std::size_t fan_in) {
    for (const auto& s : specs_)
      if (s.name == name) throw ParameterError("duplicate layer name for parameter '" + name + "'");
    specs_.push_back({std::move(name), std::move(shape), std::max<std::size_t>(1, fan_in)});
    return specs_.size() - 1;
  }

  Sequential& activation(Activation kind, double slope, std::string name) {
    Pointwise p{std::move(name), kind, slope};
    Shape s = output_shape();
    push(std::move(p), std::move(s));
    return *this;
  }

  void push(Layer layer, Shape out) {
    layers_.push_back(std::move(layer));
    shapes_.push_back(std::move(out));
  }

  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::vector<ParamSpec> specs_;
};

}  // namespace dplab
