#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dplab/error.hpp"
#include "dplab/idx.hpp"
#include "dplab/rng.hpp"
#include "dplab/tensor.hpp"

namespace dplab {

/// Images (n, 1, side, side) with integer class labels.
struct LabeledImages {
  Tensor images;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t side() const { return images.dim(2); }
  Tensor image(std::size_t i) const { return images.row(i); }

  std::array<std::size_t, 256> histogram() const {
    std::array<std::size_t, 256> h{};
    for (auto l : labels) ++h[l];
    return h;
  }
};

struct PixelRange {
  double lo = -1.0;
  double hi = 1.0;
};

/// Byte b maps to lo + (hi - lo) * b / 255.
inline LabeledImages to_labeled_images(const IdxImages& img, const IdxLabels& lab,
                                       PixelRange range = {}) {
  if (img.rows != img.cols) throw ParameterError("only square images are supported");
  if (img.count == 0) throw ParameterError("image file holds no images");
  LabeledImages out;
  out.images = Tensor({img.count, 1, img.rows, img.cols});
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out.images[i] = range.lo + (range.hi - range.lo) * (img.pixels[i] / 255.0);
  out.labels = lab.labels;
  return out;
}

inline LabeledImages load_idx(const std::string& images_path, const std::string& labels_path,
                              PixelRange range = {}) {
  auto [img, lab] = read_idx_pair(images_path, labels_path);
  return to_labeled_images(img, lab, range);
}

/// Canonical MNIST file names inside `dir`.
inline LabeledImages load_mnist(const std::string& dir, bool train, PixelRange range = {}) {
  const std::string stem = train ? "train" : "t10k";
  return load_idx(dir + "/" + stem + "-images-idx3-ubyte", dir + "/" + stem + "-labels-idx1-ubyte",
                  range);
}

/// Area-average resampling of square images to `side` x `side`. Each output
/// pixel averages the source area it covers, with fractional edge pixels
/// weighted by their overlap. Requires side <= source side.
inline Tensor area_resample(const Tensor& images, std::size_t side) {
  const std::size_t n = images.dim(0), src = images.dim(2);
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(3) != src)
    throw ShapeError("area_resample", {n, 1, src, src}, images.shape());
  if (side == 0 || side > src) throw ParameterError("area_resample: target side out of range");
  if (side == src) return images;
  // Separable weights: w[o][s] = overlap of source cell s with output cell o,
  // normalized by the output cell width.
  const double scale = static_cast<double>(src) / static_cast<double>(side);
  std::vector<std::vector<double>> w(side, std::vector<double>(src, 0.0));
  for (std::size_t o = 0; o < side; ++o) {
    const double a = o * scale, b = (o + 1) * scale;
    for (std::size_t s = 0; s < src; ++s) {
      const double ov = std::min(b, s + 1.0) - std::max(a, static_cast<double>(s));
      if (ov > 0.0) w[o][s] = ov / scale;
    }
  }
  Tensor out({n, 1, side, side});
  std::vector<double> tmp(side * src);
  for (std::size_t i = 0; i < n; ++i) {
    const double* in = images.data() + i * src * src;
    // rows first: tmp[oy][x]
    for (std::size_t oy = 0; oy < side; ++oy)
      for (std::size_t x = 0; x < src; ++x) {
        double s = 0.0;
        for (std::size_t y = 0; y < src; ++y) s += w[oy][y] * in[y * src + x];
        tmp[oy * src + x] = s;
      }
    double* o = out.data() + i * side * side;
    for (std::size_t oy = 0; oy < side; ++oy)
      for (std::size_t ox = 0; ox < side; ++ox) {
        double s = 0.0;
        for (std::size_t x = 0; x < src; ++x) s += w[ox][x] * tmp[oy * src + x];
        o[oy * side + ox] = s;
      }
  }
  return out;
}

/// Downsampling to one of the supported sides (8, 16, 28).
inline LabeledImages downsample(const LabeledImages& ds, std::size_t side) {
  if (side != 8 && side != 16 && side != 28)
    throw ParameterError("unsupported image side " + std::to_string(side) +
                         "; supported sides are 8, 16, 28");
  if (side > ds.side()) throw ParameterError("cannot upsample images");
  return {area_resample(ds.images, side), ds.labels};
}

/// Examples at the given indices, in that order.
inline LabeledImages select(const LabeledImages& ds, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ParameterError("selection is empty");
  const std::size_t per = ds.images.size() / ds.size();
  Shape s = ds.images.shape();
  s[0] = idx.size();
  LabeledImages out{Tensor(s), {}};
  out.labels.reserve(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= ds.size()) throw ParameterError("selection index out of range");
    std::copy_n(ds.images.data() + idx[k] * per, per, out.images.data() + k * per);
    out.labels.push_back(ds.labels[idx[k]]);
  }
  return out;
}

/// The first `n` examples.
inline LabeledImages subset(const LabeledImages& ds, std::size_t n) {
  if (n == 0 || n > ds.size())
    throw ParameterError("subset size " + std::to_string(n) + " exceeds the " +
                         std::to_string(ds.size()) + " available examples");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return select(ds, idx);
}

/// Only examples whose label is in `classes`, original order kept.
inline LabeledImages filter_classes(const LabeledImages& ds, const std::vector<int>& classes) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (std::find(classes.begin(), classes.end(), ds.labels[i]) != classes.end()) idx.push_back(i);
  if (idx.empty()) throw ParameterError("class filter leaves no examples");
  return select(ds, idx);
}

enum class SamplingScheme { Poisson, Shuffle };

/// Batch index sampler over a dataset of size n. Poisson includes each
/// example independently with probability q = batch_size / n, matching the
/// accountant's sampled Gaussian mechanism; Shuffle walks fixed-size batches
/// through reshuffled epochs.
class BatchSampler {
 public:
  BatchSampler(SamplingScheme scheme, std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : scheme_(scheme), n_(n), b_(batch_size), rng_(seed, 301) {
    if (n == 0 || batch_size == 0 || batch_size > n)
      throw ParameterError("batch size must lie in [1, dataset size]");
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    if (scheme_ == SamplingScheme::Poisson) {
      const double q = static_cast<double>(b_) / static_cast<double>(n_);
      for (std::size_t i = 0; i < n_; ++i)
        if (rng_.uniform() < q) out.push_back(i);
      return out;
    }
    if (order_.empty() || pos_ + b_ > order_.size()) reshuffle();
    out.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
               order_.begin() + static_cast<std::ptrdiff_t>(pos_ + b_));
    pos_ += b_;
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = n_ - 1; i > 0; --i) std::swap(order_[i], order_[rng_.below(i + 1)]);
    pos_ = 0;
  }

  SamplingScheme scheme_;
  std::size_t n_, b_;
  CounterRng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace dplab
