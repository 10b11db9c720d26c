#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dplab/error.hpp"

namespace dplab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array of doubles. An empty shape denotes a scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size())
      throw ShapeError("Tensor", shape_, {data_.size()});
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("Tensor::item", {1}, shape_);
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw ShapeError("Tensor::reshaped", shape, shape_);
    return Tensor(std::move(shape), data_);
  }

  /// Batch size of a tensor whose leading axis indexes examples.
  std::size_t batch() const { return shape_.empty() ? 1 : shape_[0]; }

  /// Rows [first, first + count) along the leading axis.
  Tensor rows(std::size_t first, std::size_t count) const {
    if (shape_.empty() || first + count > shape_[0])
      throw ShapeError("Tensor::rows", {first + count}, shape_);
    Shape s = shape_;
    s[0] = count;
    const std::size_t stride = data_.size() / shape_[0];
    return Tensor(std::move(s),
                  std::vector<double>(data_.begin() + first * stride,
                                      data_.begin() + (first + count) * stride));
  }

  Tensor row(std::size_t i) const { return rows(i, 1); }

  /// Stacks equally shaped tensors with a leading batch axis of 1 each.
  static Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ParameterError("Tensor::concat_rows: no parts");
    Shape s = parts.front().shape();
    std::size_t n = 0;
    std::vector<double> data;
    for (const auto& p : parts) {
      if (p.rank() != s.size() ||
          !std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1))
        throw ShapeError("Tensor::concat_rows", s, p.shape());
      n += p.shape()[0];
      data.insert(data.end(), p.data_.begin(), p.data_.end());
    }
    s[0] = n;
    return Tensor(std::move(s), std::move(data));
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "Tensor::operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator-=(const Tensor& o) {
    require_same(o, "Tensor::operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }

  Tensor& operator*=(double a) {
    for (auto& v : data_) v *= a;
    return *this;
  }

  /// this += a * o
  void axpy(double a, const Tensor& o) {
    require_same(o, "Tensor::axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * o.data_[i];
  }

  double squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(const Shape& shape) {
    for (auto d : shape)
      if (d == 0) throw ShapeError("Tensor: dimensions must be positive", {}, shape);
    return shape_size(shape);
  }

  void require_same(const Tensor& o, const char* where) const {
    if (o.shape_ != shape_) throw ShapeError(where, shape_, o.shape_);
  }

  Shape shape_;
  std::vector<double> data_;
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor operator*(Tensor a, double s) { return a *= s; }
inline Tensor operator*(double s, Tensor a) { return a *= s; }

/// Named tensors with stable insertion order. Flattening follows that order.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor value) {
    if (index_.count(name)) throw ParameterError("ParamSet: duplicate name '" + name + "'");
    index_.emplace(name, tensors_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
    return tensors_.size() - 1;
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }

  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& operator[](std::size_t i) { return tensors_.at(i); }
  const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("ParamSet: no parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) { return tensors_[index_of(name)]; }
  const Tensor& at(const std::string& name) const { return tensors_[index_of(name)]; }

  auto begin() const noexcept { return tensors_.begin(); }
  auto end() const noexcept { return tensors_.end(); }
  auto begin() noexcept { return tensors_.begin(); }
  auto end() noexcept { return tensors_.end(); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor(tensors_[i].shape()));
    return out;
  }

  bool same_layout(const ParamSet& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (o.names_[i] != names_[i] || o.tensors_[i].shape() != tensors_[i].shape())
        return false;
    return true;
  }

  void require_layout(const ParamSet& o, const std::string& where) const {
    if (o.size() != size())
      throw ShapeError(where + " (parameter count)", {size()}, {o.size()});
    for (std::size_t i = 0; i < size(); ++i) {
      if (o.names_[i] != names_[i])
        throw ParameterError(where + ": parameter '" + o.names_[i] +
                             "' where '" + names_[i] + "' was expected");
      if (o.tensors_[i].shape() != tensors_[i].shape())
        throw ShapeError(where + " (" + names_[i] + ")", tensors_[i].shape(),
                         o.tensors_[i].shape());
    }
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& t : tensors_) out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    if (flat.size() != total_size())
      throw ShapeError("ParamSet::assign_flat", {total_size()}, {flat.size()});
    std::size_t k = 0;
    for (auto& t : tensors_)
      for (auto& v : t.values()) v = flat[k++];
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& t : tensors_) s += t.squared_norm();
    return s;
  }

  double norm() const { return std::sqrt(squared_norm()); }

  void scale(double a) {
    for (auto& t : tensors_) t *= a;
  }

  /// this += a * o, layouts must agree.
  void axpy(double a, const ParamSet& o) {
    require_layout(o, "ParamSet::axpy");
    for (std::size_t i = 0; i < size(); ++i) tensors_[i].axpy(a, o.tensors_[i]);
  }

  bool all_finite() const {
    return std::all_of(tensors_.begin(), tensors_.end(),
                       [](const Tensor& t) { return t.all_finite(); });
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Which DP operations may consume a gradient.
enum class GradScope { PerExample, BatchMean };

/// Gradients aligned with a ParamSet, tagged with their scope.
struct GradRecord {
  ParamSet grads;
  GradScope scope = GradScope::PerExample;

  double norm() const { return grads.norm(); }
  std::vector<double> flatten() const { return grads.flatten(); }
};

}  // namespace dplab
