#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "dplab/error.hpp"
#include "dplab/layers.hpp"
#include "dplab/tensor.hpp"

namespace dplab {

// Reverse-mode differentiation over a Sequential. One forward pass records
// every layer input; the backward pass walks the layers in reverse.
//
// Nested differentiation (gradient of the input-gradient norm) is handled by
// reverse-over-forward: a tangent is pushed alongside the primal values, and
// the resulting dual network is differentiated in reverse.

/// values[0] is the input, values[k + 1] the output of layer k.
struct Trace {
  std::vector<Tensor> values;
  const Tensor& output() const { return values.back(); }
};

/// Primal and tangent values for every layer boundary.
struct DualTrace {
  std::vector<Tensor> values;
  std::vector<Tensor> tangents;
};

namespace detail {

inline void check_input(const Sequential& graph, const Tensor& x, const char* op) {
  const Shape& in = graph.input_shape();
  const std::string where =
      std::string(op) + " input to layer '" +
      (graph.layers().empty() ? std::string("identity") : layer_name(graph.layers().front())) +
      "'";
  if (x.rank() != in.size() + 1)
    throw ShapeError(where, batched(x.rank() ? x.batch() : 1, in), x.shape());
  for (std::size_t i = 0; i < in.size(); ++i)
    if (x.shape()[i + 1] != in[i]) throw ShapeError(where, batched(x.batch(), in), x.shape());
}

inline Tensor reshape_batch(const Tensor& x, const Shape& feature) {
  return x.reshaped(batched(x.batch(), feature));
}

}  // namespace detail

inline Trace trace(const Sequential& graph, const ParamSet& params, const Tensor& x) {
  detail::check_input(graph, x, "forward");
  graph.check_params(params);
  Trace t;
  t.values.reserve(graph.layers().size() + 1);
  t.values.push_back(x);
  for (const auto& layer : graph.layers()) {
    const Tensor& in = t.values.back();
    t.values.push_back(std::visit(
        [&](const auto& l) -> Tensor {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Pointwise>) {
            Tensor y = in;
            for (auto& v : y.values()) v = l.f(v);
            return y;
          } else if constexpr (std::is_same_v<L, Reshape>) {
            return detail::reshape_batch(in, l.to);
          } else {
            return l.apply(params, in, true);
          }
        },
        layer));
  }
  return t;
}

/// Deterministic forward evaluation; input is (N, input_shape...).
inline Tensor forward(const Sequential& graph, const ParamSet& params, const Tensor& x) {
  return std::move(trace(graph, params, x).values.back());
}

/// Pulls grad_output back through a recorded trace. Parameter gradients are
/// accumulated (summed over the batch) into *param_grads when non-null.
/// Returns the gradient with respect to the input.
inline Tensor backward(const Sequential& graph, const ParamSet& params, const Trace& t,
                       Tensor grad_output, ParamSet* param_grads) {
  if (grad_output.shape() != t.output().shape())
    throw ShapeError("backward: output gradient", t.output().shape(), grad_output.shape());
  if (param_grads) graph.check_params(*param_grads);
  Tensor g = std::move(grad_output);
  const auto& layers = graph.layers();
  for (std::size_t k = layers.size(); k-- > 0;) {
    const Tensor& in = t.values[k];
    g = std::visit(
        [&](const auto& l) -> Tensor {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Pointwise>) {
            Tensor gx = g;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= l.d1(in[i]);
            return gx;
          } else if constexpr (std::is_same_v<L, Reshape>) {
            return g.reshaped(in.shape());
          } else {
            return l.pullback(params, in, g, param_grads, true);
          }
        },
        layers[k]);
  }
  return g;
}

/// Primal and tangent pass: tangents[k + 1] = J_k tangents[k].
inline DualTrace trace_dual(const Sequential& graph, const ParamSet& params, const Tensor& x,
                            const Tensor& x_dot) {
  detail::check_input(graph, x, "dual forward");
  if (x_dot.shape() != x.shape()) throw ShapeError("dual forward tangent", x.shape(), x_dot.shape());
  graph.check_params(params);
  DualTrace t;
  t.values.push_back(x);
  t.tangents.push_back(x_dot);
  for (const auto& layer : graph.layers()) {
    const Tensor& in = t.values.back();
    const Tensor& din = t.tangents.back();
    std::pair<Tensor, Tensor> out = std::visit(
        [&](const auto& l) -> std::pair<Tensor, Tensor> {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Pointwise>) {
            Tensor y = in, dy = din;
            for (std::size_t i = 0; i < y.size(); ++i) {
              y[i] = l.f(in[i]);
              dy[i] = l.d1(in[i]) * din[i];
            }
            return {std::move(y), std::move(dy)};
          } else if constexpr (std::is_same_v<L, Reshape>) {
            return {detail::reshape_batch(in, l.to), detail::reshape_batch(din, l.to)};
          } else {
            return {l.apply(params, in, true), l.apply(params, din, false)};
          }
        },
        layer);
    t.values.push_back(std::move(out.first));
    t.tangents.push_back(std::move(out.second));
  }
  return t;
}

/// Reverse pass through the dual network. Given gradients for the final
/// (value, tangent) pair, returns gradients for the input (value, tangent)
/// and accumulates parameter gradients.
inline std::pair<Tensor, Tensor> backward_dual(const Sequential& graph, const ParamSet& params,
                                               const DualTrace& t, Tensor grad_value,
                                               Tensor grad_tangent, ParamSet* param_grads) {
  if (param_grads) graph.check_params(*param_grads);
  Tensor g = std::move(grad_value);
  Tensor gd = std::move(grad_tangent);
  const auto& layers = graph.layers();
  for (std::size_t k = layers.size(); k-- > 0;) {
    const Tensor& in = t.values[k];
    const Tensor& din = t.tangents[k];
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Pointwise>) {
            Tensor gx(in.shape()), gdx(in.shape());
            for (std::size_t i = 0; i < in.size(); ++i) {
              const double d1 = l.d1(in[i]);
              gx[i] = d1 * g[i] + l.d2(in[i]) * din[i] * gd[i];
              gdx[i] = d1 * gd[i];
            }
            g = std::move(gx);
            gd = std::move(gdx);
          } else if constexpr (std::is_same_v<L, Reshape>) {
            g = g.reshaped(in.shape());
            gd = gd.reshaped(in.shape());
          } else {
            // The layer is bilinear in (input, weight): the tangent path uses
            // the same weights without bias.
            Tensor gx = l.pullback(params, in, g, param_grads, true);
            Tensor gdx = l.pullback(params, din, gd, param_grads, false);
            g = std::move(gx);
            gd = std::move(gdx);
          }
        },
        layers[k]);
  }
  return {std::move(g), std::move(gd)};
}

/// Value of a per-example loss and its gradient with respect to the
/// network output row (shape (1, output_shape...)).
struct LossEval {
  double value = 0.0;
  Tensor grad;
};

/// Loss applied to the output row of example `index`.
using ExampleLoss = std::function<LossEval(const Tensor& output_row, std::size_t index)>;

/// Uses the network output itself as the loss; it must be a scalar.
inline ExampleLoss scalar_output_loss() {
  return [](const Tensor& out, std::size_t) {
    if (out.size() != 1)
      throw ShapeError("non-scalar loss: per-example output", {1, 1}, out.shape());
    return LossEval{out[0], Tensor(out.shape(), 1.0)};
  };
}

namespace detail {

inline Tensor as_single_example(const Sequential& graph, const Tensor& x) {
  if (x.shape() == graph.input_shape()) return x.reshaped(batched(1, graph.input_shape()));
  if (x.rank() == graph.input_shape().size() + 1 && x.batch() != 1)
    throw ShapeError("per-example input must hold one example",
                     batched(1, graph.input_shape()), x.shape());
  return x;
}

inline LossEval checked_loss(const ExampleLoss& loss, const Tensor& out, std::size_t i) {
  LossEval e = loss(out, i);
  if (e.grad.shape() != out.shape())
    throw ShapeError("non-scalar loss: gradient shape", out.shape(), e.grad.shape());
  return e;
}

}  // namespace detail

/// Gradient of the loss at each singleton batch {x_i}; output order follows
/// the input order.
inline std::vector<GradRecord> per_example_grads(const Sequential& graph, const ParamSet& params,
                                                 std::span<const Tensor> batch,
                                                 const ExampleLoss& loss = scalar_output_loss(),
                                                 std::vector<double>* losses = nullptr) {
  std::vector<GradRecord> out;
  out.reserve(batch.size());
  if (losses) losses->clear();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor x = detail::as_single_example(graph, batch[i]);
    Trace t = trace(graph, params, x);
    LossEval e = detail::checked_loss(loss, t.output(), i);
    GradRecord r{graph.zero_params(), GradScope::PerExample};
    backward(graph, params, t, std::move(e.grad), &r.grads);
    if (losses) losses->push_back(e.value);
    out.push_back(std::move(r));
  }
  return out;
}

/// Batched variant: rows of `batch` are the examples.
inline std::vector<GradRecord> per_example_grads(const Sequential& graph, const ParamSet& params,
                                                 const Tensor& batch,
                                                 const ExampleLoss& loss = scalar_output_loss(),
                                                 std::vector<double>* losses = nullptr) {
  detail::check_input(graph, batch, "per-example");
  std::vector<Tensor> rows;
  rows.reserve(batch.batch());
  for (std::size_t i = 0; i < batch.batch(); ++i) rows.push_back(batch.row(i));
  return per_example_grads(graph, params, std::span<const Tensor>(rows), loss, losses);
}

/// Gradient of the batch-mean loss from one batched forward/backward pass.
inline GradRecord batch_mean_grad(const Sequential& graph, const ParamSet& params,
                                  const Tensor& batch,
                                  const ExampleLoss& loss = scalar_output_loss(),
                                  double* mean_loss = nullptr) {
  Trace t = trace(graph, params, batch);
  const std::size_t n = batch.batch();
  const Tensor& out = t.output();
  Tensor grad(out.shape());
  const std::size_t stride = out.size() / n;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    LossEval e = detail::checked_loss(loss, out.row(i), i);
    total += e.value;
    for (std::size_t j = 0; j < stride; ++j) grad[i * stride + j] = e.grad[j] / static_cast<double>(n);
  }
  GradRecord r{graph.zero_params(), GradScope::BatchMean};
  backward(graph, params, t, std::move(grad), &r.grads);
  if (mean_loss) *mean_loss = total / static_cast<double>(n);
  return r;
}

/// Gradient of a scalar-valued network with respect to its (single) input.
inline Tensor input_grad(const Sequential& graph, const ParamSet& params, const Tensor& x) {
  const Tensor xs = detail::as_single_example(graph, x);
  Trace t = trace(graph, params, xs);
  if (t.output().size() != 1)
    throw ShapeError("input_grad: network output must be scalar", {1, 1}, t.output().shape());
  return backward(graph, params, t, Tensor(t.output().shape(), 1.0), nullptr);
}

/// Result of the gradient-penalty differentiation at one interpolate.
struct PenaltyGrad {
  double penalty = 0.0;          ///< (||grad_y D(y)|| - 1)^2
  double input_grad_norm = 0.0;  ///< ||grad_y D(y)||
  GradRecord grad;               ///< d penalty / d params, per-example scope
};

/// Input-gradient norms below this are treated as zero.
inline constexpr double kGradNormFloor = 1e-12;

/// Gradient with respect to the parameters of (||grad_y D(y)||_2 - 1)^2.
///
/// With u = grad_y D, d/dw (||u|| - 1)^2 = 2 (||u|| - 1) / ||u|| * u^T du/dw,
/// and u^T du/dw is the parameter gradient of the directional derivative
/// D'(y)[v] at v = u held fixed. That directional derivative is the tangent
/// output of the dual pass, so one dual backward pass yields the result.
/// At ||u|| < kGradNormFloor the norm's subgradient is taken as 0: penalty 1,
/// zero gradient.
inline PenaltyGrad grad_of_grad_norm(const Sequential& graph, const ParamSet& params,
                                     const Tensor& y) {
  const Tensor ys = detail::as_single_example(graph, y);
  const Tensor u = input_grad(graph, params, ys);
  const double norm = std::sqrt(u.squared_norm());
  PenaltyGrad out;
  out.input_grad_norm = norm;
  out.penalty = (norm - 1.0) * (norm - 1.0);
  out.grad = GradRecord{graph.zero_params(), GradScope::PerExample};
  if (norm < kGradNormFloor) {
    out.penalty = 1.0;
    return out;
  }
  DualTrace t = trace_dual(graph, params, ys, u);
  const Shape& os = t.values.back().shape();
  backward_dual(graph, params, t, Tensor(os), Tensor(os, 1.0), &out.grad.grads);
  out.grad.grads.scale(2.0 * (norm - 1.0) / norm);
  return out;
}

}  // namespace dplab
