#pragma once

// Small fully connected networks with hand-rolled reverse-mode gradients.
// Hidden activations are relu; the output head is identity, sigmoid, or
// tanh. Everything is double precision and deterministic.

#include <cstddef>
#include <span>
#include <vector>

#include "mesa/detail/net_kernels.hpp"
#include "mesa/rng.hpp"

namespace mesa::net {

// Flat parameter container: per layer, weight (out x in, row-major) then
// bias (out). Doubles as the gradient/moment container of identical shape.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::vector<LayerShape> shapes);

  // Weights ~ U(-1/sqrt(in), 1/sqrt(in)), biases zero.
  static ParameterSet random_init(const std::vector<LayerShape>& shapes, Rng& rng);

  // Hidden widths h plus an output layer: in -> h[0] -> ... -> out.
  static std::vector<LayerShape> mlp_shapes(std::size_t in, const std::vector<std::size_t>& hidden,
                                            std::size_t out);

  const std::vector<LayerShape>& shapes() const { return shapes_; }
  std::size_t size() const { return flat_.size(); }
  std::size_t input_dim() const { return shapes_.empty() ? 0 : shapes_.front().in; }
  std::size_t output_dim() const { return shapes_.empty() ? 0 : shapes_.back().out; }

  double* data() { return flat_.data(); }
  const double* data() const { return flat_.data(); }
  std::span<double> flat() { return flat_; }
  std::span<const double> flat() const { return flat_; }

  bool congruent_with(const ParameterSet& other) const { return shapes_ == other.shapes_; }
  bool all_finite() const;

  void fill(double value);
  void axpy(double a, const ParameterSet& x);  // this += a * x
  void scale(double a);

  bool operator==(const ParameterSet&) const = default;

 private:
  std::vector<LayerShape> shapes_;
  std::vector<double> flat_;
};

using Gradient = ParameterSet;

// Row-major batch of inputs and regression targets.
struct Batch {
  std::size_t n = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> inputs;   // n * in_dim
  std::vector<double> targets;  // n * out_dim
};

// Single-sample forward through the head.
std::vector<double> forward(const ParameterSet& params, Head head, std::span<const double> input);

// Forward with retained activations, for callers that need to backpropagate
// an arbitrary output seed (e.g. policy losses through a frozen critic).
struct EvalTrace {
  std::vector<double> input;
  detail::Workspace<double> ws;
};
std::vector<double> forward_trace(const ParameterSet& params, Head head,
                                  std::span<const double> input, EvalTrace& trace);

// Backpropagates dL/d(output) through a recorded trace. Accumulates into
// grad when non-null; returns dL/d(input).
std::vector<double> backward_trace(const ParameterSet& params, Head head, EvalTrace& trace,
                                   std::span<const double> doutput, Gradient* grad);

// Mean over the batch of the squared error summed over output dims.
double mse_loss(const ParameterSet& params, Head head, const Batch& batch);

// Same loss; accumulates d(loss)/d(params) into grad (grad is zeroed first).
// Throws NumericError (with the batch index) on non-finite terms.
double mse_backward(const ParameterSet& params, Head head, const Batch& batch, Gradient& grad);

// Exact Hessian-vector product of the mse loss at params in direction dir.
Gradient hvp_mse(const ParameterSet& params, Head head, const Batch& batch, const Gradient& dir);

// One plain gradient step on the mse loss: params - lr * grad.
ParameterSet inner_adapted(const ParameterSet& params, Head head, const Batch& batch, double lr);

enum class MetaMode { first_order, exact };

// Gradient of L_outer(params - inner_lr * grad L_inner(params)) with respect
// to params. first_order treats the adapted parameters as independent;
// exact differentiates through the inner step.
Gradient meta_gradient(const ParameterSet& params, Head head, const Batch& inner,
                       const Batch& outer, double inner_lr, MetaMode mode,
                       double* outer_loss = nullptr);

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  Gradient m;  // first moment, congruent with the target ParameterSet
  Gradient v;  // second moment

  static AdamState make(const ParameterSet& params, double lr);
};

// Bias-corrected Adam update in place. A zero gradient with zero moments
// leaves params bit-identical.
void adam_step(ParameterSet& params, const Gradient& grad, AdamState& state);

// target <- (1 - tau) * target + tau * online.
void polyak_update(ParameterSet& target, const ParameterSet& online, double tau);

}  // namespace mesa::net
