#include "mesa/net.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "mesa/errors.hpp"

namespace mesa::net {

namespace {

std::size_t total_params(const std::vector<LayerShape>& shapes) {
  std::size_t n = 0;
  for (const LayerShape& s : shapes) {
    if (s.in == 0 || s.out == 0) throw ShapeError("ParameterSet: zero-sized layer");
    n += detail::layer_param_count(s);
  }
  return n;
}

void check_chain(const std::vector<LayerShape>& shapes) {
  for (std::size_t l = 1; l < shapes.size(); ++l)
    if (shapes[l].in != shapes[l - 1].out)
      throw ShapeError("ParameterSet: layer " + std::to_string(l) + " input dim " +
                       std::to_string(shapes[l].in) + " != previous output dim " +
                       std::to_string(shapes[l - 1].out));
}

void check_input(const ParameterSet& params, std::size_t dim) {
  if (dim != params.input_dim())
    throw ShapeError("forward: input dim " + std::to_string(dim) + " != network input dim " +
                     std::to_string(params.input_dim()));
}

void check_batch(const ParameterSet& params, const Batch& batch) {
  if (batch.in_dim != params.input_dim() || batch.out_dim != params.output_dim())
    throw ShapeError("batch dims (" + std::to_string(batch.in_dim) + ", " +
                     std::to_string(batch.out_dim) + ") do not match network (" +
                     std::to_string(params.input_dim()) + ", " +
                     std::to_string(params.output_dim()) + ")");
  if (batch.inputs.size() != batch.n * batch.in_dim ||
      batch.targets.size() != batch.n * batch.out_dim)
    throw ShapeError("batch: buffer sizes do not match n");
  if (batch.n == 0) throw ShapeError("batch: empty");
}

}  // namespace

ParameterSet::ParameterSet(std::vector<LayerShape> shapes) : shapes_(std::move(shapes)) {
  check_chain(shapes_);
  flat_.assign(total_params(shapes_), 0.0);
}

ParameterSet ParameterSet::random_init(const std::vector<LayerShape>& shapes, Rng& rng) {
  ParameterSet p(shapes);
  std::size_t offset = 0;
  for (const LayerShape& s : shapes) {
    double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    for (std::size_t i = 0; i < s.out * s.in; ++i)
      p.flat_[offset + i] = rng.uniform(-bound, bound);
    offset += detail::layer_param_count(s);  // biases stay zero
  }
  return p;
}

std::vector<LayerShape> ParameterSet::mlp_shapes(std::size_t in,
                                                 const std::vector<std::size_t>& hidden,
                                                 std::size_t out) {
  std::vector<LayerShape> shapes;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    shapes.push_back({h, prev});
    prev = h;
  }
  shapes.push_back({out, prev});
  return shapes;
}

bool ParameterSet::all_finite() const {
  for (double x : flat_)
    if (!std::isfinite(x)) return false;
  return true;
}

void ParameterSet::fill(double value) {
  for (double& x : flat_) x = value;
}

void ParameterSet::axpy(double a, const ParameterSet& x) {
  if (!congruent_with(x)) throw ShapeError("axpy: incongruent parameter sets");
  for (std::size_t i = 0; i < flat_.size(); ++i) flat_[i] += a * x.flat_[i];
}

void ParameterSet::scale(double a) {
  for (double& x : flat_) x *= a;
}

std::vector<double> forward(const ParameterSet& params, Head head, std::span<const double> input) {
  check_input(params, input.size());
  detail::Workspace<double> ws;
  ws.resize(params.shapes());
  detail::forward_kernel(params.shapes(), params.data(), head, input.data(), ws);
  return ws.post.back();
}

std::vector<double> forward_trace(const ParameterSet& params, Head head,
                                  std::span<const double> input, EvalTrace& trace) {
  check_input(params, input.size());
  trace.input.assign(input.begin(), input.end());
  trace.ws.resize(params.shapes());
  detail::forward_kernel(params.shapes(), params.data(), head, trace.input.data(), trace.ws);
  return trace.ws.post.back();
}

std::vector<double> backward_trace(const ParameterSet& params, Head head, EvalTrace& trace,
                                   std::span<const double> doutput, Gradient* grad) {
  if (doutput.size() != params.output_dim())
    throw ShapeError("backward_trace: seed dim != network output dim");
  if (grad != nullptr && !grad->congruent_with(params))
    throw ShapeError("backward_trace: gradient not congruent with parameters");
  std::vector<double> dinput(params.input_dim(), 0.0);
  // Scratch gradient when the caller only wants input gradients.
  Gradient local;
  Gradient* g = grad;
  if (g == nullptr) {
    local = Gradient(params.shapes());
    g = &local;
  }
  detail::backward_kernel(params.shapes(), params.data(), head, trace.input.data(), trace.ws,
                          doutput.data(), g->data(), dinput.data());
  return dinput;
}

namespace {

// Shared scalar-generic mse loss + gradient. grad may be null (loss only).
template <class T>
T mse_backward_generic(const std::vector<LayerShape>& shapes, const T* params, Head head,
                       const Batch& batch, T* grad) {
  detail::Workspace<T> ws;
  ws.resize(shapes);
  const std::size_t out_dim = batch.out_dim;
  std::vector<T> dout(out_dim, T(0.0));
  T loss = T(0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.n);
  for (std::size_t i = 0; i < batch.n; ++i) {
    const double* x = batch.inputs.data() + i * batch.in_dim;
    detail::forward_kernel(shapes, params, head, x, ws);
    T sample_loss = T(0.0);
    for (std::size_t k = 0; k < out_dim; ++k) {
      T err = ws.post.back()[k] - T(batch.targets[i * out_dim + k]);
      sample_loss += err * err;
      dout[k] = 2.0 * inv_n * err;
    }
    if (!std::isfinite(detail::value_of(sample_loss)))
      throw NumericError("mse loss is not finite at batch index " + std::to_string(i), i);
    loss += inv_n * sample_loss;
    if (grad != nullptr)
      detail::backward_kernel(shapes, params, head, x, ws, dout.data(), grad, (T*)nullptr);
  }
  return loss;
}

}  // namespace

double mse_loss(const ParameterSet& params, Head head, const Batch& batch) {
  check_batch(params, batch);
  return mse_backward_generic<double>(params.shapes(), params.data(), head, batch, nullptr);
}

double mse_backward(const ParameterSet& params, Head head, const Batch& batch, Gradient& grad) {
  check_batch(params, batch);
  if (!grad.congruent_with(params)) grad = Gradient(params.shapes());
  grad.fill(0.0);
  return mse_backward_generic<double>(params.shapes(), params.data(), head, batch, grad.data());
}

Gradient hvp_mse(const ParameterSet& params, Head head, const Batch& batch, const Gradient& dir) {
  check_batch(params, batch);
  if (!dir.congruent_with(params)) throw ShapeError("hvp_mse: direction not congruent");
  std::vector<detail::Dual> p(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    p[i] = detail::Dual{params.data()[i], dir.data()[i]};
  std::vector<detail::Dual> g(params.size(), detail::Dual{0.0, 0.0});
  mse_backward_generic<detail::Dual>(params.shapes(), p.data(), head, batch, g.data());
  Gradient out(params.shapes());
  for (std::size_t i = 0; i < g.size(); ++i) out.data()[i] = g[i].t;
  return out;
}

ParameterSet inner_adapted(const ParameterSet& params, Head head, const Batch& batch, double lr) {
  Gradient g(params.shapes());
  mse_backward(params, head, batch, g);
  ParameterSet adapted = params;
  adapted.axpy(-lr, g);
  return adapted;
}

Gradient meta_gradient(const ParameterSet& params, Head head, const Batch& inner,
                       const Batch& outer, double inner_lr, MetaMode mode, double* outer_loss) {
  ParameterSet adapted = inner_adapted(params, head, inner, inner_lr);
  Gradient g_outer(params.shapes());
  double loss = mse_backward(adapted, head, outer, g_outer);
  if (outer_loss != nullptr) *outer_loss = loss;
  if (mode == MetaMode::first_order || inner_lr == 0.0) return g_outer;
  // Exact: d/d(params) = (I - lr * H_inner(params)) * g_outer(adapted).
  Gradient correction = hvp_mse(params, head, inner, g_outer);
  g_outer.axpy(-inner_lr, correction);
  return g_outer;
}

AdamState AdamState::make(const ParameterSet& params, double lr) {
  AdamState s;
  s.lr = lr;
  s.m = Gradient(params.shapes());
  s.v = Gradient(params.shapes());
  return s;
}

void adam_step(ParameterSet& params, const Gradient& grad, AdamState& state) {
  if (!params.congruent_with(grad) || !params.congruent_with(state.m))
    throw ShapeError("adam_step: incongruent parameters/gradient/state");
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  double* p = params.data();
  double* m = state.m.data();
  double* v = state.v.data();
  const double* g = grad.data();
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    double mhat = m[i] / c1;
    double vhat = v[i] / c2;
    if (mhat != 0.0 || vhat != 0.0) p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

void polyak_update(ParameterSet& target, const ParameterSet& online, double tau) {
  if (!target.congruent_with(online)) throw ShapeError("polyak_update: incongruent parameters");
  double* t = target.data();
  const double* o = online.data();
  for (std::size_t i = 0; i < target.size(); ++i) t[i] = (1.0 - tau) * t[i] + tau * o[i];
}

}  // namespace mesa::net
