#pragma once

// Scalar-generic MLP kernels. Instantiated with double for ordinary
// forward/backward passes and with Dual for exact Hessian-vector products
// (forward-mode differentiation of the backward pass).

#include <cmath>
#include <cstddef>
#include <vector>

namespace mesa::net {

struct LayerShape {
  std::size_t out = 0;
  std::size_t in = 0;
  bool bias = true;
  bool operator==(const LayerShape&) const = default;
};

enum class Head { identity, sigmoid, tanh };

namespace detail {

struct Dual {
  double v = 0.0;  // value
  double t = 0.0;  // tangent
  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit by design
  Dual(double value, double tangent) : v(value), t(tangent) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.t + b.t}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.t - b.t}; }
inline Dual operator-(Dual a) { return {-a.v, -a.t}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.t * b.v + a.v * b.t}; }
inline Dual operator*(Dual a, double b) { return {a.v * b, a.t * b}; }
inline Dual operator*(double a, Dual b) { return {a * b.v, a * b.t}; }
inline Dual& operator+=(Dual& a, Dual b) { a = a + b; return a; }
inline Dual& operator-=(Dual& a, Dual b) { a = a - b; return a; }

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline Dual relu(Dual x) { return x.v > 0.0 ? x : Dual{0.0, 0.0}; }
inline bool positive(double x) { return x > 0.0; }
inline bool positive(Dual x) { return x.v > 0.0; }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline Dual sigmoid(Dual x) {
  double s = sigmoid(x.v);
  return {s, x.t * s * (1.0 - s)};
}

inline double tanh_(double x) { return std::tanh(x); }
inline Dual tanh_(Dual x) {
  double th = std::tanh(x.v);
  return {th, x.t * (1.0 - th * th)};
}

template <class T>
inline T apply_head(Head head, T x) {
  switch (head) {
    case Head::identity: return x;
    case Head::sigmoid: return sigmoid(x);
    case Head::tanh: return tanh_(x);
  }
  return x;
}

// d(head)/d(pre-activation), written in terms of the head output y so the
// dual tangent of y propagates through second derivatives correctly.
template <class T>
inline T head_deriv_from_output(Head head, T y) {
  switch (head) {
    case Head::identity: return T(1.0);
    case Head::sigmoid: return y * (T(1.0) - y);
    case Head::tanh: return T(1.0) - y * y;
  }
  return T(1.0);
}

// Per-layer activation buffers, reusable across calls.
template <class T>
struct Workspace {
  std::vector<std::vector<T>> pre;    // pre-activation per layer
  std::vector<std::vector<T>> post;   // post-activation per layer (last = head output)
  std::vector<std::vector<T>> dpre;   // backward scratch

  void resize(const std::vector<LayerShape>& shapes) {
    pre.resize(shapes.size());
    post.resize(shapes.size());
    dpre.resize(shapes.size());
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      pre[l].assign(shapes[l].out, T(0.0));
      post[l].assign(shapes[l].out, T(0.0));
      dpre[l].assign(shapes[l].out, T(0.0));
    }
  }
};

inline std::size_t layer_param_count(LayerShape s) {
  return s.out * s.in + (s.bias ? s.out : 0);
}

// Forward pass; hidden layers relu, final layer `head`. Input is always
// plain double (data, not parameters).
template <class T>
void forward_kernel(const std::vector<LayerShape>& shapes, const T* params, Head head,
                    const double* x, Workspace<T>& ws) {
  std::size_t offset = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const LayerShape sh = shapes[l];
    const T* w = params + offset;
    const T* b = w + sh.out * sh.in;
    const bool last = (l + 1 == shapes.size());
    for (std::size_t i = 0; i < sh.out; ++i) {
      T acc = sh.bias ? b[i] : T(0.0);
      const T* wrow = w + i * sh.in;
      if (l == 0) {
        for (std::size_t j = 0; j < sh.in; ++j) acc += wrow[j] * x[j];
      } else {
        const std::vector<T>& prev = ws.post[l - 1];
        for (std::size_t j = 0; j < sh.in; ++j) acc += wrow[j] * prev[j];
      }
      ws.pre[l][i] = acc;
      ws.post[l][i] = last ? apply_head(head, acc) : relu(acc);
    }
    offset += layer_param_count(sh);
  }
}

// Backward pass from an output-side seed dL/d(head output). Accumulates
// parameter gradients into grad (same flat layout as params); if dinput is
// non-null, writes dL/dx there (overwrites).
template <class T>
void backward_kernel(const std::vector<LayerShape>& shapes, const T* params, Head head,
                     const double* x, Workspace<T>& ws, const T* dout,
                     T* grad, T* dinput) {
  const std::size_t n_layers = shapes.size();
  // Seed the last layer through the head derivative.
  {
    const std::size_t last = n_layers - 1;
    for (std::size_t i = 0; i < shapes[last].out; ++i)
      ws.dpre[last][i] = dout[i] * head_deriv_from_output(head, ws.post[last][i]);
  }
  // Walk layers top-down.
  std::size_t offset_total = 0;
  std::vector<std::size_t> offsets(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    offsets[l] = offset_total;
    offset_total += layer_param_count(shapes[l]);
  }
  for (std::size_t li = n_layers; li-- > 0;) {
    const LayerShape sh = shapes[li];
    const T* w = params + offsets[li];
    T* gw = grad + offsets[li];
    T* gb = gw + sh.out * sh.in;
    const std::vector<T>& dpre = ws.dpre[li];
    // Parameter gradients.
    for (std::size_t i = 0; i < sh.out; ++i) {
      T d = dpre[i];
      T* gwrow = gw + i * sh.in;
      if (li == 0) {
        for (std::size_t j = 0; j < sh.in; ++j) gwrow[j] += d * x[j];
      } else {
        const std::vector<T>& prev = ws.post[li - 1];
        for (std::size_t j = 0; j < sh.in; ++j) gwrow[j] += d * prev[j];
      }
      if (sh.bias) gb[i] += d;
    }
    // Propagate to the layer below (or to the input).
    if (li > 0) {
      std::vector<T>& dlow = ws.dpre[li - 1];
      for (std::size_t j = 0; j < sh.in; ++j) {
        T acc = T(0.0);
        for (std::size_t i = 0; i < sh.out; ++i) acc += w[i * sh.in + j] * dpre[i];
        // relu gate of the lower layer.
        dlow[j] = positive(ws.pre[li - 1][j]) ? acc : T(0.0);
      }
    } else if (dinput != nullptr) {
      for (std::size_t j = 0; j < sh.in; ++j) {
        T acc = T(0.0);
        for (std::size_t i = 0; i < sh.out; ++i) acc += w[i * sh.in + j] * dpre[i];
        dinput[j] = acc;
      }
    }
  }
}

}  // namespace detail
}  // namespace mesa::net
