#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include <Eigen/Core>

#include "lesion/error.hpp"
#include "lesion/rng.hpp"

namespace lesion {

enum class Activation { relu, tanh };

constexpr std::string_view activation_name(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw Error(ErrorCode::InvalidConfig, "hidden_activation must be relu or tanh, got '" + std::string(s) + "'");
}

struct MlpShape {
  std::size_t inputs = 1000;
  std::size_t hidden = 1000;
  std::size_t outputs = 2;

  bool operator==(const MlpShape&) const = default;
};

inline std::string to_string(const MlpShape& s) {
  return std::to_string(s.inputs) + "-" + std::to_string(s.hidden) + "-" + std::to_string(s.outputs);
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
/// Batch of examples, one per column.
template <typename T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

/// The four tensors of a two-layer network: hidden = act(w1 x + b1),
/// logits = w2 hidden + b2. Shared by parameters, gradients and Adam moments.
template <typename T>
struct LayerTensors {
  RowMatrix<T> w1;  // hidden x inputs
  Vector<T> b1;     // hidden
  RowMatrix<T> w2;  // outputs x hidden
  Vector<T> b2;     // outputs

  static LayerTensors zeros(const MlpShape& s) {
    const auto in = static_cast<Eigen::Index>(s.inputs);
    const auto hid = static_cast<Eigen::Index>(s.hidden);
    const auto out = static_cast<Eigen::Index>(s.outputs);
    return {RowMatrix<T>::Zero(hid, in), Vector<T>::Zero(hid), RowMatrix<T>::Zero(out, hid), Vector<T>::Zero(out)};
  }

  MlpShape shape() const {
    return {static_cast<std::size_t>(w1.cols()), static_cast<std::size_t>(w1.rows()),
            static_cast<std::size_t>(w2.rows())};
  }

  bool all_finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }

  /// Calls fn(span) on w1, b1, w2, b2 in that order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(std::span<T>(w1.data(), static_cast<std::size_t>(w1.size())));
    fn(std::span<T>(b1.data(), static_cast<std::size_t>(b1.size())));
    fn(std::span<T>(w2.data(), static_cast<std::size_t>(w2.size())));
    fn(std::span<T>(b2.data(), static_cast<std::size_t>(b2.size())));
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    fn(std::span<const T>(w1.data(), static_cast<std::size_t>(w1.size())));
    fn(std::span<const T>(b1.data(), static_cast<std::size_t>(b1.size())));
    fn(std::span<const T>(w2.data(), static_cast<std::size_t>(w2.size())));
    fn(std::span<const T>(b2.data(), static_cast<std::size_t>(b2.size())));
  }

  bool operator==(const LayerTensors& o) const {
    return shape() == o.shape() && w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
  }
};

template <typename T>
struct MlpParams : LayerTensors<T> {
  static MlpParams zeros(const MlpShape& s = {}) { return {LayerTensors<T>::zeros(s)}; }
};

template <typename T>
struct Gradients : LayerTensors<T> {
  static Gradients zeros(const MlpShape& s) { return {LayerTensors<T>::zeros(s)}; }
};

template <typename T>
struct AdamState {
  LayerTensors<T> m;
  LayerTensors<T> v;
  std::uint64_t t = 0;

  static AdamState zeros(const MlpShape& s) { return {LayerTensors<T>::zeros(s), LayerTensors<T>::zeros(s), 0}; }
};

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    // learning_rate 0 is allowed: it freezes the parameters, which is useful in tests.
    if (!(learning_rate >= 0.0 && std::isfinite(learning_rate))) {
      throw Error(ErrorCode::InvalidConfig, "learning_rate must be >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error(ErrorCode::InvalidConfig, "beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw Error(ErrorCode::InvalidConfig, "beta2 must be in [0, 1)");
    if (!(epsilon > 0.0 && std::isfinite(epsilon))) throw Error(ErrorCode::InvalidConfig, "epsilon must be > 0");
  }
};

/// Glorot-uniform weights, zero biases. w1 is drawn (row-major) before w2.
template <typename T>
MlpParams<T> init_params(std::uint64_t seed, const MlpShape& shape = {}) {
  auto p = MlpParams<T>::zeros(shape);
  Rng rng(seed);
  auto fill = [&](RowMatrix<T>& w) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    T* data = w.data();
    for (Eigen::Index i = 0; i < w.size(); ++i) data[i] = static_cast<T>(uniform(rng, -bound, bound));
  };
  fill(p.w1);
  fill(p.w2);
  return p;
}

/// Max-shifted softmax.
template <typename T>
Vector<T> softmax(const Eigen::Ref<const Vector<T>>& logits) {
  if (logits.size() == 0) throw Error(ErrorCode::ShapeMismatch, "softmax of an empty vector");
  if (!logits.allFinite()) throw Error(ErrorCode::NonFiniteInput, "softmax input is not finite");
  const T shift = logits.maxCoeff();
  Vector<T> e = (logits.array() - shift).exp().matrix();
  return e / e.sum();
}

inline constexpr double kLossClip = 1e-12;

/// -ln(max(p[label], 1e-12)).
template <typename T>
T cross_entropy_loss(const Eigen::Ref<const Vector<T>>& probs, int label) {
  if (label != 0 && label != 1) throw Error(ErrorCode::LabelOutOfDomain, "label must be 0 or 1");
  if (label >= probs.size()) throw Error(ErrorCode::ShapeMismatch, "label outside the output layer");
  return -std::log(std::max(probs[label], static_cast<T>(kLossClip)));
}

template <typename T>
struct ForwardTrace {
  Vector<T> x;
  Vector<T> pre_h;
  Vector<T> h;
  Vector<T> logits;
  Vector<T> probs;
};

namespace detail {

template <typename Derived>
auto activate(const Eigen::MatrixBase<Derived>& pre, Activation act) {
  using T = typename Derived::Scalar;
  using Plain = typename Derived::PlainObject;
  if (act == Activation::relu) return Plain(pre.array().max(T(0)).matrix());
  return Plain(pre.array().tanh().matrix());
}

/// Elementwise derivative of the activation, given pre-activation and output.
template <typename D1, typename D2>
auto activation_slope(const Eigen::MatrixBase<D1>& pre, const Eigen::MatrixBase<D2>& out, Activation act) {
  using T = typename D1::Scalar;
  using Plain = typename D1::PlainObject;
  if (act == Activation::relu) return Plain((pre.array() > T(0)).template cast<T>().matrix());
  return Plain((T(1) - out.array().square()).matrix());
}

inline void require_label(int label, std::size_t outputs) {
  if (label != 0 && label != 1) throw Error(ErrorCode::LabelOutOfDomain, "label must be 0 or 1");
  if (static_cast<std::size_t>(label) >= outputs) throw Error(ErrorCode::ShapeMismatch, "label outside output layer");
}

}  // namespace detail

template <typename T>
ForwardTrace<T> forward(const MlpParams<T>& params, const Eigen::Ref<const Vector<T>>& x,
                        Activation act = Activation::relu) {
  if (static_cast<std::size_t>(x.size()) != params.shape().inputs) {
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.size()) + " components, network expects " +
                                              std::to_string(params.shape().inputs));
  }
  ForwardTrace<T> tr;
  tr.x = x;
  tr.pre_h = params.w1 * x + params.b1;
  tr.h = detail::activate(tr.pre_h, act);
  tr.logits = params.w2 * tr.h + params.b2;
  tr.probs = softmax<T>(tr.logits);
  return tr;
}

template <typename T>
ForwardTrace<T> forward(const MlpParams<T>& params, std::span<const T> x, Activation act = Activation::relu) {
  const Eigen::Map<const Vector<T>> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  return forward(params, Eigen::Ref<const Vector<T>>(xv), act);
}

/// Gradients of cross_entropy_loss(forward(params, x).probs, label) with
/// respect to every parameter.
template <typename T>
Gradients<T> backward(const ForwardTrace<T>& trace, const MlpParams<T>& params, int label,
                      Activation act = Activation::relu) {
  const auto shape = params.shape();
  if (static_cast<std::size_t>(trace.x.size()) != shape.inputs ||
      static_cast<std::size_t>(trace.h.size()) != shape.hidden ||
      static_cast<std::size_t>(trace.probs.size()) != shape.outputs) {
    throw Error(ErrorCode::ShapeMismatch, "trace does not match network " + to_string(shape));
  }
  detail::require_label(label, shape.outputs);

  Vector<T> dlogits = trace.probs;
  dlogits[label] -= T(1);
  const Vector<T> dh = params.w2.transpose() * dlogits;
  const Vector<T> dpre = dh.cwiseProduct(detail::activation_slope(trace.pre_h, trace.h, act));

  Gradients<T> g;
  g.w2 = dlogits * trace.h.transpose();
  g.b2 = dlogits;
  g.w1 = dpre * trace.x.transpose();
  g.b1 = dpre;
  return g;
}

/// Mean loss and mean gradients over a batch (one example per column of x).
template <typename T>
struct BatchGradients {
  T loss;
  Gradients<T> grads;
};

template <typename T>
BatchGradients<T> batch_loss_and_gradients(const MlpParams<T>& params, const ColMatrix<T>& x,
                                           std::span<const int> labels, Activation act = Activation::relu) {
  const auto shape = params.shape();
  const auto n = x.cols();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size() || static_cast<std::size_t>(x.rows()) != shape.inputs) {
    throw Error(ErrorCode::ShapeMismatch, "batch shape does not match network " + to_string(shape));
  }
  const ColMatrix<T> pre = (params.w1 * x).colwise() + params.b1;
  const ColMatrix<T> h = detail::activate(pre, act);
  ColMatrix<T> logits = (params.w2 * h).colwise() + params.b2;

  ColMatrix<T> dlogits(logits.rows(), n);
  T loss = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    detail::require_label(labels[static_cast<std::size_t>(j)], shape.outputs);
    const Vector<T> p = softmax<T>(logits.col(j));
    loss += cross_entropy_loss<T>(p, labels[static_cast<std::size_t>(j)]);
    dlogits.col(j) = p;
    dlogits(labels[static_cast<std::size_t>(j)], j) -= T(1);
  }
  const T inv_n = T(1) / static_cast<T>(n);
  dlogits *= inv_n;

  const ColMatrix<T> dh = params.w2.transpose() * dlogits;
  const ColMatrix<T> dpre = dh.cwiseProduct(detail::activation_slope(pre, h, act));

  BatchGradients<T> out{loss * inv_n, {}};
  out.grads.w2.noalias() = dlogits * h.transpose();
  out.grads.b2 = dlogits.rowwise().sum();
  out.grads.w1.noalias() = dpre * x.transpose();
  out.grads.b1 = dpre.rowwise().sum();
  return out;
}

/// Class probabilities for a batch, one column per example.
template <typename T>
ColMatrix<T> batch_probs(const MlpParams<T>& params, const ColMatrix<T>& x, Activation act = Activation::relu) {
  if (static_cast<std::size_t>(x.rows()) != params.shape().inputs) {
    throw Error(ErrorCode::ShapeMismatch, "batch rows do not match network inputs");
  }
  const ColMatrix<T> h = detail::activate(ColMatrix<T>((params.w1 * x).colwise() + params.b1), act);
  ColMatrix<T> logits = (params.w2 * h).colwise() + params.b2;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) logits.col(j) = softmax<T>(logits.col(j));
  return logits;
}

/// One bias-corrected Adam update of a flat tensor; `t` is the new step count.
template <typename T>
void adam_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                 const AdamHyper& hyper) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam buffers differ in size");
  }
  const T b1 = static_cast<T>(hyper.beta1);
  const T b2 = static_cast<T>(hyper.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(hyper.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(hyper.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(hyper.learning_rate);
  const T eps = static_cast<T>(hyper.epsilon);
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(theta.size());
  Eigen::Map<Arr> th(theta.data(), n), mm(m.data(), n), vv(v.data(), n);
  const Eigen::Map<const Arr> g(grad.data(), n);
  mm = b1 * mm + (T(1) - b1) * g;
  vv = b2 * vv + (T(1) - b2) * g * g;
  th -= lr * (mm / c1) / ((vv / c2).sqrt() + eps);
}

/// In-place form used by the trainer.
template <typename T>
void adam_step_in_place(MlpParams<T>& params, const Gradients<T>& grads, AdamState<T>& state,
                        const AdamHyper& hyper) {
  const auto shape = params.shape();
  if (grads.shape() != shape || state.m.shape() != shape || state.v.shape() != shape) {
    throw Error(ErrorCode::ShapeMismatch, "parameters, gradients and optimizer state differ in shape");
  }
  if (!grads.all_finite()) throw Error(ErrorCode::NonFiniteGradient, "gradient has a non-finite entry");
  const std::uint64_t t = state.t + 1;

  std::span<T> p[4], m[4], v[4];
  std::span<const T> g[4];
  int k = 0;
  params.for_each([&](std::span<T> s) { p[k++] = s; });
  k = 0;
  grads.for_each([&](std::span<const T> s) { g[k++] = s; });
  k = 0;
  state.m.for_each([&](std::span<T> s) { m[k++] = s; });
  k = 0;
  state.v.for_each([&](std::span<T> s) { v[k++] = s; });
  for (int i = 0; i < 4; ++i) adam_update<T>(p[i], g[i], m[i], v[i], t, hyper);
  state.t = t;
}

template <typename T>
std::pair<MlpParams<T>, AdamState<T>> adam_step(MlpParams<T> params, const Gradients<T>& grads, AdamState<T> state,
                                               const AdamHyper& hyper) {
  adam_step_in_place(params, grads, state, hyper);
  return {std::move(params), std::move(state)};
}

}  // namespace lesion
