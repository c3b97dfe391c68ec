#pragma once

/**
 * @file
 * @brief Control-affine system models and analytic barrier derivatives.
 *
 * Both provided models (planar double integrator, unicycle) have constant
 * input matrices and position barriers of relative degree two; the chain of
 * Lie derivatives needed for constraint assembly is written out analytically
 * per model so the constraint rows are exact. Templating on the scalar lets
 * the same expressions run on plain doubles and on tape values.
 */

#include "stlcbf/autodiff.hpp"
#include "stlcbf/stl.hpp"

#include <stdexcept>
#include <string>

namespace stlcbf {

struct SystemModel {
  enum class Kind { DoubleIntegrator, Unicycle };

  Kind kind = Kind::DoubleIntegrator;

  int state_dim() const { return 4; }
  int input_dim() const { return 2; }
  /// Relative degree of position-dependent barriers.
  int relative_degree() const { return 2; }

  std::string name() const {
    return kind == Kind::DoubleIntegrator ? "double_integrator" : "unicycle";
  }

  static SystemModel from_name(const std::string& name) {
    if (name == "double_integrator") return SystemModel{Kind::DoubleIntegrator};
    if (name == "unicycle") return SystemModel{Kind::Unicycle};
    throw std::invalid_argument("unknown system model: " + name);
  }
};

inline double cos_scalar(double x) { return std::cos(x); }
inline double sin_scalar(double x) { return std::sin(x); }
inline Ad cos_scalar(const Ad& a) { return detail::unary(a, std::cos(a.v), -std::sin(a.v)); }
inline Ad sin_scalar(const Ad& a) { return detail::unary(a, std::sin(a.v), std::cos(a.v)); }

/// Drift f(x). Double integrator: [vx, vy, 0, 0]; unicycle: [v cos(th),
/// v sin(th), 0, 0] with state [x, y, th, v].
template <typename S>
VecX<S> drift(const SystemModel& m, const VecX<S>& x) {
  VecX<S> f(4);
  if (m.kind == SystemModel::Kind::DoubleIntegrator) {
    f << x[2], x[3], S(0.0), S(0.0);
  } else {
    f[0] = x[3] * cos_scalar(x[2]);
    f[1] = x[3] * sin_scalar(x[2]);
    f[2] = S(0.0);
    f[3] = S(0.0);
  }
  return f;
}

/// Constant input matrix g: inputs drive the last two state components.
inline Eigen::MatrixXd input_matrix(const SystemModel&) {
  Eigen::MatrixXd g(4, 2);
  g << 0, 0, 0, 0, 1, 0, 0, 1;
  return g;
}

/// Forward-Euler zero-order-hold update x + dt * (f(x) + g u).
template <typename S>
VecX<S> step(const SystemModel& m, const VecX<S>& x, const VecX<S>& u, double dt) {
  VecX<S> f = drift(m, x);
  VecX<S> out(4);
  out[0] = x[0] + S(dt) * f[0];
  out[1] = x[1] + S(dt) * f[1];
  out[2] = x[2] + S(dt) * (f[2] + u[0]);
  out[3] = x[3] + S(dt) * (f[3] + u[1]);
  return out;
}

/// Time-varying offset gamma(t) and its first two time derivatives.
template <typename S>
struct GammaValues {
  S value{0.0};
  S dot{0.0};
  S ddot{0.0};
};

/// Barrier b = h + gamma and its derivative chain: full first derivative
/// along the drift, the drift part of the second derivative (gamma terms
/// included), and the input-gain row so that bddot = bddot_drift + gain * u.
template <typename S>
struct BarrierDerivs {
  S b{0.0};
  S bdot{0.0};
  S bddot_drift{0.0};
  Vec2<S> input_gain = Vec2<S>::Zero();
};

struct SingularGradient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Analytic Lie-derivative chain for a relative-degree-2 position barrier.
/// Throws SingularGradient when l(x) coincides with the gauge center; the
/// caller perturbs and retries.
template <typename S>
BarrierDerivs<S> barrier_derivatives(const SystemModel& m, const Predicate& pred,
                                     const GammaValues<S>& gamma, const VecX<S>& x) {
  Vec2<S> z = output_map(x);
  z[0] -= S(pred.center[0]);
  z[1] -= S(pred.center[1]);
  if (std::abs(value_of(z[0])) < 1e-12 && std::abs(value_of(z[1])) < 1e-12) {
    throw SingularGradient("gauge gradient undefined at the region center");
  }

  const S sigma = gauge_value(pred, z);
  const Vec2<S> dsigma = gauge_gradient(pred, z);
  const Mat2<S> d2sigma = gauge_hessian(pred, z);

  // h = s (R - sigma): grad_h = -s dsigma, hess_h = -s d2sigma
  const S s = S(pred.sign);
  Vec2<S> grad_h;
  grad_h[0] = S(0.0) - s * dsigma[0];
  grad_h[1] = S(0.0) - s * dsigma[1];
  Mat2<S> hess_h;
  hess_h(0, 0) = S(0.0) - s * d2sigma(0, 0);
  hess_h(0, 1) = S(0.0) - s * d2sigma(0, 1);
  hess_h(1, 0) = S(0.0) - s * d2sigma(1, 0);
  hess_h(1, 1) = S(0.0) - s * d2sigma(1, 1);

  BarrierDerivs<S> out;
  out.b = s * (S(pred.radius) - sigma) + gamma.value;

  // planar velocity w = d/dt l(x) along the drift
  Vec2<S> w;
  if (m.kind == SystemModel::Kind::DoubleIntegrator) {
    w[0] = x[2];
    w[1] = x[3];
  } else {
    w[0] = x[3] * cos_scalar(x[2]);
    w[1] = x[3] * sin_scalar(x[2]);
  }

  out.bdot = grad_h[0] * w[0] + grad_h[1] * w[1] + gamma.dot;

  const S quad = w[0] * (hess_h(0, 0) * w[0] + hess_h(0, 1) * w[1]) +
                 w[1] * (hess_h(1, 0) * w[0] + hess_h(1, 1) * w[1]);
  out.bddot_drift = quad + gamma.ddot;

  if (m.kind == SystemModel::Kind::DoubleIntegrator) {
    // inputs are accelerations: gain = grad_h
    out.input_gain = grad_h;
  } else {
    // u1 turns the heading, u2 changes the speed
    const S c = cos_scalar(x[2]);
    const S sn = sin_scalar(x[2]);
    out.input_gain[0] = x[3] * (grad_h[1] * c - grad_h[0] * sn);
    out.input_gain[1] = grad_h[0] * c + grad_h[1] * sn;
  }
  return out;
}

/// Elementwise input box u_min <= u <= u_max.
struct InputBounds {
  Eigen::VectorXd u_min;
  Eigen::VectorXd u_max;

  void validate() const {
    if (u_min.size() != u_max.size() || ((u_max - u_min).array() <= 0.0).any()) {
      throw std::invalid_argument("input bounds must satisfy u_min < u_max elementwise");
    }
  }
};

}  // namespace stlcbf
