#pragma once

/**
 * @file
 * @brief Dense differentiable quadratic programming.
 *
 * Solves min_u 1/2 u' Q u + F' u subject to G u <= h with a dual active-set
 * method (Goldfarb-Idnani): it starts from the unconstrained minimizer and
 * adds violated constraints while keeping dual feasibility, which also yields
 * a clean primal-infeasibility certificate. Gradients of the minimizer with
 * respect to Q, F, G, h come from implicit differentiation of the KKT system
 * at the optimal active set.
 */

#include "stlcbf/autodiff.hpp"

#include <Eigen/Dense>

#include <vector>

namespace stlcbf {

enum class QpStatus { Optimal, Infeasible, MaxIterations };

/// Problem data on the tape. Rows encode G u <= h; an HOCBF condition
/// a'u + c >= 0 is stored as the row (-a) u <= c.
struct QpProblem {
  Eigen::Matrix<Ad, Eigen::Dynamic, Eigen::Dynamic> Q;
  VecX<Ad> F;
  Eigen::Matrix<Ad, Eigen::Dynamic, Eigen::Dynamic> G;
  VecX<Ad> h;
  /// When set, an infeasible solve falls back to the least-squares
  /// violation-minimizing input instead of failing (training mode).
  bool allow_infeasible_fallback = false;

  int num_vars() const { return static_cast<int>(F.size()); }
  int num_rows() const { return static_cast<int>(h.size()); }

  void add_row(const VecX<Ad>& g_row, const Ad& h_val);
};

struct QpSolution {
  QpStatus status = QpStatus::MaxIterations;
  VecX<Ad> u;               // minimizer on the tape (values + wired gradients)
  Eigen::VectorXd u_value;  // plain values
  Eigen::VectorXd lambda;   // duals per row, zero on inactive rows
  std::vector<int> active_rows;
  bool used_fallback = false;
  int dropped_degenerate_rows = 0;
  double stationarity_residual = 0.0;
  double feasibility_residual = 0.0;
  double complementarity_residual = 0.0;
};

/// Value-level solve on plain matrices. Exposed for tests and oracles.
struct DenseQpResult {
  QpStatus status = QpStatus::MaxIterations;
  Eigen::VectorXd u;
  Eigen::VectorXd lambda;
  std::vector<int> active_rows;
  int iterations = 0;
};
DenseQpResult solve_dense_qp(const Eigen::MatrixXd& Q, const Eigen::VectorXd& F,
                             const Eigen::MatrixXd& G, const Eigen::VectorXd& h);

/// Gradients of a scalar loss through the QP minimizer, given the upstream
/// gradient dL/du*. Weakly active rows (tiny dual and tiny slack) are dropped
/// from the KKT system and counted.
struct QpBackwardResult {
  Eigen::MatrixXd dQ;
  Eigen::VectorXd dF;
  Eigen::MatrixXd dG;
  Eigen::VectorXd dh;
  int dropped_rows = 0;
};
QpBackwardResult qp_backward(const Eigen::MatrixXd& Q, const Eigen::VectorXd& F,
                             const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                             const Eigen::VectorXd& u, const Eigen::VectorXd& lambda,
                             const std::vector<int>& active_rows,
                             const Eigen::VectorXd& upstream);

/// Forward solve that also wires the minimizer onto the tape: each component
/// of u* becomes a node whose parents are every entry of Q, F, G, h, with
/// partials from the KKT backward pass. Infeasible problems either fall back
/// (when allowed) or return status Infeasible with an empty u.
QpSolution solve(const QpProblem& problem);

/// Minimizer of |max(Gu - h, 0)|^2 + tikhonov |u|^2, used as the training
/// fallback when the QP has no feasible point.
Eigen::VectorXd least_violation_input(const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                                      double tikhonov, std::vector<int>* violated_rows = nullptr);

}  // namespace stlcbf
