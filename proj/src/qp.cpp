#include "stlcbf/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stlcbf {

namespace {

constexpr double kFeasTol = 1e-10;
constexpr double kSingularTol = 1e-12;
constexpr double kWeakTol = 1e-10;

}  // namespace

void QpProblem::add_row(const VecX<Ad>& g_row, const Ad& h_val) {
  const int m = num_rows();
  const int n = num_vars();
  G.conservativeResize(m + 1, n);
  h.conservativeResize(m + 1);
  for (int j = 0; j < n; ++j) G(m, j) = g_row[j];
  h[m] = h_val;
}

// Dual active-set method. Constraints are kept in the form n_i' u >= b_i
// (rows of -G with offsets -h); the working set always has independent
// normals because a constraint is only added through a full primal step.
DenseQpResult solve_dense_qp(const Eigen::MatrixXd& Q, const Eigen::VectorXd& F,
                             const Eigen::MatrixXd& G, const Eigen::VectorXd& h) {
  const int n = static_cast<int>(F.size());
  const int m = static_cast<int>(h.size());

  DenseQpResult res;
  Eigen::LLT<Eigen::MatrixXd> llt(Q);
  if (llt.info() != Eigen::Success) {
    res.status = QpStatus::MaxIterations;
    return res;
  }

  Eigen::VectorXd u = llt.solve(-F);
  std::vector<int> active;
  Eigen::VectorXd duals(0);  // duals of the working set, in `active` order

  const Eigen::MatrixXd N_all = -G.transpose();  // normals n_i as columns
  const Eigen::VectorXd b_all = -h;

  const int max_iter = 50 * (m + 1) + 50;
  for (int iter = 0; iter < max_iter; ++iter) {
    res.iterations = iter;

    // most violated constraint
    int p = -1;
    double worst = -kFeasTol;
    for (int i = 0; i < m; ++i) {
      if (std::find(active.begin(), active.end(), i) != active.end()) continue;
      const double s = N_all.col(i).dot(u) - b_all[i];
      if (s < worst) {
        worst = s;
        p = i;
      }
    }
    if (p < 0) {
      res.status = QpStatus::Optimal;
      res.u = u;
      res.lambda = Eigen::VectorXd::Zero(m);
      for (std::size_t k = 0; k < active.size(); ++k) res.lambda[active[k]] = duals[static_cast<Eigen::Index>(k)];
      res.active_rows = active;
      std::sort(res.active_rows.begin(), res.active_rows.end());
      return res;
    }

    const Eigen::VectorXd n_p = N_all.col(p);
    double u_p = 0.0;  // dual of the incoming constraint

    // inner loop: take partial dual steps until a full step reaches n_p'u = b_p
    for (int inner = 0; inner <= m + 1; ++inner) {
      const int na = static_cast<int>(active.size());
      Eigen::VectorXd r(na);
      Eigen::VectorXd z;
      if (na == 0) {
        z = llt.solve(n_p);
      } else {
        Eigen::MatrixXd N(n, na);
        for (int k = 0; k < na; ++k) N.col(k) = N_all.col(active[static_cast<std::size_t>(k)]);
        const Eigen::MatrixXd GiN = llt.solve(N);
        const Eigen::MatrixXd M = N.transpose() * GiN;
        r = M.ldlt().solve(N.transpose() * llt.solve(n_p));
        z = llt.solve(n_p) - GiN * r;
      }

      const double znp = z.dot(n_p);
      const bool zero_step = znp < kSingularTol;

      // t1: first working-set dual driven to zero
      double t1 = std::numeric_limits<double>::infinity();
      int drop = -1;
      for (int k = 0; k < na; ++k) {
        if (r[k] > kSingularTol) {
          const double t = duals[k] / r[k];
          if (t < t1) {
            t1 = t;
            drop = k;
          }
        }
      }
      // t2: step that makes constraint p active
      const double s_p = n_p.dot(u) - b_all[p];
      const double t2 = zero_step ? std::numeric_limits<double>::infinity() : -s_p / znp;

      if (zero_step && !std::isfinite(t1)) {
        // n_p lies in the span of the working set with nonpositive
        // multipliers: certificate of primal infeasibility
        res.status = QpStatus::Infeasible;
        res.active_rows = active;
        res.active_rows.push_back(p);
        return res;
      }

      const double t = std::min(t1, t2);
      if (!zero_step) u += t * z;
      for (int k = 0; k < na; ++k) duals[k] -= t * r[k];
      u_p += t;

      if (t == t2 && !zero_step) {
        active.push_back(p);
        duals.conservativeResize(na + 1);
        duals[na] = u_p;
        break;
      }
      // partial step: retire the constraint whose dual hit zero
      active.erase(active.begin() + drop);
      for (int k = drop; k + 1 < na; ++k) duals[k] = duals[k + 1];
      duals.conservativeResize(na - 1);
    }
  }

  res.status = QpStatus::MaxIterations;
  res.u = u;
  return res;
}

QpBackwardResult qp_backward(const Eigen::MatrixXd& Q, const Eigen::VectorXd& F,
                             const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                             const Eigen::VectorXd& u, const Eigen::VectorXd& lambda,
                             const std::vector<int>& active_rows,
                             const Eigen::VectorXd& upstream) {
  const int n = static_cast<int>(F.size());
  const int m = static_cast<int>(h.size());

  QpBackwardResult out;
  out.dQ = Eigen::MatrixXd::Zero(n, n);
  out.dF = Eigen::VectorXd::Zero(n);
  out.dG = Eigen::MatrixXd::Zero(m, n);
  out.dh = Eigen::VectorXd::Zero(m);

  // keep only strictly active rows; weakly active ones (tiny dual and tiny
  // slack) make the KKT system ill-posed and are dropped
  std::vector<int> act;
  for (int i : active_rows) {
    const double slack = h[i] - G.row(i).dot(u);
    if (lambda[i] < kWeakTol && std::abs(slack) < kWeakTol) {
      ++out.dropped_rows;
      continue;
    }
    act.push_back(i);
  }

  const int na = static_cast<int>(act.size());
  Eigen::MatrixXd K(n + na, n + na);
  K.setZero();
  K.topLeftCorner(n, n) = Q;
  for (int k = 0; k < na; ++k) {
    K.block(0, n + k, n, 1) = G.row(act[static_cast<std::size_t>(k)]).transpose();
    K.block(n + k, 0, 1, n) = G.row(act[static_cast<std::size_t>(k)]);
  }

  Eigen::VectorXd rhs(n + na);
  rhs.setZero();
  rhs.head(n) = -upstream;
  const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
  const Eigen::VectorXd du = sol.head(n);
  const Eigen::VectorXd dlam = sol.tail(na);

  out.dF = du;
  out.dQ = 0.5 * (du * u.transpose() + u * du.transpose());
  for (int k = 0; k < na; ++k) {
    const int i = act[static_cast<std::size_t>(k)];
    out.dG.row(i) = dlam[k] * u.transpose() + lambda[i] * du.transpose();
    out.dh[i] = -dlam[k];
  }
  return out;
}

namespace {

void kkt_residuals(const Eigen::MatrixXd& Q, const Eigen::VectorXd& F, const Eigen::MatrixXd& G,
                   const Eigen::VectorXd& h, QpSolution& sol) {
  const Eigen::VectorXd station = Q * sol.u_value + F + G.transpose() * sol.lambda;
  sol.stationarity_residual = station.norm();
  double feas = 0.0;
  double comp = 0.0;
  for (int i = 0; i < G.rows(); ++i) {
    const double slack = G.row(i).dot(sol.u_value) - h[i];
    feas = std::max(feas, slack);
    comp = std::max(comp, std::abs(sol.lambda[i] * std::min(-slack, 1e6)));
  }
  sol.feasibility_residual = std::max(feas, 0.0);
  sol.complementarity_residual = comp;
}

}  // namespace

Eigen::VectorXd least_violation_input(const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                                      double tikhonov, std::vector<int>* violated_rows) {
  const int n = static_cast<int>(G.cols());
  const int m = static_cast<int>(G.rows());
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);

  // fixed-point iteration on the violated set of the piecewise-quadratic
  // objective |max(Gu - h, 0)|^2 + tikhonov |u|^2
  std::vector<int> active;
  for (int pass = 0; pass < 2 * m + 4; ++pass) {
    std::vector<int> viol;
    for (int i = 0; i < m; ++i) {
      if (G.row(i).dot(u) - h[i] > 0.0) viol.push_back(i);
    }
    if (viol == active && pass > 0) break;
    active = viol;
    if (active.empty()) break;
    Eigen::MatrixXd Gv(static_cast<int>(active.size()), n);
    Eigen::VectorXd hv(static_cast<int>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) {
      Gv.row(static_cast<Eigen::Index>(k)) = G.row(active[k]);
      hv[static_cast<Eigen::Index>(k)] = h[active[k]];
    }
    const Eigen::MatrixXd A = Gv.transpose() * Gv + tikhonov * Eigen::MatrixXd::Identity(n, n);
    u = A.ldlt().solve(Gv.transpose() * hv);
  }
  if (violated_rows != nullptr) *violated_rows = active;
  return u;
}

namespace {

// Wires n outputs onto the tape given the value-level result and a function
// producing, for each output component, the gradients w.r.t. all inputs.
struct TapeWiring {
  std::vector<std::pair<std::int32_t, double>> parents;

  void add(const Ad& in, double partial) {
    if (in.on_tape() && partial != 0.0) parents.emplace_back(in.idx, partial);
  }
};

Tape* problem_tape(const QpProblem& p) {
  for (int i = 0; i < p.F.size(); ++i) {
    if (p.F[i].on_tape()) return p.F[i].tape;
  }
  for (int i = 0; i < p.Q.rows(); ++i) {
    for (int j = 0; j < p.Q.cols(); ++j) {
      if (p.Q(i, j).on_tape()) return p.Q(i, j).tape;
    }
  }
  for (int i = 0; i < p.G.rows(); ++i) {
    for (int j = 0; j < p.G.cols(); ++j) {
      if (p.G(i, j).on_tape()) return p.G(i, j).tape;
    }
  }
  for (int i = 0; i < p.h.size(); ++i) {
    if (p.h[i].on_tape()) return p.h[i].tape;
  }
  return nullptr;
}

}  // namespace

QpSolution solve(const QpProblem& problem) {
  const int n = problem.num_vars();
  const int m = problem.num_rows();

  Eigen::MatrixXd Q(n, n);
  Eigen::VectorXd F(n);
  Eigen::MatrixXd G(m, n);
  Eigen::VectorXd h(m);
  for (int i = 0; i < n; ++i) {
    F[i] = problem.F[i].v;
    for (int j = 0; j < n; ++j) Q(i, j) = problem.Q(i, j).v;
  }
  for (int i = 0; i < m; ++i) {
    h[i] = problem.h[i].v;
    for (int j = 0; j < n; ++j) G(i, j) = problem.G(i, j).v;
  }

  QpSolution sol;
  DenseQpResult dense = solve_dense_qp(Q, F, G, h);
  sol.status = dense.status;

  if (dense.status == QpStatus::Infeasible) {
    if (!problem.allow_infeasible_fallback) return sol;
    sol.used_fallback = true;
  } else if (dense.status != QpStatus::Optimal) {
    return sol;
  }

  Tape* tape = problem_tape(const_cast<QpProblem&>(problem));

  if (!sol.used_fallback) {
    sol.u_value = dense.u;
    sol.lambda = dense.lambda;
    sol.active_rows = dense.active_rows;
    kkt_residuals(Q, F, G, h, sol);

    sol.u.resize(n);
    for (int c = 0; c < n; ++c) {
      if (tape == nullptr) {
        sol.u[c] = Ad(sol.u_value[c]);
        continue;
      }
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
      e[c] = 1.0;
      const QpBackwardResult bw =
          qp_backward(Q, F, G, h, sol.u_value, sol.lambda, sol.active_rows, e);
      sol.dropped_degenerate_rows = std::max(sol.dropped_degenerate_rows, bw.dropped_rows);
      TapeWiring w;
      for (int i = 0; i < n; ++i) {
        w.add(problem.F[i], bw.dF[i]);
        for (int j = 0; j < n; ++j) w.add(problem.Q(i, j), bw.dQ(i, j));
      }
      for (int i = 0; i < m; ++i) {
        w.add(problem.h[i], bw.dh[i]);
        for (int j = 0; j < n; ++j) w.add(problem.G(i, j), bw.dG(i, j));
      }
      sol.u[c] = Ad{sol.u_value[c], tape->push_n(sol.u_value[c], w.parents), tape};
    }
    return sol;
  }

  // infeasible + fallback: least-squares violation minimizer, gradients wired
  // through the fixed violated set
  constexpr double kTikhonov = 1e-6;
  std::vector<int> viol;
  const Eigen::VectorXd u = least_violation_input(G, h, kTikhonov, &viol);
  sol.u_value = u;
  sol.lambda = Eigen::VectorXd::Zero(m);

  Eigen::MatrixXd Gv(static_cast<int>(viol.size()), n);
  Eigen::VectorXd hv(static_cast<int>(viol.size()));
  for (std::size_t k = 0; k < viol.size(); ++k) {
    Gv.row(static_cast<Eigen::Index>(k)) = G.row(viol[k]);
    hv[static_cast<Eigen::Index>(k)] = h[viol[k]];
  }
  const Eigen::MatrixXd A = Gv.transpose() * Gv + kTikhonov * Eigen::MatrixXd::Identity(n, n);
  const Eigen::LDLT<Eigen::MatrixXd> Aldlt(A);
  const Eigen::VectorXd resid = Gv * u - hv;

  sol.u.resize(n);
  for (int c = 0; c < n; ++c) {
    if (tape == nullptr) {
      sol.u[c] = Ad(u[c]);
      continue;
    }
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[c] = 1.0;
    const Eigen::VectorXd v = Aldlt.solve(e);
    const Eigen::VectorXd Gv_v = Gv * v;
    TapeWiring w;
    for (std::size_t k = 0; k < viol.size(); ++k) {
      const int i = viol[k];
      const auto kk = static_cast<Eigen::Index>(k);
      w.add(problem.h[i], Gv_v[kk]);
      for (int j = 0; j < n; ++j) {
        const double dg = -resid[kk] * v[j] - Gv_v[kk] * u[j];
        w.add(problem.G(i, j), dg);
      }
    }
    sol.u[c] = Ad{u[c], tape->push_n(u[c], w.parents), tape};
  }
  return sol;
}

}  // namespace stlcbf
