#include "stlcbf/systems.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace stlcbf;

namespace {

Eigen::VectorXd vec4(double a, double b, double c, double d) {
  Eigen::VectorXd v(4);
  v << a, b, c, d;
  return v;
}

Predicate reach_unit() {
  Predicate p;
  p.sign = 1.0;
  p.radius = 1.0;
  p.center = Eigen::Vector2d::Zero();
  return p;
}

}  // namespace

TEST_CASE("forward-Euler step") {
  const SystemModel di = SystemModel::from_name("double_integrator");

  // constant velocity
  Eigen::VectorXd x = step<double>(di, vec4(0, 0, 1, 0), Eigen::Vector2d(0, 0), 0.1);
  CHECK(x.isApprox(vec4(0.1, 0, 1, 0), 1e-14));

  // pure acceleration
  x = step<double>(di, vec4(0, 0, 0, 0), Eigen::Vector2d(10, -10), 0.1);
  CHECK(x.isApprox(vec4(0, 0, 1, -1), 1e-14));

  // unicycle coasting at heading 0, speed 2
  const SystemModel uni = SystemModel::from_name("unicycle");
  x = step<double>(uni, vec4(0, 0, 0, 2), Eigen::Vector2d(0, 0), 0.1);
  CHECK(x.isApprox(vec4(0.2, 0, 0, 2), 1e-14));

  CHECK_THROWS_AS(SystemModel::from_name("bicycle"), std::invalid_argument);
}

TEST_CASE("barrier derivative chain on the double integrator") {
  const SystemModel di = SystemModel::from_name("double_integrator");
  const Predicate p = reach_unit();
  GammaValues<double> zero_gamma;

  // at rest outside the unit disk: b = -1, everything still, gain = -p/|p|
  auto d = barrier_derivatives(di, p, zero_gamma, VecX<double>(vec4(2, 0, 0, 0)));
  CHECK(d.b == doctest::Approx(-1.0));
  CHECK(d.bdot == doctest::Approx(0.0));
  CHECK(d.bddot_drift == doctest::Approx(0.0));
  CHECK(d.input_gain[0] == doctest::Approx(-1.0));
  CHECK(d.input_gain[1] == doctest::Approx(0.0));

  // moving radially away: bdot = grad_h . v = -1
  d = barrier_derivatives(di, p, zero_gamma, VecX<double>(vec4(2, 0, 1, 0)));
  CHECK(d.bdot == doctest::Approx(-1.0));

  // a linear gamma contributes additively through its derivatives
  GammaValues<double> lin{0.7, -0.3, 0.0};
  auto dl = barrier_derivatives(di, p, lin, VecX<double>(vec4(2, 0, 1, 0)));
  CHECK(dl.b == doctest::Approx(-1.0 + 0.7));
  CHECK(dl.bdot == doctest::Approx(-1.0 - 0.3));
  CHECK(dl.bddot_drift == doctest::Approx(d.bddot_drift));

  // center of the gauge is a singular point
  CHECK_THROWS_AS(barrier_derivatives(di, p, zero_gamma, VecX<double>(vec4(0, 0, 1, 0))),
                  SingularGradient);
}

TEST_CASE("double integrator input gain ignores velocity components") {
  const SystemModel di = SystemModel::from_name("double_integrator");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(-3.0, 3.0);
  std::uniform_real_distribution<double> vel(-5.0, 5.0);
  Predicate p = reach_unit();
  p.gauge = GaugeKind::Superellipse4;
  p.half_axes = Eigen::Vector2d(0.8, 1.3);
  GammaValues<double> zero;
  for (int i = 0; i < 100; ++i) {
    const double px = pos(rng), py = pos(rng);
    if (std::hypot(px, py) < 0.2) continue;
    const auto a = barrier_derivatives(di, p, zero, VecX<double>(vec4(px, py, vel(rng), vel(rng))));
    const auto b = barrier_derivatives(di, p, zero, VecX<double>(vec4(px, py, vel(rng), vel(rng))));
    CHECK(a.input_gain[0] == doctest::Approx(b.input_gain[0]).epsilon(1e-13));
    CHECK(a.input_gain[1] == doctest::Approx(b.input_gain[1]).epsilon(1e-13));
  }
}

TEST_CASE("unicycle input gain uses both channels off the singular set") {
  const SystemModel uni = SystemModel::from_name("unicycle");
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-3.0, 3.0);
  std::uniform_real_distribution<double> ang(-3.0, 3.0);
  std::uniform_real_distribution<double> spd(0.5, 3.0);
  const Predicate p = reach_unit();
  GammaValues<double> zero;
  int both_nonzero = 0;
  int total = 0;
  for (int i = 0; i < 200; ++i) {
    const double px = pos(rng), py = pos(rng);
    if (std::hypot(px, py) < 0.2) continue;
    ++total;
    const auto d =
        barrier_derivatives(uni, p, zero, VecX<double>(vec4(px, py, ang(rng), spd(rng))));
    if (std::abs(d.input_gain[0]) > 1e-8 && std::abs(d.input_gain[1]) > 1e-8) ++both_nonzero;
  }
  CHECK(both_nonzero > total * 9 / 10);

  // heading channel vanishes at v = 0
  const auto d0 = barrier_derivatives(uni, p, zero, VecX<double>(vec4(2, 1, 0.3, 0.0)));
  CHECK(d0.input_gain[0] == doctest::Approx(0.0));
}

namespace {

// Independent oracle: integrate the system at a fine step under constant
// input and difference h(x(t)) + gamma(t) numerically.
void check_fd_consistency(const SystemModel& m, const Predicate& p, const Eigen::VectorXd& x0,
                          const Eigen::Vector2d& u, double w1, double w2) {
  const double dt = 1e-4;
  auto gamma_at = [&](double t) { return w1 + w2 * t; };

  std::vector<Eigen::VectorXd> xs;
  Eigen::VectorXd x = x0;
  for (int k = 0; k <= 4; ++k) {
    xs.push_back(x);
    x = step<double>(m, x, Eigen::VectorXd(u), dt);
  }
  std::vector<double> bs;
  for (int k = 0; k <= 4; ++k) {
    bs.push_back(eval_predicate(p, VecX<double>(xs[static_cast<std::size_t>(k)])) +
                 gamma_at(k * dt));
  }

  const double bdot_fd = (bs[3] - bs[1]) / (2.0 * dt);
  const double bddot_fd = (bs[3] - 2.0 * bs[2] + bs[1]) / (dt * dt);

  GammaValues<double> g{gamma_at(2 * dt), w2, 0.0};
  const auto d = barrier_derivatives(m, p, g, VecX<double>(xs[2]));
  const double bddot_analytic = d.bddot_drift + d.input_gain[0] * u[0] + d.input_gain[1] * u[1];

  CHECK(d.bdot == doctest::Approx(bdot_fd).epsilon(1e-3));
  CHECK(bddot_analytic == doctest::Approx(bddot_fd).epsilon(1e-3));
}

}  // namespace

TEST_CASE("analytic derivatives match finite differences along rollouts") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> pos(-3.0, 3.0);
  std::uniform_real_distribution<double> vel(-2.0, 2.0);
  std::uniform_real_distribution<double> acc(-5.0, 5.0);
  std::uniform_real_distribution<double> rad(0.4, 1.2);

  for (const char* name : {"double_integrator", "unicycle"}) {
    const SystemModel m = SystemModel::from_name(name);
    int done = 0;
    while (done < 40) {
      Predicate p;
      p.sign = (rng() % 2 == 0) ? 1.0 : -1.0;
      p.radius = 1.0;
      p.center = Eigen::Vector2d(pos(rng), pos(rng));
      if (rng() % 2 == 0) {
        p.gauge = GaugeKind::Superellipse4;
        p.half_axes = Eigen::Vector2d(rad(rng), rad(rng));
      } else {
        p.radius = rad(rng);
      }
      Eigen::VectorXd x0 = vec4(pos(rng), pos(rng), vel(rng), vel(rng));
      if (m.kind == SystemModel::Kind::Unicycle) x0[3] = std::abs(x0[3]) + 0.3;
      if ((Eigen::Vector2d(x0[0], x0[1]) - p.center).norm() < 0.3) continue;
      check_fd_consistency(m, p, x0, Eigen::Vector2d(acc(rng), acc(rng)), 0.5, -0.2);
      ++done;
    }
  }
}

TEST_CASE("barrier derivatives agree between double and tape scalars") {
  const SystemModel uni = SystemModel::from_name("unicycle");
  const Predicate p = reach_unit();
  const Eigen::VectorXd x = vec4(1.5, -0.7, 0.4, 1.2);

  GammaValues<double> gd{0.3, -0.1, 0.02};
  const auto dd = barrier_derivatives(uni, p, gd, VecX<double>(x));

  Tape tape;
  VecX<Ad> xa(4);
  for (int i = 0; i < 4; ++i) xa[i] = tape.leaf(x[i]);
  GammaValues<Ad> ga{Ad(0.3), Ad(-0.1), Ad(0.02)};
  const auto da = barrier_derivatives(uni, p, ga, xa);

  CHECK(da.b.v == doctest::Approx(dd.b).epsilon(1e-15));
  CHECK(da.bdot.v == doctest::Approx(dd.bdot).epsilon(1e-15));
  CHECK(da.bddot_drift.v == doctest::Approx(dd.bddot_drift).epsilon(1e-15));
  CHECK(da.input_gain[0].v == doctest::Approx(dd.input_gain[0]).epsilon(1e-15));
  CHECK(da.input_gain[1].v == doctest::Approx(dd.input_gain[1]).epsilon(1e-15));

  // gradient of bdot w.r.t. state matches finite differences
  tape.backward(da.bdot);
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += 1e-6;
    xm[i] -= 1e-6;
    const double fp = barrier_derivatives(uni, p, gd, VecX<double>(xp)).bdot;
    const double fm = barrier_derivatives(uni, p, gd, VecX<double>(xm)).bdot;
    CHECK(tape.gradient(xa[i]) == doctest::Approx((fp - fm) / 2e-6).epsilon(1e-6));
  }
}
