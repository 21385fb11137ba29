#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "locagg/local_solver.hpp"
#include "locagg/rng.hpp"

using namespace locagg;

namespace {

struct Instance {
  Matrix X;
  Vector y;
  Matrix omega_tilde;
  Vector rho, z, u;
};

Instance random_instance(std::uint64_t seed, Eigen::Index n, Eigen::Index tau,
                         bool binary_response = false) {
  CounterRng rng(seed, 0);
  Instance inst;
  inst.X = Matrix(n, tau + 1);
  inst.X.col(0).setOnes();
  for (Eigen::Index t = 1; t <= tau; ++t)
    for (Eigen::Index i = 0; i < n; ++i) inst.X(i, t) = rng.next_normal();
  inst.y = Vector(n);
  for (Eigen::Index i = 0; i < n; ++i)
    inst.y[i] = binary_response ? (rng.next_uniform() < 0.5 ? 0.0 : 1.0) : rng.next_normal();
  inst.omega_tilde = tau >= 3 ? embed_omega(second_difference_penalty(tau))
                              : Matrix::Zero(tau + 1, tau + 1);
  inst.rho = Vector::Constant(tau + 1, 1.0);
  inst.z = Vector::Zero(tau + 1);
  inst.u = Vector::Zero(tau + 1);
  for (Eigen::Index t = 1; t <= tau; ++t) {
    inst.z[t] = 0.3 * rng.next_normal();
    inst.u[t] = 0.3 * rng.next_normal();
  }
  return inst;
}

double local_objective(const LocalProblem& p, const Vector& beta) {
  double value = detail::local_smooth_value(p, beta, p.X * beta);
  if (p.lambda_sp != 0.0) value += p.lambda_sp * beta.tail(beta.size() - 1).norm();
  return value;
}

}  // namespace

TEST_CASE("prox solver matches ordinary least squares when unpenalized") {
  Instance inst = random_instance(1, 40, 5);
  Vector zero_rho = Vector::Zero(6);
  LocalProblem p{inst.X, inst.y, Family::gaussian, 0.0, 0.0, inst.omega_tilde,
                 zero_rho, Vector::Zero(6), Vector::Zero(6)};
  SolverControls tight;
  tight.inner_tol = 1e-10;
  tight.max_inner_iters = 20000;
  Vector beta = solve_local_prox(p, tight, Vector::Zero(6));
  Vector ols = (inst.X.transpose() * inst.X).ldlt().solve(inst.X.transpose() * inst.y);
  // First-order accuracy is bounded by the line-search roundoff slack.
  CHECK((beta - ols).norm() <= 1e-6 * (1.0 + ols.norm()));
}

TEST_CASE("full shrinkage leaves an intercept-only fit") {
  Instance inst = random_instance(2, 30, 4);
  Vector zero_rho = Vector::Zero(5);
  LocalProblem p{inst.X, inst.y, Family::gaussian, 0.0, 1e6, inst.omega_tilde,
                 zero_rho, Vector::Zero(5), Vector::Zero(5)};
  Vector beta = solve_local_prox(p, {}, Vector::Zero(5));
  CHECK(beta.tail(4).norm() == 0.0);
  CHECK(beta[0] == doctest::Approx(inst.y.mean()).epsilon(1e-6));
}

TEST_CASE("direct solver reduces to least squares and respects the proximity limit") {
  Instance inst = random_instance(3, 50, 6);
  Vector zero_rho = Vector::Zero(7);
  LocalProblem plain{inst.X, inst.y, Family::gaussian, 0.0, 0.0, inst.omega_tilde,
                     zero_rho, Vector::Zero(7), Vector::Zero(7)};
  Vector beta = solve_local_gaussian_direct(plain);
  Vector ols = (inst.X.transpose() * inst.X).ldlt().solve(inst.X.transpose() * inst.y);
  CHECK((beta - ols).norm() <= 1e-8 * (1.0 + ols.norm()));

  Vector huge_rho = Vector::Constant(7, 1e8);
  LocalProblem pinned{inst.X, inst.y, Family::gaussian, 0.0, 0.0, inst.omega_tilde,
                      huge_rho, inst.z, inst.u};
  Vector pinned_beta = solve_local_gaussian_direct(pinned);
  Vector target = inst.z - inst.u;
  CHECK((pinned_beta.tail(6) - target.tail(6)).norm() < 1e-4);
}

TEST_CASE("direct solver rejects a singular system") {
  Matrix X(3, 4);  // fewer rows than columns, no regularization
  X.setOnes();
  Vector y = Vector::Ones(3);
  Matrix omega = Matrix::Zero(4, 4);
  Vector zero = Vector::Zero(4);
  LocalProblem p{X, y, Family::gaussian, 0.0, 0.0, omega, zero, zero, zero};
  CHECK_THROWS_AS(solve_local_gaussian_direct(p), SolverError);
}

TEST_CASE("prox and direct solvers agree whenever both apply") {
  for (std::uint64_t seed : {4, 5, 6, 7}) {
    Instance inst = random_instance(seed, 35, 5);
    LocalProblem p{inst.X, inst.y, Family::gaussian, 0.4, 0.0, inst.omega_tilde,
                   inst.rho, inst.z, inst.u};
    Vector direct = solve_local_gaussian_direct(p);
    Vector prox = solve_local_prox(p, {}, Vector::Zero(6));
    CHECK((direct - prox).norm() <= 1e-6 * (1.0 + direct.norm()));
  }
}

TEST_CASE("logistic solution beats nearby perturbations") {
  Instance inst = random_instance(8, 20, 3, true);
  LocalProblem p{inst.X, inst.y, Family::binomial, 0.2, 0.3, inst.omega_tilde,
                 inst.rho, inst.z, inst.u};
  Vector beta = solve_local_prox(p, {}, Vector::Zero(4));
  double at_solution = local_objective(p, beta);
  CounterRng rng(77, 0);
  for (int rep = 0; rep < 1000; ++rep) {
    Vector noise(4);
    for (Eigen::Index i = 0; i < 4; ++i) noise[i] = rng.next_normal();
    noise *= 1e-3 / noise.norm();
    CHECK(local_objective(p, Vector(beta + noise)) >= at_solution - 1e-12);
  }
}

TEST_CASE("objective descends across inner iterations") {
  Instance inst = random_instance(9, 25, 4, true);
  LocalProblem p{inst.X, inst.y, Family::binomial, 0.1, 0.5, inst.omega_tilde,
                 inst.rho, inst.z, inst.u};
  // Run the solver one inner iteration at a time from the previous point;
  // each restart must not increase the objective.
  SolverControls one_step;
  one_step.max_inner_iters = 1;
  Vector beta = Vector::Zero(5);
  double previous = local_objective(p, beta);
  for (int k = 0; k < 40; ++k) {
    beta = solve_local_prox(p, one_step, beta);
    double value = local_objective(p, beta);
    CHECK(value <= previous + 1e-10 * (1.0 + std::abs(previous)));
    previous = value;
  }
}

TEST_CASE("intercept passes through the prox unshrunk") {
  Instance inst = random_instance(10, 30, 4);
  LocalProblem base{inst.X, inst.y, Family::gaussian, 0.0, 2.0, inst.omega_tilde,
                    inst.rho, inst.z, inst.u};
  Vector beta = solve_local_prox(base, {}, Vector::Zero(5));

  Vector shifted_y = inst.y.array() + 100.0;
  LocalProblem shifted{inst.X, shifted_y, Family::gaussian, 0.0, 2.0, inst.omega_tilde,
                       inst.rho, inst.z, inst.u};
  Vector beta_shifted = solve_local_prox(shifted, {}, Vector::Zero(5));
  CHECK(beta_shifted[0] - beta[0] == doctest::Approx(100.0).epsilon(1e-5));
  CHECK((beta_shifted.tail(4) - beta.tail(4)).norm() < 1e-5);
}

TEST_CASE("exhausted line search raises a solver error") {
  Instance inst = random_instance(11, 10, 2);
  Vector zero = Vector::Zero(3);
  LocalProblem p{inst.X, inst.y, Family::gaussian, 0.0, 0.0,
                 Matrix::Zero(3, 3), zero, zero, zero};
  SolverControls strangled;
  strangled.max_halvings = 0;
  strangled.t_init = 1e12;  // absurd step no single halving can repair
  CHECK_THROWS_AS(solve_local_prox(p, strangled, Vector::Zero(3)), SolverError);
}
