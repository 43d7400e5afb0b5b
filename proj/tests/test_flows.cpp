#include <doctest.h>

#include <random>

#include "geomatch/flows.hpp"
#include "support/oracles.hpp"

using namespace geomatch;
using geomatch::testing::expm;

namespace {

VelocityOracle constant_field(Vec2 c) {
  return [c](Vec2, double) -> VelocitySample { return {c, Mat2::zero()}; };
}

VelocityOracle linear_field(Mat2 A) {
  return [A](Vec2 x, double) -> VelocitySample { return {A * x, A}; };
}

std::vector<Vec2> seed_grid(int n) {
  std::vector<Vec2> seeds;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      seeds.push_back({0.3 + 0.4 * i / std::max(1, n - 1), 0.3 + 0.4 * j / std::max(1, n - 1)});
  return seeds;
}

}  // namespace

TEST_SUITE("flows") {
  TEST_CASE("zero field is the identity") {
    const auto traj = integrate_flow(constant_field({0, 0}), seed_grid(3), 10, Scheme::rk4);
    for (const auto& st : traj.states)
      for (std::size_t i = 0; i < st.positions.size(); ++i) {
        CHECK(st.positions[i].x == seed_grid(3)[i].x);
        CHECK((st.differentials[i] - Mat2::identity()).frobenius() == 0.0);
        CHECK(st.jacobians[i] == 1.0);
      }
  }

  TEST_CASE("constant field translates exactly (both schemes)") {
    const Vec2 c{0.25, -0.1};
    for (Scheme scheme : {Scheme::euler, Scheme::rk4}) {
      const auto traj = integrate_flow(constant_field(c), {{0.4, 0.6}}, 8, scheme);
      const Vec2 end = traj.final_state().positions[0];
      CHECK(end.x == doctest::Approx(0.4 + c.x).epsilon(1e-15));
      CHECK(end.y == doctest::Approx(0.6 + c.y).epsilon(1e-15));
      CHECK((traj.final_state().differentials[0] - Mat2::identity()).frobenius() == 0.0);
    }
  }

  TEST_CASE("linear field: differential converges to expm at scheme order") {
    const Mat2 A{0.3, -0.45, 0.2, -0.1};
    const Mat2 target = expm(A);
    auto err_at = [&](int steps, Scheme scheme) {
      const auto traj = integrate_flow(linear_field(A), {{0.45, 0.55}}, steps, scheme);
      return (traj.final_state().differentials[0] - target).frobenius();
    };
    // rk4: O(N^-4)
    const double e20 = err_at(20, Scheme::rk4);
    const double e40 = err_at(40, Scheme::rk4);
    CHECK(e20 <= 1e-8);
    CHECK(e20 / e40 > 12.0);
    CHECK(e20 / e40 < 20.0);
    // euler: O(N^-1)
    const double f40 = err_at(40, Scheme::euler);
    const double f80 = err_at(80, Scheme::euler);
    CHECK(f40 / f80 > 1.8);
    CHECK(f40 / f80 < 2.2);
    // Jacobi formula: det d phi = exp(tr A)
    const auto traj = integrate_flow(linear_field(A), {{0.5, 0.5}}, 40, Scheme::rk4);
    CHECK(traj.final_state().jacobians[0] ==
          doctest::Approx(std::exp(A.trace())).epsilon(1e-9));
  }

  TEST_CASE("position error decreases at scheme order vs refined reference") {
    const Mat2 A{0.2, 0.5, -0.4, -0.15};
    auto end_pos = [&](int steps, Scheme scheme) {
      return integrate_flow(linear_field(A), {{0.6, 0.35}}, steps, scheme).final_state()
          .positions[0];
    };
    const Vec2 ref = end_pos(320, Scheme::rk4);
    const double r20 = norm(end_pos(20, Scheme::rk4) - ref);
    const double r40 = norm(end_pos(40, Scheme::rk4) - ref);
    CHECK(r20 / r40 > 12.0);
    const double g40 = norm(end_pos(40, Scheme::euler) - ref);
    const double g80 = norm(end_pos(80, Scheme::euler) - ref);
    CHECK(g40 / g80 > 1.8);
    CHECK(g40 / g80 < 2.3);
  }

  TEST_CASE("reverse flow: trivial cases and round trip") {
    const Vec2 c{0.2, 0.1};
    const auto rev = integrate_flow_reverse(constant_field(c), {{0.5, 0.5}}, 6, Scheme::rk4);
    CHECK(rev.final_state().positions[0].x == doctest::Approx(0.3).epsilon(1e-15));

    std::mt19937_64 rng(5);
    ParticleField f = testing::random_field(rng, 8, 0.2, 1.0, 0.12);
    const VelocityOracle oracle = oracle_from_field(f);
    const auto seeds = seed_grid(4);
    const auto fwd = integrate_flow(oracle, seeds, 40, Scheme::rk4);
    const auto back = integrate_flow_reverse(oracle, fwd.final_state().positions, 40, Scheme::rk4);
    double worst = 0.0;
    for (std::size_t i = 0; i < seeds.size(); ++i)
      worst = std::max(worst, norm(back.final_state().positions[i] - seeds[i]));
    CHECK(worst <= 1e-5);

    // round-trip error drops at scheme order
    const auto fwd2 = integrate_flow(oracle, seeds, 80, Scheme::rk4);
    const auto back2 =
        integrate_flow_reverse(oracle, fwd2.final_state().positions, 80, Scheme::rk4);
    double worst2 = 0.0;
    for (std::size_t i = 0; i < seeds.size(); ++i)
      worst2 = std::max(worst2, norm(back2.final_state().positions[i] - seeds[i]));
    CHECK(worst2 * 8.0 <= worst + 1e-14);
  }

  TEST_CASE("group property: stepwise composition matches one run") {
    std::mt19937_64 rng(13);
    ParticleField f = testing::random_field(rng, 6, 0.25, 1.0, 0.15);
    // time-dependent field to exercise the time argument
    const VelocityOracle oracle = [&f](Vec2 x, double t) -> VelocitySample {
      const double a = 1.0 + 0.5 * t;
      return {field_eval(f, x) * a, field_jacobian(f, x) * a};
    };
    const auto seeds = seed_grid(3);
    const auto full = integrate_flow(oracle, seeds, 20, Scheme::rk4, 1.0);
    const auto first = integrate_flow(oracle, seeds, 10, Scheme::rk4, 0.5);
    const VelocityOracle shifted = [&oracle](Vec2 x, double t) { return oracle(x, t + 0.5); };
    const auto second =
        integrate_flow(shifted, first.final_state().positions, 10, Scheme::rk4, 0.5);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      CHECK(norm(second.final_state().positions[i] - full.final_state().positions[i]) <= 1e-12);
      const Mat2 composed =
          second.final_state().differentials[i] * first.final_state().differentials[i];
      CHECK((composed - full.final_state().differentials[i]).frobenius() <= 1e-12);
    }
  }

  TEST_CASE("contrast flow: identity, shift, exponential") {
    const ContrastOracle zero = [](double, double) -> ContrastSample { return {0.0, 0.0}; };
    auto t0 = integrate_contrast_flow(zero, {0.3, 0.9}, 8, Scheme::rk4);
    CHECK(t0.final_state().values[0] == 0.3);
    CHECK(t0.final_state().derivatives[0] == 1.0);

    const ContrastOracle one = [](double, double) -> ContrastSample { return {1.0, 0.0}; };
    auto t1 = integrate_contrast_flow(one, {0.25}, 8, Scheme::rk4);
    CHECK(t1.final_state().values[0] == doctest::Approx(1.25).epsilon(1e-15));

    const ContrastOracle lin = [](double z, double) -> ContrastSample { return {z, 1.0}; };
    auto t2 = integrate_contrast_flow(lin, {0.5}, 40, Scheme::rk4);
    CHECK(t2.final_state().values[0] == doctest::Approx(0.5 * M_E).epsilon(1e-7));
    CHECK(t2.final_state().derivatives[0] == doctest::Approx(M_E).epsilon(1e-7));
    auto t2f = integrate_contrast_flow(lin, {0.5}, 80, Scheme::rk4);
    const double e40 = std::abs(t2.final_state().values[0] - 0.5 * M_E);
    const double e80 = std::abs(t2f.final_state().values[0] - 0.5 * M_E);
    CHECK(e40 / e80 > 12.0);
  }

  TEST_CASE("error paths: non-finite fields and jacobian collapse") {
    const VelocityOracle nan_field = [](Vec2, double) -> VelocitySample {
      return {{std::numeric_limits<double>::quiet_NaN(), 0.0}, Mat2::zero()};
    };
    CHECK_THROWS_AS(integrate_flow(nan_field, {{0.5, 0.5}}, 4, Scheme::rk4), NonFiniteError);

    // strongly compressive linear field: det = exp(-25) < 1e-8
    const Mat2 C{-12.5, 0, 0, -12.5};
    CHECK_THROWS_AS(integrate_flow(linear_field(C), {{0.5, 0.5}}, 200, Scheme::rk4),
                    JacobianCollapseError);
  }

  TEST_CASE("leaving the box raises the warning flag only") {
    const auto traj = integrate_flow(constant_field({2.0, 0.0}), {{0.5, 0.5}}, 8, Scheme::rk4);
    CHECK(traj.exited_domain);
  }

  TEST_CASE("flow bounds: trivial and random pairs") {
    std::mt19937_64 rng(41);
    ParticleField u = testing::random_field(rng, 8, 0.25, 1.0, 0.3);
    const FlowBoundsReport same = check_flow_bounds(u, u, 1.0, 20, 8);
    CHECK(same.field_lhs == 0.0);
    CHECK(same.field_ok);
    CHECK(same.time_ok);

    for (int trial = 0; trial < 3; ++trial) {
      ParticleField a = testing::random_field(rng, 8, 0.3, 1.0, 0.3);
      ParticleField b = testing::random_field(rng, 8, 0.3, 1.0, 0.3);
      // normalize to |v|_V <= 1
      const double na = std::sqrt(rkhs_norm_sq(a) / a.spec.scale);
      const double nb = std::sqrt(rkhs_norm_sq(b) / b.spec.scale);
      for (auto& c : a.covectors) c *= 1.0 / std::max(1.0, na);
      for (auto& c : b.covectors) c *= 1.0 / std::max(1.0, nb);
      const FlowBoundsReport rep = check_flow_bounds(a, b, 1.0, 20, 16);
      CHECK(rep.field_ok);
      CHECK(rep.time_ok);
      CHECK(rep.c_v > 0.0);
    }
  }
}
