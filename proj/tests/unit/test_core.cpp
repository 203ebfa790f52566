#include "doctest.h"

#include "seqoed/core.hpp"
#include "seqoed/models/linear_gaussian.hpp"
#include "seqoed/models/source_inversion.hpp"

using namespace seqoed;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }
Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

ProblemSpec state_box_problem() {
  ProblemSpec p;
  p.horizon = 2;
  p.design_dim = 2;
  p.constraint = {DesignConstraint::Kind::state_box, Box{v2(0, 0), v2(1, 1)}};
  p.initial_position = v2(0.5, 0.5);
  return p;
}

}  // namespace

TEST_SUITE("core") {
  TEST_CASE("append_stage adds one stage and leaves the original alone") {
    const History h0(2);
    const History h1 = append_stage(h0, v1(0.5), v1(1.2));
    CHECK(h0.size() == 0);
    REQUIRE(h1.size() == 1);
    CHECK(h1[0].design[0] == 0.5);
    CHECK(h1[0].observation[0] == 1.2);
  }

  TEST_CASE("append_stage past the horizon throws") {
    History h(2);
    h = append_stage(h, v1(0.5), v1(1.0));
    h = append_stage(h, v1(0.5), v1(1.0));
    CHECK(h.complete());
    CHECK_THROWS_AS(append_stage(h, v1(0.5), v1(1.0)), HorizonExceeded);
  }

  TEST_CASE("append_stage rejects designs outside the bounds") {
    const Box bounds{v1(0.1), v1(3.0)};
    const History h = append_stage(History(2), v1(0.5), v1(1.2), bounds);
    CHECK_THROWS_AS(append_stage(h, v1(3.5), v1(0.0), bounds), BoundsViolation);
  }

  TEST_CASE("clamp_design projects onto a box") {
    auto cfg = models::case_config(2);
    ProblemSpec p;
    p.horizon = 2;
    p.design_dim = 2;
    p.constraint = cfg.constraint;
    const State s;
    const Vector d = clamp_design(v2(0.4, -0.1), p, s);
    CHECK(d[0] == 0.25);
    CHECK(d[1] == -0.1);
  }

  TEST_CASE("clamp_design is the identity on feasible designs") {
    const ProblemSpec p = models::linear_gaussian_problem();
    const State s = initial_state(p);
    for (double d : {0.1, 0.7, 2.9, 3.0}) CHECK(clamp_design(v1(d), p, s)[0] == d);
  }

  TEST_CASE("clamp_design keeps position plus displacement in the state box") {
    const ProblemSpec p = state_box_problem();
    State s = initial_state(p);
    s.physical.position = v2(0.9, 0.9);
    const Vector d = clamp_design(v2(0.3, 0.3), p, s);
    CHECK(d[0] == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(d[1] == doctest::Approx(0.1).epsilon(1e-14));
  }

  TEST_CASE("clamp_design is idempotent") {
    const ProblemSpec box = models::linear_gaussian_problem();
    const ProblemSpec sb = state_box_problem();
    State s = initial_state(sb);
    s.physical.position = v2(0.2, 0.95);
    for (double a : {-5.0, -0.3, 0.0, 0.4, 7.0}) {
      const Vector c1 = clamp_design(v1(a), box, initial_state(box));
      CHECK(clamp_design(c1, box, initial_state(box)) == c1);
      const Vector c2 = clamp_design(v2(a, -a), sb, s);
      CHECK(clamp_design(c2, sb, s) == c2);
    }
  }

  TEST_CASE("advance moves the physical state by the displacement") {
    const ProblemSpec p = state_box_problem();
    const State s0 = initial_state(p);
    CHECK(s0.stage == 0);
    const State s1 = advance(p, s0, v2(0.1, -0.2), v1(0.3));
    CHECK(s1.stage == 1);
    CHECK(s1.history.size() == 1);
    CHECK(s1.physical.position[0] == doctest::Approx(0.6));
    CHECK(s1.physical.position[1] == doctest::Approx(0.3));
    CHECK(s0.history.size() == 0);
  }

  TEST_CASE("replay rebuilds every state from a history") {
    const ProblemSpec p = state_box_problem();
    State s = initial_state(p);
    std::vector<State> forward{s};
    s = advance(p, s, v2(0.1, 0.1), v1(1.0));
    forward.push_back(s);
    s = advance(p, s, v2(-0.2, 0.05), v1(2.0));
    forward.push_back(s);
    const auto again = replay(p, s.history);
    REQUIRE(again.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(again[k].stage == forward[k].stage);
      CHECK(again[k].physical.position == forward[k].physical.position);
    }
  }

  TEST_CASE("episode total reward is the sum of its parts") {
    Episode e;
    e.stage_rewards = {-0.125, -0.03125};
    e.terminal_reward = 1.75;
    CHECK(e.total_reward() == -0.125 + -0.03125 + 1.75);
  }

  TEST_CASE("problem validation catches inconsistent specs") {
    ProblemSpec p = models::linear_gaussian_problem();
    CHECK_NOTHROW(p.validate());
    p.horizon = 0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
}
