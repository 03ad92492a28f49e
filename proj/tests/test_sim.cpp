#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "fedfleet/sim.hpp"

using namespace fedfleet;
using namespace fedfleet::sim;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

bool same_car(const car_state& a, const car_state& b) {
  return a.px == b.px && a.py == b.py && a.vx == b.vx && a.vy == b.vy &&
         a.heading == b.heading;
}

bool same_world(const world_state& a, const world_state& b) {
  if (a.third_car.has_value() != b.third_car.has_value()) return false;
  if (a.third_car && !same_car(*a.third_car, *b.third_car)) return false;
  return same_car(a.robot, b.robot) && same_car(a.human, b.human) &&
         a.t == b.t && a.dt == b.dt;
}

bool same_episode(const episode& a, const episode& b) {
  if (a.trace.size() != b.trace.size()) return false;
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    const auto& x = a.trace[i];
    const auto& y = b.trace[i];
    if (x.t != y.t || x.cost != y.cost) return false;
    if (!same_world(x.world, y.world)) return false;
    if (x.controls.robot.throttle != y.controls.robot.throttle ||
        x.controls.robot.steering != y.controls.robot.steering ||
        x.controls.human.throttle != y.controls.human.throttle ||
        x.controls.human.steering != y.controls.human.steering)
      return false;
  }
  return a.commence_step == b.commence_step &&
         a.commence_distance == b.commence_distance &&
         a.mean_cost == b.mean_cost && a.collided == b.collided &&
         a.lane_change_completed == b.lane_change_completed;
}

// forecaster that reacts to the candidate: the human brakes hard whenever the
// robot's first planned throttle is positive, otherwise coasts
struct responsive_forecaster final : forecaster {
  std::vector<std::vector<control>> sample(const world_state&,
                                           std::span<const step_record>,
                                           std::span<const control> candidate,
                                           int, int n,
                                           std::uint64_t) const override {
    control c{};
    if (!candidate.empty() && candidate.front().throttle > 0.0)
      c.throttle = -1.5;
    return std::vector<std::vector<control>>(static_cast<std::size_t>(n),
                                             std::vector<control>(1, c));
  }
};

// re-derive a plan by brute force through the public pieces only: enumerate
// every candidate, sample forecasts with the same shared seed, roll the world
// forward holding the last control of each sequence, average over samples,
// argmin with ties to the lowest index
mpc_plan_result exhaustive_plan(const world_state& w,
                                std::span<const step_record> history,
                                const forecaster& fc, const mpc_config& cfg,
                                std::uint64_t seed) {
  std::size_t n_candidates = 1;
  for (int j = 0; j < cfg.tau; ++j) n_candidates *= 9;
  std::vector<double> costs(n_candidates, 0.0);
  for (std::size_t ci = 0; ci < n_candidates; ++ci) {
    const auto candidate = candidate_controls(ci, cfg.tau);
    const auto forecasts =
        fc.sample(w, history, candidate, cfg.horizon, cfg.n_samples, seed);
    double acc = 0.0;
    for (const auto& human_seq : forecasts) {
      world_state ws = w;
      double total = 0.0;
      for (int h = 0; h < cfg.horizon; ++h) {
        const auto ri = std::min(static_cast<std::size_t>(h), candidate.size() - 1);
        const auto hi = std::min(static_cast<std::size_t>(h), human_seq.size() - 1);
        ws = step(ws, control_tuple{candidate[ri], human_seq[hi]});
        total += mpc_cost(ws, cfg);
      }
      acc += total;
    }
    costs[ci] = acc / static_cast<double>(forecasts.size());
  }
  std::size_t best = 0;
  for (std::size_t ci = 1; ci < n_candidates; ++ci)
    if (costs[ci] < costs[best]) best = ci;
  mpc_plan_result out;
  out.controls = candidate_controls(best, cfg.tau);
  out.expected_cost = costs[best];
  out.chosen_index = best;
  out.candidates_evaluated = n_candidates;
  return out;
}

}  // namespace

TEST_CASE("legal control sets and snapping") {
  CHECK(is_legal(control{0.0, 0.0}));
  CHECK(is_legal(control{-1.5, 0.04}));
  CHECK(is_legal(control{1.5, -0.04}));
  CHECK_FALSE(is_legal(control{0.7, 0.0}));
  CHECK_FALSE(is_legal(control{0.0, 0.01}));

  const control a = snap_control(0.7, -0.01);
  CHECK(a.throttle == 0.0);
  CHECK(a.steering == 0.0);
  const control b = snap_control(0.8, -0.03);
  CHECK(b.throttle == 1.5);
  CHECK(b.steering == -0.04);
  const control c = snap_control(-100.0, 100.0);
  CHECK(c.throttle == -1.5);
  CHECK(c.steering == 0.04);
}

TEST_CASE("snap ties go to the smaller magnitude") {
  // 0.75 is equidistant from 0 and 1.5
  CHECK(snap_control(0.75, 0.0).throttle == 0.0);
  CHECK(snap_control(-0.75, 0.0).throttle == 0.0);
  CHECK(snap_control(0.76, 0.0).throttle == 1.5);
  CHECK(snap_control(-0.76, 0.0).throttle == -1.5);
  CHECK(snap_control(0.74, 0.0).throttle == 0.0);
  // 0.02 is equidistant from 0 and 0.04
  CHECK(snap_control(0.0, 0.02).steering == 0.0);
  CHECK(snap_control(0.0, -0.02).steering == 0.0);
  CHECK(snap_control(0.0, 0.021).steering == 0.04);
}

TEST_CASE("car speed is the velocity norm") {
  car_state c;
  c.vx = 3.0;
  c.vy = 4.0;
  CHECK(c.speed() == doctest::Approx(5.0));
  CHECK(car_state{}.speed() == 0.0);
}

TEST_CASE("step kinematics hand examples") {
  world_state w;
  w.human.px = 100.0;  // far away, irrelevant here
  w.dt = 0.1;

  SUBCASE("rest plus zero control stays at rest") {
    const auto n = step(w, control_tuple{});
    CHECK(n.robot.px == 0.0);
    CHECK(n.robot.py == 0.0);
    CHECK(n.robot.speed() == 0.0);
    CHECK(n.t == 1);
  }

  SUBCASE("full throttle from rest gains 0.15 m/s") {
    const auto n = step(w, control_tuple{control{1.5, 0.0}, control{}});
    CHECK(n.robot.vy == doctest::Approx(0.15).epsilon(1e-12));
    CHECK(n.robot.vx == 0.0);
    CHECK(n.robot.py == doctest::Approx(0.015).epsilon(1e-12));
    CHECK(n.robot.px == 0.0);
  }

  SUBCASE("speed clamps at zero under braking") {
    w.robot.vy = 0.1;
    auto n = step(w, control_tuple{control{-1.5, 0.0}, control{}});
    CHECK(n.robot.speed() == 0.0);
    CHECK(n.robot.py == doctest::Approx(0.1 * 0.0).epsilon(1e-12));
    n = step(n, control_tuple{control{-1.5, 0.0}, control{}});
    CHECK(n.robot.speed() == 0.0);  // stays clamped
  }

  SUBCASE("steering turns the heading before moving") {
    w.robot.vy = 5.0;
    const auto n = step(w, control_tuple{control{0.0, 0.04}, control{}});
    CHECK(n.robot.heading == doctest::Approx(0.04));
    // velocity uses the updated heading
    CHECK(n.robot.vx == doctest::Approx(5.0 * std::sin(0.04)));
    CHECK(n.robot.vy == doctest::Approx(5.0 * std::cos(0.04)));
    CHECK(n.robot.px == doctest::Approx(0.1 * 5.0 * std::sin(0.04)));
  }

  SUBCASE("coasting holds a constant velocity") {
    w.robot.vy = 6.0;
    world_state cur = w;
    for (int i = 0; i < 100; ++i) cur = step(cur, control_tuple{});
    CHECK(cur.robot.py == doctest::Approx(100 * 0.1 * 6.0).epsilon(1e-9));
    CHECK(cur.robot.vy == doctest::Approx(6.0));
    CHECK(cur.robot.vx == 0.0);
    CHECK(cur.t == 100);
  }

  SUBCASE("the gray car coasts no matter what the others do") {
    car_state gray;
    gray.px = 3.7;
    gray.py = -10.0;
    gray.vy = 5.0;
    w.third_car = gray;
    const auto n =
        step(w, control_tuple{control{-1.5, -0.04}, control{1.5, 0.04}});
    CHECK(n.third_car->py == doctest::Approx(-10.0 + 0.5));
    CHECK(n.third_car->vy == doctest::Approx(5.0));
    CHECK(n.third_car->heading == 0.0);
  }

  SUBCASE("off-grid controls are rejected") {
    CHECK_THROWS_AS(step(w, control_tuple{control{0.7, 0.0}, control{}}),
                    contract_error);
    CHECK_THROWS_AS(step(w, control_tuple{control{}, control{0.0, 0.01}}),
                    contract_error);
  }
}

TEST_CASE("driver target speed rule") {
  synthetic_driver_params p;  // v_high 10, v_low 5, d_safe 10
  world_state w;
  w.human.px = 3.7;

  SUBCASE("gamma positive speeds up when pulling ahead") {
    p.gamma = 1.0;
    w.human.py = 5.0;  // ahead, same speeds: d_rel = 5
    CHECK(synthetic_driver::target_speed(w, p) == 10.0);
    w.human.py = -5.0;
    CHECK(synthetic_driver::target_speed(w, p) == 5.0);
  }

  SUBCASE("gamma negative speeds up when falling behind") {
    p.gamma = -1.0;
    w.human.py = 5.0;
    CHECK(synthetic_driver::target_speed(w, p) == 5.0);
    w.human.py = -5.0;
    CHECK(synthetic_driver::target_speed(w, p) == 10.0);
  }

  SUBCASE("relative speed feeds the rule too") {
    p.gamma = 1.0;
    w.human.py = 0.0;  // level, but human already faster
    w.human.vy = 8.0;
    w.robot.vy = 4.0;  // d_rel = 0 + 4 > 0
    CHECK(synthetic_driver::target_speed(w, p) == 10.0);
    w.human.vy = 4.0;
    w.robot.vy = 8.0;  // d_rel = -4
    CHECK(synthetic_driver::target_speed(w, p) == 5.0);
  }

  SUBCASE("gamma zero always wants the high speed") {
    p.gamma = 0.0;
    w.human.py = -50.0;
    CHECK(synthetic_driver::target_speed(w, p) == 10.0);
  }

  SUBCASE("a close gray car forces the low speed") {
    p.gamma = 1.0;
    w.human.py = 5.0;
    car_state gray;
    gray.px = 3.7;
    gray.py = w.human.py - 3.0;  // gap 3 < d_safe 10
    w.third_car = gray;
    CHECK(synthetic_driver::target_speed(w, p) == 5.0);
    w.third_car->py = w.human.py - 15.0;  // comfortable gap
    CHECK(synthetic_driver::target_speed(w, p) == 10.0);
  }

  SUBCASE("no gray car means the gap clause passes") {
    p.gamma = 1.0;
    w.human.py = 5.0;
    w.third_car.reset();
    CHECK(synthetic_driver::target_speed(w, p) == 10.0);
  }
}

TEST_CASE("driver PID produces snapped throttle") {
  world_state w;
  w.human.px = 3.7;
  w.human.py = 5.0;
  w.human.vy = 5.0;
  w.dt = 0.1;

  SUBCASE("large speed error saturates the throttle") {
    synthetic_driver_params p;
    p.gamma = 1.0;  // ahead -> target 10, err 5, kp 0.5 -> cmd 2.5
    synthetic_driver d(p);
    const control u = d.act(w);
    CHECK(u.throttle == 1.5);
    CHECK(u.steering == 0.0);
  }

  SUBCASE("small error rounds to rest") {
    synthetic_driver_params p;
    p.gamma = 1.0;
    w.human.vy = 9.99;  // err 0.01 -> cmd ~0.005
    synthetic_driver d(p);
    CHECK(d.act(w).throttle == 0.0);
  }

  SUBCASE("derivative term reacts to a fast-shrinking error") {
    synthetic_driver_params p;
    p.gamma = 1.0;
    synthetic_driver d(p);
    (void)d.act(w);  // err 5
    world_state w2 = w;
    w2.human.vy = 9.9;  // err 0.1; deriv (0.1-5)/0.1 = -49
    // cmd = 0.5*0.1 + 0.1*(-49) = -4.85 -> hard brake
    CHECK(d.act(w2).throttle == -1.5);
    // without the stored previous error the same state rounds to rest
    synthetic_driver fresh(p);
    CHECK(fresh.act(w2).throttle == 0.0);
  }

  SUBCASE("integral term accumulates and reset clears it") {
    synthetic_driver_params p;
    p.gamma = 1.0;
    p.pid = pid_gains{0.0, 1.0, 0.0};  // pure integral
    synthetic_driver d(p);
    CHECK(d.act(w).throttle == 0.0);  // integral 0.5 -> cmd 0.5 -> rest
    CHECK(d.act(w).throttle == 1.5);  // integral 1.0 -> cmd 1.0 -> full
    d.reset();
    CHECK(d.act(w).throttle == 0.0);  // back to the first-call behaviour
  }
}

TEST_CASE("driver parameter validation") {
  synthetic_driver_params p;
  p.v_high = 5.0;
  p.v_low = 5.0;
  CHECK_THROWS_AS(synthetic_driver{p}, contract_error);
  p = synthetic_driver_params{};
  p.d_safe = 0.0;
  CHECK_THROWS_AS(synthetic_driver{p}, contract_error);
  p = synthetic_driver_params{};
  p.gamma = 1.5;
  CHECK_THROWS_AS(synthetic_driver{p}, contract_error);
  p.gamma = -1.5;
  CHECK_THROWS_AS(synthetic_driver{p}, contract_error);
}

TEST_CASE("naive predictor repeats the current control") {
  const control cur{1.5, -0.04};
  const auto seq = naive_predictor(cur, 7);
  REQUIRE(seq.size() == 7);
  for (const auto& c : seq) {
    CHECK(c.throttle == 1.5);
    CHECK(c.steering == -0.04);
  }
  CHECK_THROWS_AS(naive_predictor(cur, 0), contract_error);
}

TEST_CASE("naive forecaster echoes the last human control") {
  naive_forecaster fc;
  world_state w;
  w.human.px = 3.7;

  SUBCASE("empty history forecasts rest") {
    const auto out = fc.sample(w, {}, {}, 10, 3, 1);
    REQUIRE(out.size() == 3);
    for (const auto& seq : out) {
      REQUIRE(seq.size() == 1);  // length-1, held by the planner
      CHECK(seq[0].throttle == 0.0);
      CHECK(seq[0].steering == 0.0);
    }
  }

  SUBCASE("with history the last human control is repeated") {
    std::vector<step_record> hist(2);
    hist[0].controls.human = control{-1.5, 0.0};
    hist[1].controls.human = control{1.5, 0.04};
    const auto out = fc.sample(w, hist, {}, 10, 2, 1);
    REQUIRE(out.size() == 2);
    CHECK(out[0][0].throttle == 1.5);
    CHECK(out[0][0].steering == 0.04);
  }

  SUBCASE("argument validation") {
    CHECK_THROWS_AS(fc.sample(w, {}, {}, 10, 0, 1), contract_error);
    CHECK_THROWS_AS(fc.sample(w, {}, {}, 0, 1, 1), contract_error);
  }
}

TEST_CASE("interaction cost hand values") {
  mpc_config cfg;  // alpha -3, beta 5000
  world_state w;

  SUBCASE("robot ahead and faster is penalized by the gap term only") {
    w.robot.py = 10.0;
    w.robot.vy = 7.0;
    w.human.py = 0.0;
    w.human.vy = 5.0;
    // -3 * 10 * 2 + 5000/10 = -60 + 500 = 440
    CHECK(mpc_cost(w, cfg) == doctest::Approx(440.0).epsilon(1e-12));
  }

  SUBCASE("growing separation drives the cost negative") {
    w.robot.py = 50.0;
    w.robot.vy = 6.0;
    w.human.py = 0.0;
    w.human.vy = 5.0;
    // -3 * 50 * 1 + 5000/50 = -150 + 100 = -50
    CHECK(mpc_cost(w, cfg) == doctest::Approx(-50.0).epsilon(1e-12));
    cfg.cost_floor = 0.0;
    CHECK(mpc_cost(w, cfg) == 0.0);
    cfg.cost_floor = -10.0;
    CHECK(mpc_cost(w, cfg) == -10.0);
  }

  SUBCASE("the floor leaves higher costs alone") {
    w.robot.py = 5.0;
    w.human.py = 0.0;
    cfg.cost_floor = 0.0;
    CHECK(mpc_cost(w, cfg) == doctest::Approx(1000.0));
  }

  SUBCASE("coincident cars are a numerical error") {
    CHECK_THROWS_AS(mpc_cost(w, cfg), numeric_error);
  }
}

TEST_CASE("candidate enumeration order") {
  // index 0 = hard brake + left, digits little-endian in the index
  const auto c0 = candidate_controls(0, 1);
  REQUIRE(c0.size() == 1);
  CHECK(c0[0].throttle == -1.5);
  CHECK(c0[0].steering == -0.04);

  const auto c4 = candidate_controls(4, 1);
  CHECK(c4[0].throttle == 0.0);
  CHECK(c4[0].steering == 0.0);

  const auto c8 = candidate_controls(8, 1);
  CHECK(c8[0].throttle == 1.5);
  CHECK(c8[0].steering == 0.04);

  const auto c9 = candidate_controls(9, 2);
  REQUIRE(c9.size() == 2);
  CHECK(c9[0].throttle == -1.5);  // digit 0
  CHECK(c9[0].steering == -0.04);
  CHECK(c9[1].throttle == -1.5);  // digit 1
  CHECK(c9[1].steering == 0.0);

  SUBCASE("all 81 two-step candidates are distinct") {
    std::set<std::vector<double>> seen;
    for (std::size_t i = 0; i < 81; ++i) {
      const auto c = candidate_controls(i, 2);
      REQUIRE(c.size() == 2);
      seen.insert({c[0].throttle, c[0].steering, c[1].throttle, c[1].steering});
      for (const auto& u : c) CHECK(is_legal(u));
    }
    CHECK(seen.size() == 81);
  }

  SUBCASE("out-of-range indices and bad tau are rejected") {
    CHECK_THROWS_AS(candidate_controls(9, 1), contract_error);
    CHECK_THROWS_AS(candidate_controls(81, 2), contract_error);
    CHECK_THROWS_AS(candidate_controls(0, 0), contract_error);
  }
}

TEST_CASE("planner matches an exhaustive re-derivation") {
  world_state w;
  w.robot.py = 0.0;
  w.robot.vy = 6.0;
  w.human.px = 3.7;
  w.human.py = 3.0;
  w.human.vy = 5.0;
  naive_forecaster fc;
  std::vector<step_record> hist(1);
  hist[0].controls.human = control{1.5, 0.0};

  for (int tau : {1, 2}) {
    CAPTURE(tau);
    mpc_config cfg;
    cfg.tau = tau;
    cfg.horizon = 6;
    cfg.n_samples = 2;
    const auto got = mpc_plan(w, hist, fc, cfg, 17);
    const auto want = exhaustive_plan(w, hist, fc, cfg, 17);
    CHECK(got.chosen_index == want.chosen_index);
    CHECK(got.expected_cost == want.expected_cost);
    CHECK(got.candidates_evaluated == want.candidates_evaluated);
    CHECK(got.candidates_evaluated == (tau == 1 ? 9u : 81u));
    REQUIRE(got.controls.size() == static_cast<std::size_t>(tau));
    for (std::size_t j = 0; j < got.controls.size(); ++j) {
      CHECK(got.controls[j].throttle == want.controls[j].throttle);
      CHECK(got.controls[j].steering == want.controls[j].steering);
    }
  }
}

TEST_CASE("planner parallel and serial agree bitwise") {
  world_state w;
  w.robot.vy = 5.0;
  w.human.px = 3.7;
  w.human.py = -2.0;
  w.human.vy = 7.0;
  naive_forecaster fc;
  mpc_config cfg;
  cfg.tau = 2;
  cfg.horizon = 7;
  cfg.n_samples = 3;
  cfg.parallel = true;
  const auto par = mpc_plan(w, {}, fc, cfg, 5);
  cfg.parallel = false;
  const auto ser = mpc_plan(w, {}, fc, cfg, 5);
  CHECK(par.chosen_index == ser.chosen_index);
  CHECK(par.expected_cost == ser.expected_cost);
}

TEST_CASE("seed is irrelevant for a deterministic forecaster") {
  world_state w;
  w.robot.vy = 5.0;
  w.human.px = 3.7;
  w.human.py = 2.0;
  w.human.vy = 5.0;
  naive_forecaster fc;
  mpc_config cfg;
  cfg.tau = 1;
  cfg.horizon = 5;
  cfg.n_samples = 2;
  const auto a = mpc_plan(w, {}, fc, cfg, 1);
  const auto b = mpc_plan(w, {}, fc, cfg, 999);
  CHECK(a.chosen_index == b.chosen_index);
  CHECK(a.expected_cost == b.expected_cost);
}

TEST_CASE("planner conditions on the candidate through the forecaster") {
  // human directly ahead in the same lane; accelerating makes them brake,
  // which closes the gap fast, so the planner should not hit the gas
  world_state w;
  w.robot.py = 0.0;
  w.robot.vy = 5.0;
  w.human.px = 0.0;
  w.human.py = 6.0;
  w.human.vy = 5.0;
  responsive_forecaster fc;
  mpc_config cfg;
  cfg.tau = 1;
  cfg.horizon = 5;
  cfg.n_samples = 1;
  const auto res = mpc_plan(w, {}, fc, cfg, 3);
  CHECK(res.controls[0].throttle <= 0.0);
}

TEST_CASE("cost ties break to the lowest candidate index") {
  world_state w;
  w.robot.vy = 5.0;
  w.human.px = 3.7;
  w.human.py = 2.0;
  w.human.vy = 5.0;
  naive_forecaster fc;
  mpc_config cfg;
  cfg.tau = 1;
  cfg.horizon = 4;
  cfg.n_samples = 1;
  cfg.cost_floor = 1e9;  // every step floors to 1e9: all candidates tie
  const auto res = mpc_plan(w, {}, fc, cfg, 2);
  CHECK(res.chosen_index == 0);
  CHECK(res.expected_cost == doctest::Approx(4e9));
}

TEST_CASE("planner contract errors") {
  world_state w;
  w.human.px = 3.7;
  naive_forecaster fc;
  mpc_config cfg;
  cfg.tau = 0;
  cfg.horizon = 5;
  CHECK_THROWS_AS(mpc_plan(w, {}, fc, cfg, 1), contract_error);
  cfg.tau = 3;
  cfg.horizon = 3;  // need horizon > tau
  CHECK_THROWS_AS(mpc_plan(w, {}, fc, cfg, 1), contract_error);
  cfg.horizon = 5;
  cfg.n_samples = 0;
  CHECK_THROWS_AS(mpc_plan(w, {}, fc, cfg, 1), contract_error);
}

TEST_CASE("lane change gains and controller") {
  const auto g = make_lane_change_gains(3.7, 5.0, 0.1, 5.0);
  CHECK(g.k_lat_e > 0.0);
  CHECK(g.k_lat_v > 0.0);
  CHECK(g.k_lon > 0.0);
  CHECK(g.target_x == 3.7);
  CHECK(g.target_v == 5.0);

  SUBCASE("on-target state commands rest") {
    car_state r;
    r.px = 3.7;
    r.vx = 0.0;
    r.vy = 5.0;
    const control u = lane_change_controller(g, r);
    CHECK(u.throttle == 0.0);
    CHECK(u.steering == 0.0);
  }

  SUBCASE("lateral error steers toward the target lane") {
    car_state r;
    r.px = 0.7;  // target is at larger x
    r.vy = 5.0;
    CHECK(lane_change_controller(g, r).steering == 0.04);
    r.px = 6.7;
    CHECK(lane_change_controller(g, r).steering == -0.04);
  }

  SUBCASE("speed error commands throttle") {
    car_state r;
    r.px = 3.7;
    r.vy = 1.0;  // well below target
    CHECK(lane_change_controller(g, r).throttle == 1.5);
    r.vy = 9.0;
    CHECK(lane_change_controller(g, r).throttle == -1.5);
  }

  SUBCASE("bad construction arguments") {
    CHECK_THROWS_AS(make_lane_change_gains(3.7, 5.0, 0.0, 5.0), contract_error);
    CHECK_THROWS_AS(make_lane_change_gains(3.7, 5.0, 0.1, 0.0), contract_error);
  }
}

TEST_CASE("lane controller settles within 0.1 m from a 3 m offset") {
  const auto g = make_lane_change_gains(3.7, 5.0, 0.1, 5.0);
  world_state w;
  w.robot.px = 0.7;
  w.robot.vy = 5.0;
  w.human.px = 3.7;
  w.human.py = 1000.0;  // out of the way
  w.dt = 0.1;
  double settled_err = 1e9;
  for (int t = 0; t < 200; ++t) {
    const control u = lane_change_controller(g, w.robot);
    w = step(w, control_tuple{u, control{}});
    settled_err = std::abs(w.robot.px - g.target_x);
  }
  CHECK(settled_err < 0.1);
  CHECK(std::abs(w.robot.heading) < 0.02);
  CHECK(w.robot.vy == doctest::Approx(5.0).epsilon(0.02));
  // and it stays put: no limit cycle pushes it back out
  double worst_tail = 0.0;
  for (int t = 0; t < 200; ++t) {
    const control u = lane_change_controller(g, w.robot);
    w = step(w, control_tuple{u, control{}});
    worst_tail = std::max(worst_tail, std::abs(w.robot.px - g.target_x));
  }
  CHECK(worst_tail < 0.1);
}

TEST_CASE("episode trace is consistent with the dynamics") {
  episode_config cfg;
  cfg.scene = scenario::lane_swap;
  cfg.mpc.tau = 3;
  cfg.mpc.horizon = 8;
  cfg.mpc.n_samples = 1;
  cfg.max_steps = 60;
  naive_forecaster fc;
  synthetic_driver_params dp;
  dp.gamma = 0.5;
  const auto inits =
      generate_initial_states(1, scenario::lane_swap, init_ranges{}, 21);
  const auto ep = run_episode(cfg, fc, dp, inits[0], 4);
  REQUIRE(!ep.trace.empty());

  double acc = 0.0;
  for (std::size_t i = 0; i < ep.trace.size(); ++i) {
    const auto& rec = ep.trace[i];
    CHECK(rec.t == static_cast<int>(i));
    CHECK(rec.world.t == static_cast<int>(i));
    CHECK(is_legal(rec.controls.robot));
    CHECK(is_legal(rec.controls.human));
    CHECK(rec.cost == mpc_cost(rec.world, cfg.mpc));
    acc += rec.cost;
    if (i + 1 < ep.trace.size()) {
      const auto next = step(rec.world, rec.controls);
      CHECK(same_world(next, ep.trace[i + 1].world));
    }
  }
  CHECK(ep.mean_cost == acc / static_cast<double>(ep.trace.size()));
  CHECK(episode_mean_human_speed(ep) > 0.0);
}

TEST_CASE("episodes are deterministic in the seed") {
  episode_config cfg;
  cfg.scene = scenario::lane_change;
  cfg.mpc.tau = 3;
  cfg.mpc.horizon = 8;
  cfg.mpc.n_samples = 2;
  cfg.mpc.cost_floor = 0.0;
  cfg.max_steps = 80;
  naive_forecaster fc;
  synthetic_driver_params dp;
  dp.gamma = -0.5;
  const auto inits =
      generate_initial_states(1, scenario::lane_change, init_ranges{}, 13);
  const auto a = run_episode(cfg, fc, dp, inits[0], 77);
  const auto b = run_episode(cfg, fc, dp, inits[0], 77);
  CHECK(same_episode(a, b));
}

TEST_CASE("phase two never commences with an unreachable gap") {
  episode_config cfg;
  cfg.scene = scenario::lane_change;
  cfg.mpc.tau = 3;
  cfg.mpc.horizon = 8;
  cfg.mpc.n_samples = 1;
  cfg.mpc.cost_floor = 0.0;
  cfg.phase2_gap = 1e9;
  cfg.max_steps = 20;
  naive_forecaster fc;
  synthetic_driver_params dp;
  const auto inits =
      generate_initial_states(1, scenario::lane_change, init_ranges{}, 8);
  const auto ep = run_episode(cfg, fc, dp, inits[0], 1);
  CHECK(ep.commence_step == -1);
  CHECK_FALSE(ep.lane_change_completed);
}

TEST_CASE("phase two commencement metrics") {
  episode_config cfg;
  cfg.scene = scenario::lane_change;
  cfg.mpc.tau = 3;
  cfg.mpc.horizon = 8;
  cfg.mpc.n_samples = 1;
  cfg.mpc.cost_floor = 0.0;
  cfg.max_steps = 200;
  naive_forecaster fc;
  synthetic_driver_params dp;
  dp.gamma = 0.5;
  const auto inits =
      generate_initial_states(4, scenario::lane_change, init_ranges{}, 11);
  int completed = 0;
  for (std::size_t i = 0; i < inits.size(); ++i) {
    const auto ep = run_episode(cfg, fc, dp, inits[i], 50 + i);
    CAPTURE(i);
    CHECK(ep.commence_step >= 0);
    // the trigger requires phase2_gap of longitudinal clearance to every
    // target-lane car, and euclidean distance dominates the longitudinal gap
    CHECK(ep.commence_distance >= cfg.phase2_gap);
    CHECK_FALSE(ep.collided);
    completed += ep.lane_change_completed ? 1 : 0;
  }
  CHECK(completed >= 1);
}

TEST_CASE("collisions terminate the episode") {
  episode_config cfg;
  cfg.scene = scenario::lane_swap;
  cfg.mpc.tau = 1;
  cfg.mpc.horizon = 2;
  cfg.mpc.n_samples = 1;
  cfg.max_steps = 30;
  naive_forecaster fc;
  synthetic_driver_params dp;
  dp.gamma = -1.0;
  initial_state init;  // fast human rear-ends the slow robot in-lane
  init.robot.vy = 1.0;
  init.human.px = 0.0;
  init.human.py = -3.0;
  init.human.vy = 8.0;
  const auto ep = run_episode(cfg, fc, dp, init, 7);
  CHECK(ep.collided);
  CHECK(ep.trace.size() < 5);  // terminates right away, not at max_steps
  CHECK_FALSE(ep.lane_change_completed);
}

TEST_CASE("scene and third car must agree") {
  episode_config cfg;
  naive_forecaster fc;
  synthetic_driver_params dp;
  initial_state init;
  init.human.px = 3.7;

  cfg.scene = scenario::lane_change;  // needs a third car
  CHECK_THROWS_AS(run_episode(cfg, fc, dp, init, 1), contract_error);

  cfg.scene = scenario::lane_swap;  // must not have one
  init.third_car = car_state{};
  CHECK_THROWS_AS(run_episode(cfg, fc, dp, init, 1), contract_error);

  init.third_car.reset();
  cfg.max_steps = 0;
  CHECK_THROWS_AS(run_episode(cfg, fc, dp, init, 1), contract_error);
}

TEST_CASE("risk appetite shows up in the mean human speed") {
  episode_config cfg;
  cfg.scene = scenario::lane_swap;
  cfg.mpc.tau = 3;
  cfg.mpc.horizon = 8;
  cfg.mpc.n_samples = 1;
  cfg.max_steps = 80;
  naive_forecaster fc;
  const auto inits =
      generate_initial_states(6, scenario::lane_swap, init_ranges{}, 42);
  auto mean_speed = [&](double gamma) {
    synthetic_driver_params dp;
    dp.gamma = gamma;
    double acc = 0.0;
    for (std::size_t i = 0; i < inits.size(); ++i)
      acc += episode_mean_human_speed(run_episode(cfg, fc, dp, inits[i], 100 + i));
    return acc / static_cast<double>(inits.size());
  };
  // gamma +1 chases the high target whenever it is ahead of the robot;
  // gamma -1 only when behind, so it spends more time at v_low
  CHECK(mean_speed(1.0) > mean_speed(-1.0) + 0.5);
}

TEST_CASE("initial state generation") {
  init_ranges r;

  SUBCASE("lane swap draws") {
    const auto states = generate_initial_states(50, scenario::lane_swap, r, 3);
    REQUIRE(states.size() == 50);
    for (const auto& s : states) {
      CHECK(s.robot.px == 0.0);
      CHECK(s.robot.py == 0.0);
      CHECK(s.robot.vx == 0.0);
      CHECK(s.robot.heading == 0.0);
      CHECK(s.robot.vy >= r.robot_v_min);
      CHECK(s.robot.vy < r.robot_v_max);
      CHECK(s.human.px == r.lane_width);
      CHECK(s.human.py >= r.human_dy_min);
      CHECK(s.human.py < r.human_dy_max);
      CHECK(s.human.vy >= r.human_v_min);
      CHECK(s.human.vy < r.human_v_max);
      CHECK_FALSE(s.third_car.has_value());
    }
  }

  SUBCASE("lane change adds a trailing gray car in the human's lane") {
    const auto states =
        generate_initial_states(54, scenario::lane_change, r, 4);
    REQUIRE(states.size() == 54);
    for (const auto& s : states) {
      REQUIRE(s.third_car.has_value());
      CHECK(s.third_car->px == r.lane_width);
      CHECK(s.third_car->vy == r.gray_v);
      CHECK(s.third_car->vx == 0.0);
      const double gap = s.human.py - s.third_car->py;
      CHECK(gap >= r.gray_gap_min);
      CHECK(gap < r.gray_gap_max);
    }
  }

  SUBCASE("draws are deterministic in the seed") {
    const auto a = generate_initial_states(5, scenario::lane_change, r, 9);
    const auto b = generate_initial_states(5, scenario::lane_change, r, 9);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(same_car(a[i].robot, b[i].robot));
      CHECK(same_car(a[i].human, b[i].human));
      CHECK(same_car(*a[i].third_car, *b[i].third_car));
    }
  }

  SUBCASE("rejection keeps every pair outside the collision radius") {
    init_ranges tight = r;
    tight.lane_width = 0.5;  // most draws land inside 2 m and are redrawn
    const auto states =
        generate_initial_states(30, scenario::lane_swap, tight, 5);
    for (const auto& s : states) {
      const double d = std::hypot(s.robot.px - s.human.px,
                                  s.robot.py - s.human.py);
      CHECK(d > 2.0);
    }
  }

  SUBCASE("degenerate ranges pin every draw") {
    init_ranges fixed;
    fixed.human_dy_min = fixed.human_dy_max = 2.0;
    fixed.robot_v_min = fixed.robot_v_max = 6.0;
    fixed.human_v_min = fixed.human_v_max = 5.5;
    fixed.gray_gap_min = fixed.gray_gap_max = 10.0;
    const auto states =
        generate_initial_states(3, scenario::lane_change, fixed, 77);
    for (const auto& s : states) {
      CHECK(s.human.py == 2.0);
      CHECK(s.robot.vy == 6.0);
      CHECK(s.human.vy == 5.5);
      CHECK(s.third_car->py == doctest::Approx(-8.0).epsilon(1e-12));
    }
  }

  SUBCASE("n must be positive") {
    CHECK_THROWS_AS(generate_initial_states(0, scenario::lane_swap, r, 1),
                    contract_error);
  }
}

TEST_CASE("episode save and load round trip") {
  episode_config cfg;
  cfg.scene = scenario::lane_change;
  cfg.mpc.tau = 3;
  cfg.mpc.horizon = 8;
  cfg.mpc.n_samples = 1;
  cfg.mpc.cost_floor = 0.0;
  cfg.max_steps = 120;
  naive_forecaster fc;
  synthetic_driver_params dp;
  dp.gamma = 0.5;
  const auto inits =
      generate_initial_states(1, scenario::lane_change, init_ranges{}, 11);
  const auto ep = run_episode(cfg, fc, dp, inits[0], 50);
  REQUIRE(!ep.trace.empty());

  const std::string path = tmp_path("fedfleet_test_episode.jsonl");
  save_episode(path, ep);
  const auto back = load_episode(path);
  CHECK(same_episode(ep, back));
  std::filesystem::remove(path);

  SUBCASE("io errors") {
    CHECK_THROWS_AS(load_episode(tmp_path("no_such_episode.jsonl")), io_error);
    CHECK_THROWS_AS(save_episode("/no_such_dir_zz/ep.jsonl", ep), io_error);
  }

  SUBCASE("a missing meta line is rejected") {
    const std::string bad = tmp_path("fedfleet_bad_episode.jsonl");
    {
      std::ofstream out(bad);
      out << "{\"t\":0}\n";
    }
    CHECK_THROWS_AS(load_episode(bad), io_error);
    std::filesystem::remove(bad);
  }
}

TEST_CASE("scenario names") {
  CHECK(scenario_from_string("lane-swap") == scenario::lane_swap);
  CHECK(scenario_from_string("lane_swap") == scenario::lane_swap);
  CHECK(scenario_from_string("lane-change") == scenario::lane_change);
  CHECK(scenario_from_string("lane_change") == scenario::lane_change);
  CHECK(to_string(scenario::lane_swap) == "lane-swap");
  CHECK(to_string(scenario::lane_change) == "lane-change");
  CHECK_THROWS_AS(scenario_from_string("roundabout"), config_error);
}
