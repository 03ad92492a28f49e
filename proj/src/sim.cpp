#include "fedfleet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fedfleet/lqr.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"

namespace fedfleet::sim {

using json = nlohmann::ordered_json;

namespace {

double snap_to(double cmd, const std::array<double, 3>& set) {
  double best = set[0];
  double best_d = std::abs(cmd - set[0]);
  for (double s : set) {
    const double d = std::abs(cmd - s);
    // strict < keeps the earlier (smaller-magnitude-first ordering is not
    // guaranteed, so order the set and prefer middle on exact ties)
    if (d < best_d || (d == best_d && std::abs(s) < std::abs(best))) {
      best = s;
      best_d = d;
    }
  }
  return best;
}

bool in_set(double v, const std::array<double, 3>& set) {
  return v == set[0] || v == set[1] || v == set[2];
}

car_state step_car(const car_state& c, const control& u, double dt) {
  car_state n = c;
  n.heading = c.heading + u.steering;
  const double speed = std::max(0.0, c.speed() + u.throttle * dt);
  n.vx = speed * std::sin(n.heading);
  n.vy = speed * std::cos(n.heading);
  n.px = c.px + n.vx * dt;
  n.py = c.py + n.vy * dt;
  return n;
}

double car_distance(const car_state& a, const car_state& b) {
  return std::hypot(a.px - b.px, a.py - b.py);
}

// Same kinematics as the public step() but without the legality check:
// forecast rollouts feed real-valued model predictions through the dynamics,
// while controls actually executed in an episode stay on the discrete sets.
world_state step_any(const world_state& w, const control_tuple& controls) {
  world_state n = w;
  n.robot = step_car(w.robot, controls.robot, w.dt);
  n.human = step_car(w.human, controls.human, w.dt);
  if (w.third_car) n.third_car = step_car(*w.third_car, control{}, w.dt);
  n.t = w.t + 1;
  return n;
}

}  // namespace

bool is_legal(const control& c) {
  return in_set(c.throttle, throttle_set) && in_set(c.steering, steering_set);
}

control snap_control(double throttle_cmd, double steering_cmd) {
  return control{snap_to(throttle_cmd, throttle_set),
                 snap_to(steering_cmd, steering_set)};
}

double car_state::speed() const { return std::hypot(vx, vy); }

scenario scenario_from_string(const std::string& s) {
  if (s == "lane-swap" || s == "lane_swap") return scenario::lane_swap;
  if (s == "lane-change" || s == "lane_change") return scenario::lane_change;
  throw config_error("unknown scenario '" + s + "'");
}

std::string to_string(scenario sc) {
  return sc == scenario::lane_swap ? "lane-swap" : "lane-change";
}

world_state step(const world_state& w, const control_tuple& controls) {
  if (!is_legal(controls.robot) || !is_legal(controls.human))
    throw contract_error("step: controls must come from the legal discrete sets");
  return step_any(w, controls);
}

// ------------------------------------------------------------------ human ---

synthetic_driver::synthetic_driver(const synthetic_driver_params& p) : p_(p) {
  if (!(p.v_high > p.v_low) || !(p.v_low > 0))
    throw contract_error("synthetic_driver: need v_high > v_low > 0");
  if (!(p.d_safe > 0)) throw contract_error("synthetic_driver: d_safe must be positive");
  if (p.gamma < -1.0 || p.gamma > 1.0)
    throw contract_error("synthetic_driver: gamma must lie in [-1, 1]");
}

void synthetic_driver::reset() {
  integral_ = 0.0;
  prev_err_ = 0.0;
  has_prev_ = false;
}

double synthetic_driver::target_speed(const world_state& w,
                                      const synthetic_driver_params& p) {
  const double d_rel = (w.human.py - w.robot.py) + (w.human.vy - w.robot.vy);
  // Without a gray car the safety-gap clause holds vacuously; this lets the
  // same driver serve the lane-swap scenario, where no gray car exists.
  const bool gap_ok =
      !w.third_car || (w.human.py - w.third_car->py >= p.d_safe);
  const bool wants_high = p.gamma * d_rel >= 0.0;
  return (wants_high && gap_ok) ? p.v_high : p.v_low;
}

control synthetic_driver::act(const world_state& w) {
  const double target = target_speed(w, p_);
  const double err = target - w.human.vy;
  integral_ += err * w.dt;
  const double deriv = has_prev_ ? (err - prev_err_) / w.dt : 0.0;
  prev_err_ = err;
  has_prev_ = true;
  const double cmd = p_.pid.kp * err + p_.pid.ki * integral_ + p_.pid.kd * deriv;
  return snap_control(cmd, 0.0);
}

// --------------------------------------------------------------- planning ---

std::vector<control> naive_predictor(const control& current_human,
                                     std::size_t steps) {
  if (steps == 0) throw contract_error("naive_predictor: steps must be positive");
  return std::vector<control>(steps, current_human);
}

double mpc_cost(const world_state& w, const mpc_config& cfg) {
  const double dist = car_distance(w.robot, w.human);
  if (dist < 1e-9) throw numeric_error("mpc_cost: coincident cars");
  const double dy = w.robot.py - w.human.py;
  const double dv = w.robot.vy - w.human.vy;
  double j = cfg.alpha * dy * dv + cfg.beta / dist;
  if (cfg.cost_floor) j = std::max(*cfg.cost_floor, j);
  return j;
}

std::vector<std::vector<control>> naive_forecaster::sample(
    const world_state& w, std::span<const step_record> history,
    std::span<const control> candidate, int horizon, int n,
    std::uint64_t seed) const {
  (void)candidate;
  (void)seed;
  if (n < 1) throw contract_error("forecaster: n must be >= 1");
  if (horizon < 1) throw contract_error("forecaster: horizon must be >= 1");
  control current{};  // rest, if the episode just started
  if (!history.empty()) current = history.back().controls.human;
  (void)w;
  return std::vector<std::vector<control>>(
      static_cast<std::size_t>(n), naive_predictor(current, 1));
}

std::vector<control> candidate_controls(std::size_t index, int tau) {
  if (tau < 1) throw contract_error("candidate_controls: tau must be >= 1");
  std::vector<control> out;
  out.reserve(static_cast<std::size_t>(tau));
  std::size_t rest = index;
  for (int j = 0; j < tau; ++j) {
    const std::size_t d = rest % 9;
    rest /= 9;
    out.push_back(control{throttle_set[d / 3], steering_set[d % 3]});
  }
  if (rest != 0)
    throw contract_error("candidate_controls: index out of range for tau");
  return out;
}

namespace {

// Cost of one forecast rollout: candidate controls for the first tau steps
// (then held), forecast human controls likewise, summed J over H steps.
double rollout_cost(const world_state& w0, std::span<const control> candidate,
                    std::span<const control> human_seq, const mpc_config& cfg) {
  world_state w = w0;
  double total = 0.0;
  for (int h = 0; h < cfg.horizon; ++h) {
    const std::size_t ri =
        std::min(static_cast<std::size_t>(h), candidate.size() - 1);
    const std::size_t hi =
        std::min(static_cast<std::size_t>(h), human_seq.size() - 1);
    w = step_any(w, control_tuple{candidate[ri], human_seq[hi]});
    total += mpc_cost(w, cfg);
  }
  return total;
}

}  // namespace

mpc_plan_result mpc_plan(const world_state& w,
                         std::span<const step_record> history,
                         const forecaster& fc, const mpc_config& cfg,
                         std::uint64_t seed) {
  if (cfg.tau < 1 || cfg.horizon <= cfg.tau)
    throw contract_error("mpc_plan: need horizon > tau >= 1");
  if (cfg.n_samples < 1) throw contract_error("mpc_plan: n_samples must be >= 1");

  std::size_t n_candidates = 1;
  for (int j = 0; j < cfg.tau; ++j) n_candidates *= 9;

  std::vector<double> costs(n_candidates, 0.0);
  std::exception_ptr failure;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (cfg.parallel)
#endif
  for (long long ci = 0; ci < static_cast<long long>(n_candidates); ++ci) {
    try {
      const auto candidate =
          candidate_controls(static_cast<std::size_t>(ci), cfg.tau);
      // One shared seed: forecast draws are common random numbers across
      // candidates, so the argmin compares like against like.
      const auto forecasts =
          fc.sample(w, history, candidate, cfg.horizon, cfg.n_samples, seed);
      double acc = 0.0;
      for (const auto& human_seq : forecasts)
        acc += rollout_cost(w, candidate, human_seq, cfg);
      costs[static_cast<std::size_t>(ci)] =
          acc / static_cast<double>(forecasts.size());
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      {
        if (!failure) failure = std::current_exception();
      }
    }
  }
  if (failure) std::rethrow_exception(failure);

  // Serial argmin in enumeration order: deterministic tie-breaking.
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

// ---------------------------------------------------------------- phase 2 ---

namespace {

// Scalar discrete Riccati fixed point for x' = x + b u (q = 1).
double scalar_dare_gain(double b, double r) {
  double p = 1.0;
  for (int it = 0; it < 1000000; ++it) {
    const double next = 1.0 + p - (p * b) * (p * b) / (r + b * b * p);
    if (std::abs(next - p) < 1e-12) {
      p = next;
      break;
    }
    p = next;
  }
  return b * p / (r + b * b * p);
}

}  // namespace

lane_change_gains make_lane_change_gains(double target_x, double target_v,
                                         double dt, double nominal_speed) {
  if (!(dt > 0)) throw contract_error("make_lane_change_gains: dt must be positive");
  if (!(nominal_speed > 0))
    throw contract_error("make_lane_change_gains: nominal_speed must be positive");

  // Lateral model around straight driving: e' = e + dt*ev, ev' = ev + v*u
  // (steering is rad/step, so no dt on the input).  Reuse the Riccati solver
  // from the linear-control task.  R trades chatter against the snap
  // deadband: commands below half a steering quantum round to zero, so the
  // error where the loop goes quiet is ~0.02/k_e; R = 20 keeps that inside
  // the completion tolerance at typical entry speeds.
  lqr::lin_system lat;
  lat.a = {1.0, dt, 0.0, 1.0};
  lat.b = {0.0, nominal_speed};
  lqr::lqr_cost cost;
  cost.q = {1.0, 0.0, 0.0, 1.0};
  cost.r = 20.0;
  const auto sol = lqr::solve_dare(lat, cost);

  lane_change_gains g;
  g.k_lat_e = sol.k[0];
  g.k_lat_v = sol.k[1];
  g.k_lon = scalar_dare_gain(dt, 1.0);
  g.target_x = target_x;
  g.target_v = target_v;
  return g;
}

control lane_change_controller(const lane_change_gains& g,
                               const car_state& robot) {
  const double lat_err = robot.px - g.target_x;
  const double steer_cmd = -(g.k_lat_e * lat_err + g.k_lat_v * robot.vx);
  const double thr_cmd = -g.k_lon * (robot.vy - g.target_v);
  return snap_control(thr_cmd, steer_cmd);
}

// --------------------------------------------------------------- episodes ---

episode run_episode(const episode_config& cfg, const forecaster& fc,
                    const synthetic_driver_params& driver,
                    const initial_state& init, std::uint64_t seed) {
  if (cfg.max_steps < 1) throw contract_error("run_episode: max_steps must be >= 1");
  if ((cfg.scene == scenario::lane_change) != init.third_car.has_value())
    throw contract_error("run_episode: third car present iff lane-change scenario");

  world_state w;
  w.robot = init.robot;
  w.human = init.human;
  w.third_car = init.third_car;
  w.dt = cfg.dt;

  synthetic_driver human(driver);
  episode ep;
  bool phase2 = false;
  lane_change_gains gains;
  std::vector<control> plan;
  std::size_t plan_at = 0;
  std::uint64_t plan_count = 0;

  for (int t = 0; t < cfg.max_steps; ++t) {
    // Phase switch: enough longitudinal separation to enter the target lane.
    // With a third car in that lane the robot also needs clearance to it, or
    // it would blindly steer into an occupied slot.
    const bool human_gap_ok =
        std::abs(w.robot.py - w.human.py) >= cfg.phase2_gap;
    const bool third_gap_ok =
        !w.third_car ||
        std::abs(w.robot.py - w.third_car->py) >= cfg.phase2_gap;
    if (!phase2 && human_gap_ok && third_gap_ok) {
      phase2 = true;
      ep.commence_step = t;
      ep.commence_distance = car_distance(w.robot, w.human);
      if (w.third_car)
        ep.commence_distance = std::min(
            ep.commence_distance, car_distance(w.robot, *w.third_car));
      // Track at least the trailing car's speed so the entered gap cannot
      // close behind us during the maneuver.
      double target_v = std::max(1.0, w.robot.vy);
      if (w.third_car && w.third_car->py < w.robot.py)
        target_v = std::max(target_v, w.third_car->vy);
      gains = make_lane_change_gains(cfg.lane_width, target_v, cfg.dt,
                                     std::max(1.0, w.robot.speed()));
    }

    control robot_ctrl;
    if (phase2) {
      robot_ctrl = lane_change_controller(gains, w.robot);
    } else {
      if (plan_at >= plan.size()) {
        const auto res = mpc_plan(w, ep.trace, fc, cfg.mpc,
                                  derive_seed(seed, plan_count++));
        plan = res.controls;
        plan_at = 0;
      }
      robot_ctrl = plan[plan_at++];
    }

    const control human_ctrl = human.act(w);
    const double j = mpc_cost(w, cfg.mpc);
    ep.trace.push_back({t, w, control_tuple{robot_ctrl, human_ctrl}, j});

    w = step(w, control_tuple{robot_ctrl, human_ctrl});

    if (car_distance(w.robot, w.human) < cfg.collision_dist ||
        (w.third_car && car_distance(w.robot, *w.third_car) < cfg.collision_dist)) {
      ep.collided = true;
      break;
    }
    if (phase2 && std::abs(w.robot.px - gains.target_x) < cfg.lane_done_tol &&
        std::abs(w.robot.heading) < cfg.heading_done_tol) {
      ep.lane_change_completed = true;
      break;
    }
  }

  double acc = 0.0;
  for (const auto& rec : ep.trace) acc += rec.cost;
  ep.mean_cost = ep.trace.empty() ? 0.0 : acc / static_cast<double>(ep.trace.size());
  return ep;
}

double episode_mean_human_speed(const episode& ep) {
  if (ep.trace.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& rec : ep.trace) acc += rec.world.human.speed();
  return acc / static_cast<double>(ep.trace.size());
}

std::vector<initial_state> generate_initial_states(std::size_t n, scenario sc,
                                                   const init_ranges& r,
                                                   std::uint64_t seed) {
  if (n == 0) throw contract_error("generate_initial_states: n must be >= 1");
  rng gen(seed);
  std::vector<initial_state> out;
  out.reserve(n);
  const double collision_radius = 2.0;
  while (out.size() < n) {
    initial_state s;
    s.robot.px = 0.0;
    s.robot.py = 0.0;
    s.robot.vy = gen.uniform(r.robot_v_min, r.robot_v_max);
    s.human.px = r.lane_width;
    s.human.py = gen.uniform(r.human_dy_min, r.human_dy_max);
    s.human.vy = gen.uniform(r.human_v_min, r.human_v_max);
    if (sc == scenario::lane_change) {
      // Gray car shares the human's (target) lane, trailing the human, so
      // the robot's entry slot is genuinely contested.
      car_state gray;
      gray.px = r.lane_width;
      gray.py = s.human.py - gen.uniform(r.gray_gap_min, r.gray_gap_max);
      gray.vy = r.gray_v;
      s.third_car = gray;
    }
    const double d_rh = std::hypot(s.robot.px - s.human.px, s.robot.py - s.human.py);
    double d_min = d_rh;
    if (s.third_car) {
      d_min = std::min(d_min, std::hypot(s.robot.px - s.third_car->px,
                                         s.robot.py - s.third_car->py));
      d_min = std::min(d_min, std::hypot(s.human.px - s.third_car->px,
                                         s.human.py - s.third_car->py));
    }
    if (d_min <= collision_radius) continue;  // reject and redraw
    out.push_back(s);
  }
  return out;
}

// -------------------------------------------------------------------- io ---

namespace {

json car_to_json(const car_state& c) {
  json j;
  j["px"] = c.px;
  j["py"] = c.py;
  j["vx"] = c.vx;
  j["vy"] = c.vy;
  j["heading"] = c.heading;
  return j;
}

car_state car_from_json(const json& j) {
  car_state c;
  c.px = j.at("px").get<double>();
  c.py = j.at("py").get<double>();
  c.vx = j.at("vx").get<double>();
  c.vy = j.at("vy").get<double>();
  c.heading = j.at("heading").get<double>();
  return c;
}

json control_to_json(const control& c) {
  json j;
  j["throttle"] = c.throttle;
  j["steering"] = c.steering;
  return j;
}

control control_from_json(const json& j) {
  return control{j.at("throttle").get<double>(), j.at("steering").get<double>()};
}

}  // namespace

void save_episode(const std::string& path, const episode& ep) {
  std::ofstream out(path);
  if (!out) throw io_error("save_episode: cannot open '" + path + "'");
  json meta;
  meta["meta"] = true;
  meta["commence_step"] = ep.commence_step;
  meta["commence_distance"] = ep.commence_distance;
  meta["mean_cost"] = ep.mean_cost;
  meta["collided"] = ep.collided;
  meta["lane_change_completed"] = ep.lane_change_completed;
  out << meta.dump() << "\n";
  for (const auto& rec : ep.trace) {
    json j;
    j["t"] = rec.t;
    json ws;
    ws["robot"] = car_to_json(rec.world.robot);
    ws["human"] = car_to_json(rec.world.human);
    if (rec.world.third_car) ws["third_car"] = car_to_json(*rec.world.third_car);
    ws["dt"] = rec.world.dt;
    j["world"] = ws;
    json cs;
    cs["robot"] = control_to_json(rec.controls.robot);
    cs["human"] = control_to_json(rec.controls.human);
    j["controls"] = cs;
    j["J"] = rec.cost;
    out << j.dump() << "\n";
  }
  if (!out) throw io_error("save_episode: write failed for '" + path + "'");
}

episode load_episode(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_episode: cannot open '" + path + "'");
  episode ep;
  std::string line;
  std::size_t lineno = 0;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw io_error("load_episode: bad JSON at " + path + ":" +
                     std::to_string(lineno) + ": " + e.what());
    }
    if (!have_meta) {
      if (!j.value("meta", false))
        throw io_error("load_episode: first line must be the meta record");
      ep.commence_step = j.at("commence_step").get<int>();
      ep.commence_distance = j.at("commence_distance").get<double>();
      ep.mean_cost = j.at("mean_cost").get<double>();
      ep.collided = j.at("collided").get<bool>();
      ep.lane_change_completed = j.at("lane_change_completed").get<bool>();
      have_meta = true;
      continue;
    }
    step_record rec;
    rec.t = j.at("t").get<int>();
    const json& ws = j.at("world");
    rec.world.robot = car_from_json(ws.at("robot"));
    rec.world.human = car_from_json(ws.at("human"));
    if (ws.contains("third_car"))
      rec.world.third_car = car_from_json(ws.at("third_car"));
    rec.world.dt = ws.at("dt").get<double>();
    rec.world.t = rec.t;
    rec.controls.robot = control_from_json(j.at("controls").at("robot"));
    rec.controls.human = control_from_json(j.at("controls").at("human"));
    rec.cost = j.at("J").get<double>();
    ep.trace.push_back(rec);
  }
  if (!have_meta) throw io_error("load_episode: empty file '" + path + "'");
  return ep;
}

}  // namespace fedfleet::sim
