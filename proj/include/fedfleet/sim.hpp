#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedfleet/common.hpp"

namespace fedfleet::sim {

// Legal discrete control sets (throttle m/s^2, steering rad/step).
inline constexpr std::array<double, 3> throttle_set{-1.5, 0.0, 1.5};
inline constexpr std::array<double, 3> steering_set{-0.04, 0.0, 0.04};

struct control {
  double throttle = 0.0;
  double steering = 0.0;
};

bool is_legal(const control& c);

// Nearest legal control (ties go to the smaller magnitude).
control snap_control(double throttle_cmd, double steering_cmd);

struct car_state {
  double px = 0.0;  // lateral, m
  double py = 0.0;  // longitudinal, m
  double vx = 0.0;
  double vy = 0.0;
  double heading = 0.0;  // rad; 0 points along +y

  double speed() const;
};

enum class scenario { lane_swap, lane_change };

scenario scenario_from_string(const std::string& s);
std::string to_string(scenario sc);

struct world_state {
  car_state robot;
  car_state human;
  std::optional<car_state> third_car;  // gray car; present iff lane_change
  int t = 0;
  double dt = 0.1;
};

struct control_tuple {
  control robot;
  control human;
};

// Unicycle update for every car: heading += steering, speed updated by
// throttle*dt (clamped at 0 so speed stays non-negative), velocity
// speed*(sin heading, cos heading), position += velocity*dt.  The gray car
// coasts (zero controls).  Throws contract_error on illegal controls.
world_state step(const world_state& w, const control_tuple& controls);

// ---------------------------------------------------------------- human ---

struct pid_gains {
  double kp = 0.5;
  double ki = 0.0;
  double kd = 0.1;
};

struct synthetic_driver_params {
  double gamma = 0.0;   // risk tolerance in [-1, 1]
  double v_high = 10.0;
  double v_low = 5.0;
  double d_safe = 10.0;
  pid_gains pid;
};

// Risk-parameterized speed-tracking driver.  Picks target speed v_high when
// gamma * d_rel >= 0 and the gap to the gray car is at least d_safe (the gap
// clause passes vacuously when there is no gray car), else v_low;
// d_rel = (p_hy - p_ry) + (v_hy - v_ry).  A PID on the speed error produces a
// throttle command, snapped to the legal set; steering is always 0.
class synthetic_driver {
 public:
  explicit synthetic_driver(const synthetic_driver_params& p);

  control act(const world_state& w);
  void reset();

  // Target-speed rule only, stateless; exposed for direct testing.
  static double target_speed(const world_state& w,
                             const synthetic_driver_params& p);

 private:
  synthetic_driver_params p_;
  double integral_ = 0.0;
  double prev_err_ = 0.0;
  bool has_prev_ = false;
};

// -------------------------------------------------------------- planning ---

// Constant-control forecast used to bootstrap data collection: the current
// human control repeated `steps` times, independent of everything else.
std::vector<control> naive_predictor(const control& current_human,
                                     std::size_t steps);

struct mpc_config {
  double alpha = -3.0;
  double beta = 5000.0;
  int tau = 3;       // control interval (steps per re-plan)
  int horizon = 20;  // cost lookahead H > tau
  int n_samples = 5;
  std::optional<double> cost_floor;  // C_low; only set for lane_change
  bool parallel = true;
};

// Instantaneous interaction cost
//   J = alpha*(p_ry - p_hy)*(v_ry - v_hy) + beta/|p_r - p_h|,
// floored at C_low when configured.  Throws numeric_error if the cars are
// coincident.
double mpc_cost(const world_state& w, const mpc_config& cfg);

struct step_record {
  int t = 0;
  world_state world;
  control_tuple controls;
  double cost = 0.0;
};

// Human-control forecaster abstraction.  `history` is the episode trace so
// far (oldest first); `candidate` is the robot control sequence under
// evaluation.  Returns n sequences; each may be any positive length, and the
// planner holds the last entry for the remaining horizon.  Implementations
// must be deterministic in (inputs, seed): the planner reuses one seed across
// all candidates so forecast draws are common random numbers.
class forecaster {
 public:
  virtual ~forecaster() = default;
  virtual std::vector<std::vector<control>> sample(
      const world_state& w, std::span<const step_record> history,
      std::span<const control> candidate, int horizon, int n,
      std::uint64_t seed) const = 0;
};

class naive_forecaster final : public forecaster {
 public:
  std::vector<std::vector<control>> sample(const world_state& w,
                                           std::span<const step_record> history,
                                           std::span<const control> candidate,
                                           int horizon, int n,
                                           std::uint64_t seed) const override;
};

// Candidate enumeration order (documented, load-bearing for tie-breaks):
// candidate index c in [0, 9^tau); step j in [0, tau) reads base-9 digit
// d_j = (c / 9^j) % 9, throttle = throttle_set[d_j / 3], steering =
// steering_set[d_j % 3].  So index 0 is "hard brake + left" held tau steps.
std::vector<control> candidate_controls(std::size_t index, int tau);

struct mpc_plan_result {
  std::vector<control> controls;  // length tau
  double expected_cost = 0.0;     // Monte Carlo mean of the summed cost
  std::size_t chosen_index = 0;
  std::size_t candidates_evaluated = 0;
};

// Exhaustive enumeration of all 9^tau candidates; for each, n_samples
// forecast rollouts of `horizon` steps (candidate controls first, last one
// held; human forecast likewise), summed cost averaged over samples; argmin
// with ties to the lowest index.  Candidate evaluation may run in parallel;
// the result never depends on thread count.
mpc_plan_result mpc_plan(const world_state& w,
                         std::span<const step_record> history,
                         const forecaster& fc, const mpc_config& cfg,
                         std::uint64_t seed);

// --------------------------------------------------------------- phase 2 ---

struct lane_change_gains {
  double k_lat_e = 0.0;   // lateral position error
  double k_lat_v = 0.0;   // lateral velocity
  double k_lon = 0.0;     // longitudinal speed error
  double target_x = 0.0;
  double target_v = 0.0;
};

// Discrete-LQR gains for the linearized lateral model (position error,
// lateral velocity) plus a scalar Riccati gain for speed tracking.
lane_change_gains make_lane_change_gains(double target_x, double target_v,
                                         double dt, double nominal_speed);

// State feedback, snapped to the legal control sets.
control lane_change_controller(const lane_change_gains& g,
                               const car_state& robot);

// -------------------------------------------------------------- episodes ---

struct episode_config {
  scenario scene = scenario::lane_swap;
  mpc_config mpc;
  double dt = 0.1;
  int max_steps = 200;
  double phase2_gap = 8.0;        // longitudinal |p_ry - p_hy| trigger
  double lane_width = 3.7;
  double collision_dist = 2.0;
  double lane_done_tol = 0.2;
  double heading_done_tol = 0.02;
};

struct episode {
  std::vector<step_record> trace;
  int commence_step = -1;           // -1 = lane change never commenced
  double commence_distance = 0.0;   // min distance to a target-lane car
  double mean_cost = 0.0;
  bool collided = false;
  bool lane_change_completed = false;
};

struct initial_state {
  car_state robot;
  car_state human;
  std::optional<car_state> third_car;
};

// Two-phase rollout: MPC every tau steps until the robot has at least
// phase2_gap of longitudinal clearance to every car in the target lane, then
// the static lane-change controller toward the human's lane; terminates on
// completion, collision, or max_steps.  Pure in (config, forecaster, driver
// params, init, seed).
episode run_episode(const episode_config& cfg, const forecaster& fc,
                    const synthetic_driver_params& driver,
                    const initial_state& init, std::uint64_t seed);

double episode_mean_human_speed(const episode& ep);

struct init_ranges {
  double human_dy_min = -4.0, human_dy_max = 4.0;  // human ahead of robot, m
  double robot_v_min = 4.0, robot_v_max = 8.0;
  double human_v_min = 4.0, human_v_max = 8.0;
  double gray_gap_min = 4.0, gray_gap_max = 20.0;  // human ahead of gray, m
  double gray_v = 5.0;
  double lane_width = 3.7;
};

// Uniform draws over the configured relative ranges; robot at the origin of
// lane 0, human in the adjacent lane, gray car (lane_change only) in the
// human's lane trailing it.  Any draw with a pairwise car distance below 2 m
// (the collision radius) is rejected and redrawn, so inits start
// collision-free.
std::vector<initial_state> generate_initial_states(std::size_t n, scenario sc,
                                                   const init_ranges& r,
                                                   std::uint64_t seed);

// Episode step log: JSON Lines {t, world, controls, J}.
void save_episode(const std::string& path, const episode& ep);
episode load_episode(const std::string& path);

}  // namespace fedfleet::sim
