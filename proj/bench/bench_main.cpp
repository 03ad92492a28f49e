// Serial-reference vs OpenMP timing for the three hot kernels: a federated
// round, a CVAE batch gradient, and an MPC plan.  The parallel paths reduce
// in fixed order, so besides the speedup column this doubles as a check that
// both paths agree bit-for-bit.

#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fedfleet/cvae.hpp"
#include "fedfleet/fl.hpp"
#include "fedfleet/sim.hpp"
#include "fedfleet/tasks.hpp"

namespace ff = fedfleet;

namespace {

template <typename F>
double time_ms(F&& f, int reps) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void print_row(const std::string& name, double serial_ms, double parallel_ms,
               bool identical) {
  std::cout << std::left << std::setw(22) << name << std::right << std::fixed
            << std::setprecision(2) << std::setw(12) << serial_ms << std::setw(12)
            << parallel_ms << std::setw(10) << std::setprecision(2)
            << serial_ms / parallel_ms << std::setw(12)
            << (identical ? "yes" : "NO") << '\n';
}

bool same_values(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Synthetic trace long enough to mine training samples from; cheaper than
// running real episodes and good enough for timing.
ff::sim::episode fake_episode(int steps, std::uint64_t seed) {
  ff::rng r(seed);
  ff::sim::episode ep;
  ff::sim::world_state w;
  w.human.px = 3.7;
  w.robot.vy = 5.0;
  w.human.vy = 5.0;
  for (int t = 0; t < steps; ++t) {
    ff::sim::step_record rec;
    rec.t = t;
    rec.world = w;
    rec.controls.robot = {ff::sim::throttle_set[r.index(3)],
                          ff::sim::steering_set[r.index(3)]};
    rec.controls.human = {ff::sim::throttle_set[r.index(3)], 0.0};
    rec.cost = 0.0;
    ep.trace.push_back(rec);
    w = ff::sim::step(w, rec.controls);
  }
  return ep;
}

void bench_fl_round() {
  ff::tasks::lqr_task_config tcfg;
  tcfg.rollouts = 30;
  tcfg.horizon = 25;
  const auto fleet = ff::tasks::make_lqr_fleet(tcfg, 42);
  const auto clients = ff::tasks::client_ptrs(fleet);
  const auto init = ff::lqr::init_lqr_model(7, 0.1);

  ff::fl::engine_config cfg;
  cfg.training_scheme = ff::fl::scheme::apfl;
  cfg.epochs = 10;
  cfg.master_seed = 42;

  auto run_once = [&](bool parallel) {
    ff::fl::engine_config c = cfg;
    c.parallel = parallel;
    auto state = ff::fl::make_fleet_state(init, clients.size(), c);
    ff::fl::run_round(state, clients, c);
    return state.server.global.values;
  };

  const auto serial_out = run_once(false);
  const auto parallel_out = run_once(true);
  const double ts = time_ms([&] { run_once(false); }, 3);
  const double tp = time_ms([&] { run_once(true); }, 3);
  print_row("fl round (3 clients)", ts, tp, same_values(serial_out, parallel_out));
}

void bench_cvae_grad() {
  ff::cvae::cvae_config cfg;
  cfg.hidden = 16;
  cfg.latent = 2;
  cfg.window = 5;
  cfg.horizon = 8;
  const auto ep = fake_episode(80, 3);
  auto samples = ff::cvae::extract_samples(ep, cfg, 3);
  if (samples.size() > 16) samples.resize(16);
  const auto params = ff::cvae::init_cvae_params(cfg, 11);

  const auto serial_out = ff::cvae::elbo_grad(cfg, params, samples, 5, false);
  const auto parallel_out = ff::cvae::elbo_grad(cfg, params, samples, 5, true);
  const double ts =
      time_ms([&] { ff::cvae::elbo_grad(cfg, params, samples, 5, false); }, 3);
  const double tp =
      time_ms([&] { ff::cvae::elbo_grad(cfg, params, samples, 5, true); }, 3);
  print_row("cvae batch gradient", ts, tp,
            serial_out.loss == parallel_out.loss &&
                same_values(serial_out.grad, parallel_out.grad));
}

void bench_mpc_plan() {
  ff::sim::world_state w;
  w.human.px = 3.7;
  w.human.py = 2.0;
  w.robot.vy = 5.0;
  w.human.vy = 5.0;
  const ff::sim::naive_forecaster fc;
  ff::sim::mpc_config cfg;
  cfg.tau = 3;
  cfg.horizon = 10;
  cfg.n_samples = 3;

  auto run_once = [&](bool parallel) {
    ff::sim::mpc_config c = cfg;
    c.parallel = parallel;
    return ff::sim::mpc_plan(w, {}, fc, c, 99);
  };
  const auto serial_out = run_once(false);
  const auto parallel_out = run_once(true);
  const double ts = time_ms([&] { run_once(false); }, 3);
  const double tp = time_ms([&] { run_once(true); }, 3);
  print_row("mpc plan (729 cands)", ts, tp,
            serial_out.chosen_index == parallel_out.chosen_index &&
                serial_out.expected_cost == parallel_out.expected_cost);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::cout << "openmp threads: " << omp_get_max_threads() << "\n\n";
#else
  std::cout << "openmp: not enabled (parallel path falls back to serial)\n\n";
#endif
  std::cout << std::left << std::setw(22) << "kernel" << std::right
            << std::setw(12) << "serial ms" << std::setw(12) << "parallel ms"
            << std::setw(10) << "speedup" << std::setw(12) << "identical"
            << '\n';
  std::cout << std::string(68, '-') << '\n';
  bench_fl_round();
  bench_cvae_grad();
  bench_mpc_plan();
  return 0;
}
