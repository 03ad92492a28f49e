#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "fedfleet/cvae.hpp"
#include "fedfleet/fl.hpp"
#include "fedfleet/lqr.hpp"
#include "fedfleet/sim.hpp"

namespace fedfleet::tasks {

// ----------------------------------------------------------- linear task ---

// Minibatch client over expert transitions of one robot.
class lqr_client final : public fl::client_model {
 public:
  lqr_client(std::vector<lqr::transition> train,
             std::vector<lqr::transition> test, std::size_t batch_size);

  std::size_t train_size() const override { return train_.size(); }
  std::size_t batch_count() const override;
  void begin_epoch(rng& r) override;
  std::vector<double> gradient(const param_vector& p, std::size_t batch,
                               rng& r) const override;
  double train_loss(const param_vector& p) const override;
  double test_loss(const param_vector& p) const override;

  const std::vector<lqr::transition>& train_set() const { return train_; }
  const std::vector<lqr::transition>& test_set() const { return test_; }

 private:
  std::vector<lqr::transition> batch_view(std::size_t batch) const;

  std::vector<lqr::transition> train_;
  std::vector<lqr::transition> test_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
};

struct lqr_task_config {
  std::vector<double> r_costs{1.0, 50.0, 100.0};  // one robot per entry
  std::size_t rollouts = 40;
  std::size_t horizon = 30;
  double noise_var = 0.01;
  double test_fraction = 0.1;  // held-out rollouts (rollout-level split)
  std::size_t batch_size = 64;
  double init_range = 5.0;
  double init_scale = 0.1;  // model init U[-scale, scale]
};

struct lqr_fleet {
  std::vector<std::unique_ptr<lqr_client>> clients;
  std::unique_ptr<lqr_client> pooled;  // concatenated training data
  std::vector<lqr::dare_solution> truths;
  lqr::lin_system system;
};

// One client per R value: solve the Riccati equation for the expert gains,
// roll out noisy expert data, hold out the last test_fraction of rollouts.
lqr_fleet make_lqr_fleet(const lqr_task_config& cfg, std::uint64_t seed);

// ------------------------------------------------------- forecasting task ---

// Client over sequence samples; gradients carry latent-noise stochasticity
// seeded from the training stream, losses use a fixed evaluation seed so
// reported values are comparable across rounds.
class cvae_client final : public fl::client_model {
 public:
  cvae_client(cvae::cvae_config cfg, std::vector<cvae::sequence_sample> train,
              std::vector<cvae::sequence_sample> test, std::size_t batch_size,
              std::uint64_t eval_seed);

  std::size_t train_size() const override { return train_.size(); }
  std::size_t batch_count() const override;
  void begin_epoch(rng& r) override;
  std::vector<double> gradient(const param_vector& p, std::size_t batch,
                               rng& r) const override;
  double train_loss(const param_vector& p) const override;
  double test_loss(const param_vector& p) const override;

  const cvae::cvae_config& model_config() const { return cfg_; }
  const std::vector<cvae::sequence_sample>& test_set() const { return test_; }

 private:
  std::vector<cvae::sequence_sample> batch_view(std::size_t batch) const;

  cvae::cvae_config cfg_;
  std::vector<cvae::sequence_sample> train_;
  std::vector<cvae::sequence_sample> test_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::uint64_t eval_seed_;
};

struct driving_task_config {
  std::vector<double> gammas{-1.0, -0.5, 0.0, 0.5, 1.0};  // one driver each
  int train_sessions = 8;
  int test_sessions = 3;
  int session_max_steps = 60;
  cvae::cvae_config model;
  sim::mpc_config bootstrap_mpc;  // used with the naive forecaster
  sim::episode_config episode;
  sim::init_ranges ranges;
  sim::synthetic_driver_params driver;  // gamma overridden per client
  std::size_t batch_size = 8;
  double init_scale = 0.1;
};

struct driving_fleet {
  std::vector<std::unique_ptr<cvae_client>> clients;
  std::unique_ptr<cvae_client> pooled;
  std::vector<std::vector<sim::episode>> sessions;  // per driver, train+test
};

// Bootstrap data collection: each driver plays its sessions against the
// naive-forecast MPC; samples are extracted at the planning stride and split
// by session into train / held-out sets.
driving_fleet make_driving_fleet(const driving_task_config& cfg,
                                 std::uint64_t seed);

std::vector<fl::client_model*> client_ptrs(const lqr_fleet& fleet);
std::vector<fl::client_model*> client_ptrs(const driving_fleet& fleet);

}  // namespace fedfleet::tasks
