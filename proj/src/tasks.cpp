#include "fedfleet/tasks.hpp"

#include <cmath>
#include <numeric>

namespace fedfleet::tasks {

// ----------------------------------------------------------- linear task ---

lqr_client::lqr_client(std::vector<lqr::transition> train,
                       std::vector<lqr::transition> test,
                       std::size_t batch_size)
    : train_(std::move(train)), test_(std::move(test)), batch_size_(batch_size) {
  if (train_.empty() || test_.empty())
    throw contract_error("lqr_client: train and test sets must be non-empty");
  if (batch_size_ == 0) throw contract_error("lqr_client: batch_size must be positive");
  order_.resize(train_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
}

std::size_t lqr_client::batch_count() const {
  return (train_.size() + batch_size_ - 1) / batch_size_;
}

void lqr_client::begin_epoch(rng& r) {
  // Re-derive from identity so batch order is a pure function of the rng
  // stream, not of whatever pass ran on this client before.
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  r.shuffle(order_);
}

std::vector<lqr::transition> lqr_client::batch_view(std::size_t batch) const {
  if (batch >= batch_count()) throw contract_error("lqr_client: batch out of range");
  const std::size_t lo = batch * batch_size_;
  const std::size_t hi = std::min(lo + batch_size_, train_.size());
  std::vector<lqr::transition> out;
  out.reserve(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) out.push_back(train_[order_[i]]);
  return out;
}

std::vector<double> lqr_client::gradient(const param_vector& p,
                                         std::size_t batch, rng& r) const {
  (void)r;  // the objective is deterministic given the batch
  return lqr::lqr_grad(p, batch_view(batch));
}

double lqr_client::train_loss(const param_vector& p) const {
  return lqr::lqr_loss(p, train_).total;
}

double lqr_client::test_loss(const param_vector& p) const {
  return lqr::lqr_loss(p, test_).total;
}

lqr_fleet make_lqr_fleet(const lqr_task_config& cfg, std::uint64_t seed) {
  if (cfg.r_costs.empty()) throw config_error("make_lqr_fleet: no robots configured");
  if (!(cfg.test_fraction > 0.0) || cfg.test_fraction >= 1.0)
    throw config_error("make_lqr_fleet: test_fraction must lie in (0, 1)");
  const std::size_t test_rollouts = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(
             cfg.test_fraction * static_cast<double>(cfg.rollouts))));
  if (test_rollouts >= cfg.rollouts)
    throw config_error("make_lqr_fleet: test split leaves no training data");

  lqr_fleet fleet;
  std::vector<lqr::transition> pooled_train;
  std::vector<lqr::transition> pooled_test;
  for (std::size_t k = 0; k < cfg.r_costs.size(); ++k) {
    lqr::lqr_cost cost;
    cost.r = cfg.r_costs[k];
    const auto sol = lqr::solve_dare(fleet.system, cost);
    auto data = lqr::generate_rollouts(fleet.system, sol.k, cfg.rollouts,
                                       cfg.horizon, cfg.noise_var,
                                       derive_seed(seed, 10 + k),
                                       static_cast<int>(k), cfg.init_range);
    // Rollout-level split: the last `test_rollouts` rollouts are held out
    // (rollouts are iid, so position carries no information).
    const std::size_t cut = (cfg.rollouts - test_rollouts) * cfg.horizon;
    std::vector<lqr::transition> train(data.begin(),
                                       data.begin() + static_cast<long>(cut));
    std::vector<lqr::transition> test(data.begin() + static_cast<long>(cut),
                                      data.end());
    pooled_train.insert(pooled_train.end(), train.begin(), train.end());
    pooled_test.insert(pooled_test.end(), test.begin(), test.end());
    fleet.clients.push_back(std::make_unique<lqr_client>(
        std::move(train), std::move(test), cfg.batch_size));
    fleet.truths.push_back(sol);
  }
  fleet.pooled = std::make_unique<lqr_client>(
      std::move(pooled_train), std::move(pooled_test), cfg.batch_size);
  return fleet;
}

// ------------------------------------------------------- forecasting task ---

cvae_client::cvae_client(cvae::cvae_config cfg,
                         std::vector<cvae::sequence_sample> train,
                         std::vector<cvae::sequence_sample> test,
                         std::size_t batch_size, std::uint64_t eval_seed)
    : cfg_(cfg),
      train_(std::move(train)),
      test_(std::move(test)),
      batch_size_(batch_size),
      eval_seed_(eval_seed) {
  if (train_.empty() || test_.empty())
    throw contract_error("cvae_client: train and test sets must be non-empty");
  if (batch_size_ == 0) throw contract_error("cvae_client: batch_size must be positive");
  order_.resize(train_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
}

std::size_t cvae_client::batch_count() const {
  return (train_.size() + batch_size_ - 1) / batch_size_;
}

void cvae_client::begin_epoch(rng& r) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  r.shuffle(order_);
}

std::vector<cvae::sequence_sample> cvae_client::batch_view(
    std::size_t batch) const {
  if (batch >= batch_count()) throw contract_error("cvae_client: batch out of range");
  const std::size_t lo = batch * batch_size_;
  const std::size_t hi = std::min(lo + batch_size_, train_.size());
  std::vector<cvae::sequence_sample> out;
  out.reserve(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) out.push_back(train_[order_[i]]);
  return out;
}

std::vector<double> cvae_client::gradient(const param_vector& p,
                                          std::size_t batch, rng& r) const {
  const std::uint64_t noise_seed = r.next_u64();
  return cvae::elbo_grad(cfg_, p, batch_view(batch), noise_seed).grad;
}

double cvae_client::train_loss(const param_vector& p) const {
  return cvae::elbo_loss(cfg_, p, train_, eval_seed_);
}

double cvae_client::test_loss(const param_vector& p) const {
  return cvae::elbo_loss(cfg_, p, test_, derive_seed(eval_seed_, 1));
}

driving_fleet make_driving_fleet(const driving_task_config& cfg,
                                 std::uint64_t seed) {
  if (cfg.gammas.empty()) throw config_error("make_driving_fleet: no drivers configured");
  if (cfg.train_sessions < 1 || cfg.test_sessions < 1)
    throw config_error("make_driving_fleet: need at least one train and one test session");
  if (cfg.model.scene != cfg.episode.scene)
    throw config_error("make_driving_fleet: model and episode scenario disagree");

  const int total_sessions = cfg.train_sessions + cfg.test_sessions;
  sim::episode_config epcfg = cfg.episode;
  epcfg.mpc = cfg.bootstrap_mpc;
  epcfg.max_steps = cfg.session_max_steps;
  const sim::naive_forecaster naive;

  driving_fleet fleet;
  std::vector<cvae::sequence_sample> pooled_train;
  std::vector<cvae::sequence_sample> pooled_test;
  for (std::size_t k = 0; k < cfg.gammas.size(); ++k) {
    sim::synthetic_driver_params driver = cfg.driver;
    driver.gamma = cfg.gammas[k];
    const std::uint64_t driver_seed = derive_seed(seed, 10 + k);
    const auto inits = sim::generate_initial_states(
        static_cast<std::size_t>(total_sessions), epcfg.scene, cfg.ranges,
        driver_seed);

    std::vector<sim::episode> sessions;
    std::vector<cvae::sequence_sample> train, test;
    for (int s = 0; s < total_sessions; ++s) {
      const auto ep =
          sim::run_episode(epcfg, naive, driver,
                           inits[static_cast<std::size_t>(s)],
                           derive_seed(driver_seed, 100 + s));
      auto samples = cvae::extract_samples(ep, cfg.model, cfg.bootstrap_mpc.tau);
      auto& sink = s < cfg.train_sessions ? train : test;
      sink.insert(sink.end(), samples.begin(), samples.end());
      sessions.push_back(ep);
    }
    if (train.empty() || test.empty())
      throw config_error(
          "make_driving_fleet: sessions too short to extract samples "
          "(horizon exceeds session length?)");
    pooled_train.insert(pooled_train.end(), train.begin(), train.end());
    pooled_test.insert(pooled_test.end(), test.begin(), test.end());
    fleet.clients.push_back(std::make_unique<cvae_client>(
        cfg.model, std::move(train), std::move(test), cfg.batch_size,
        derive_seed(seed, 500 + k)));
    fleet.sessions.push_back(std::move(sessions));
  }
  fleet.pooled = std::make_unique<cvae_client>(
      cfg.model, std::move(pooled_train), std::move(pooled_test),
      cfg.batch_size, derive_seed(seed, 499));
  return fleet;
}

std::vector<fl::client_model*> client_ptrs(const lqr_fleet& fleet) {
  std::vector<fl::client_model*> out;
  for (const auto& c : fleet.clients) out.push_back(c.get());
  return out;
}

std::vector<fl::client_model*> client_ptrs(const driving_fleet& fleet) {
  std::vector<fl::client_model*> out;
  for (const auto& c : fleet.clients) out.push_back(c.get());
  return out;
}

}  // namespace fedfleet::tasks
