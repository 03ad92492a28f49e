#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedfleet/common.hpp"
#include "fedfleet/params.hpp"

namespace fedfleet::fl {

enum class scheme { local, cloud, sfl, spfl, apfl };

scheme scheme_from_string(const std::string& s);
std::string to_string(scheme s);

// A fleet member: private dataset plus task loss/gradient.  The federated
// engine only ever moves param_vectors across the client boundary — raw
// samples never reach the server by construction.
class client_model {
 public:
  virtual ~client_model() = default;

  virtual std::size_t train_size() const = 0;
  virtual std::size_t batch_count() const = 0;

  // Reshuffles the minibatch order for the coming epoch.
  virtual void begin_epoch(rng& r) = 0;

  // Mean gradient of the training objective over minibatch `batch`;
  // r supplies any stochasticity the objective needs (e.g. latent noise).
  virtual std::vector<double> gradient(const param_vector& p,
                                       std::size_t batch, rng& r) const = 0;

  virtual double train_loss(const param_vector& p) const = 0;
  virtual double test_loss(const param_vector& p) const = 0;
};

struct engine_config {
  scheme training_scheme = scheme::apfl;
  int rounds = 50;
  int epochs = 30;          // per personalization/contribution pass
  int standalone_epochs = 0;  // Local/Cloud budget; 0 = same as epochs
  double base_lr = 0.01;    // L
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double convergence_tol = 1e-5;
  std::uint64_t master_seed = 0;
  bool parallel = true;
};

struct server_state {
  param_vector global;
  sigma_vector sigma;
  lr_vector lr;           // per-group personalization rates
  double base_lr = 0.01;  // L
  int round = 0;
};

// Per-round diagnostics.  sigma_groups holds the per-group mean of the
// per-parameter dispersion (the full vector lives in server_state); lr is the
// personalization rate per group.
struct round_report {
  int round = 0;
  std::vector<double> train_loss;  // per client, on the personalized model
  std::vector<double> test_loss;   // per client, on the personalized model
  std::vector<double> sigma_groups;
  std::vector<double> lr;
};

std::string round_report_to_json(const round_report& r);
void save_round_reports(const std::string& path,
                        std::span<const round_report> reports);
std::vector<round_report> load_round_reports(const std::string& path);

// Train `epochs` epochs of minibatch Adam from `start` with fresh optimizer
// state and per-group rates.  The rng drives shuffling and any gradient
// stochasticity; it advances across calls, so pass a dedicated per-client
// stream.
param_vector train_pass(const param_vector& start, client_model& client,
                        const lr_vector& rates, int epochs,
                        const engine_config& cfg, rng& r);

// Reset to the global model, train with the personalization rates; the
// global model is untouched.
param_vector personalize(client_model& client, const param_vector& global,
                         const lr_vector& rates, int epochs,
                         const engine_config& cfg, rng& r);

// Reset to the global model, train with the uniform rate L; the result is
// what the client sends back for aggregation.
param_vector contribute(client_model& client, const param_vector& global,
                        int epochs, const engine_config& cfg, rng& r);

struct fleet_state {
  server_state server;
  std::vector<param_vector> personalized;  // one per client
  std::vector<rng> client_rngs;
};

fleet_state make_fleet_state(const param_vector& init, std::size_t n_clients,
                             const engine_config& cfg);

// One synchronized federated round (SFL / SPFL / APFL).  Clients may train in
// parallel between the dispatch and collection barriers; aggregation runs
// serially in client order, so reports are bit-identical across thread
// counts.
round_report run_round(fleet_state& state,
                       std::span<client_model* const> clients,
                       const engine_config& cfg);

struct scheme_result {
  std::vector<param_vector> personalized;  // final per-client models
  param_vector global;
  std::vector<round_report> history;
  int rounds_run = 0;
  bool converged = false;
};

// Full training per the scheme table: Local trains each client alone, Cloud
// trains one model on the pooled dataset (required for scheme::cloud),
// SFL/SPFL/APFL iterate run_round until max rounds or the personalized
// models stop moving (max relative change < convergence_tol).
scheme_result run_scheme(const engine_config& cfg, const param_vector& init,
                         std::span<client_model* const> clients,
                         client_model* pooled = nullptr);

}  // namespace fedfleet::fl
