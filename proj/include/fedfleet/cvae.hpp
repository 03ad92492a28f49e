#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedfleet/common.hpp"
#include "fedfleet/params.hpp"
#include "fedfleet/sim.hpp"

namespace fedfleet::cvae {

// Sequence-to-sequence conditional VAE over driver controls.  Encoder: gated
// recurrent cell (update + reset gates) over history ++ candidate ++ target,
// final hidden state mapped to mu / logvar.  Decoder: same cell rolled H
// steps, inputs (candidate control, context, z), linear head to a control
// pair.  Controls are normalized by their legal magnitudes inside the model;
// public outputs are in physical units.

struct cvae_config {
  int hidden = 32;
  int latent = 4;
  int window = 10;   // W history steps
  int horizon = 20;  // H predicted steps
  double beta_kl = 1.0;
  sim::scenario scene = sim::scenario::lane_swap;

  int feat_dim() const;    // per-history-step feature width
  int enc_input() const;   // feat_dim + 2 segment flags
  int dec_input() const;   // control pair + context + latent
};

// One supervised example anchored at a planning time: history strictly
// before the anchor (front-padded with the first record), candidate robot
// controls and target human controls from the anchor onward.
struct sequence_sample {
  std::vector<sim::step_record> history;  // length W
  std::vector<sim::control> candidate;    // length H
  std::vector<sim::control> target;       // length H
  int context = 0;
};

void validate_sample(const cvae_config& cfg, const sequence_sample& s);

// Normalized per-step encoder inputs (history features carry zero segment
// flags; candidate steps flag (1,0); target steps flag (0,1)).
std::vector<double> history_features(const cvae_config& cfg,
                                     const sim::step_record& rec);

// Layer-wise parameter grouping: one group per weight matrix / bias
// (24 groups), the unit the federated engine adapts learning rates over.
std::vector<group_spec> cvae_group_spec(const cvae_config& cfg);
param_vector init_cvae_params(const cvae_config& cfg, std::uint64_t seed,
                              double scale = 0.1);

struct latent_stats {
  std::vector<double> mu;
  std::vector<double> logvar;
};

latent_stats encode(const cvae_config& cfg, const param_vector& params,
                    const sequence_sample& s);

// z = mu + exp(logvar/2) * eps with eps ~ N(0, I) from the seeded stream.
// Entries with logvar <= -20 are treated as zero variance (z = mu exactly).
std::vector<double> reparameterize(std::span<const double> mu,
                                   std::span<const double> logvar,
                                   std::uint64_t seed);

// H real-valued (throttle, steering) pairs in physical units.
std::vector<std::array<double, 2>> decode(const cvae_config& cfg,
                                          const param_vector& params,
                                          std::span<const double> z,
                                          std::span<const sim::control> candidate,
                                          int context);

// Mean over the batch of reconstruction MSE (normalized control space,
// averaged over all H*2 entries) + beta_kl * KL(N(mu, sigma^2) || N(0, I)).
// Sample i draws its reparameterization noise from derive_seed(seed, i), so
// the value is independent of batch iteration order and matches elbo_grad.
double elbo_loss(const cvae_config& cfg, const param_vector& params,
                 std::span<const sequence_sample> batch, std::uint64_t seed);

struct loss_grad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Same objective through the reverse-mode tape; gradient over all parameter
// groups.  Per-sample work may fan out across threads; the result is
// accumulated in batch order and independent of thread count.
loss_grad elbo_grad(const cvae_config& cfg, const param_vector& params,
                    std::span<const sequence_sample> batch, std::uint64_t seed,
                    bool parallel = true);

// n prior-sampled decodes (z ~ N(0, I), sample i seeded by
// derive_seed(seed, i)); the sample's target is ignored.
std::vector<std::vector<std::array<double, 2>>> sample_predictions(
    const cvae_config& cfg, const param_vector& params,
    const sequence_sample& conditioning, int n, std::uint64_t seed);

// Forecast adapter for the MPC planner: builds a sequence_sample from the
// live episode trace (hold-padding the candidate to H) and prior-samples n
// control sequences.
class cvae_forecaster final : public sim::forecaster {
 public:
  cvae_forecaster(cvae_config cfg, param_vector params);

  std::vector<std::vector<sim::control>> sample(
      const sim::world_state& w, std::span<const sim::step_record> history,
      std::span<const sim::control> candidate, int horizon, int n,
      std::uint64_t seed) const override;

  const cvae_config& config() const { return cfg_; }
  const param_vector& params() const { return params_; }

 private:
  cvae_config cfg_;
  param_vector params_;
};

// Training-sample extraction: anchors at 0, stride, 2*stride, ... with a full
// H-step future inside the trace; history is the W records before the anchor.
std::vector<sequence_sample> extract_samples(const sim::episode& ep,
                                             const cvae_config& cfg,
                                             int stride, int context = 0);

// Checkpoints carry the architecture in the meta block and are validated on
// load.
void save_cvae_checkpoint(const std::string& path, const cvae_config& cfg,
                          const param_vector& params,
                          const adam_state* adam = nullptr);

struct cvae_checkpoint {
  cvae_config cfg;
  param_vector params;
};

cvae_checkpoint load_cvae_checkpoint(const std::string& path);

}  // namespace fedfleet::cvae
