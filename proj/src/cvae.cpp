#include "fedfleet/cvae.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fedfleet/autodiff.hpp"
#include "json.hpp"

namespace fedfleet::cvae {

using json = nlohmann::ordered_json;

namespace {

// Normalization: controls by their legal magnitudes, positions/velocities by
// a 10 m / 10 m/s scale typical of the scenarios.
constexpr double k_thr_scale = 1.5;
constexpr double k_steer_scale = 0.04;
constexpr double k_pos_scale = 10.0;
constexpr double k_vel_scale = 10.0;

double norm_thr(double t) { return t / k_thr_scale; }
double norm_steer(double s) { return s / k_steer_scale; }

}  // namespace

int cvae_config::feat_dim() const {
  return scene == sim::scenario::lane_change ? 14 : 10;
}

int cvae_config::enc_input() const { return feat_dim() + 2; }

int cvae_config::dec_input() const { return 3 + latent; }

std::vector<double> history_features(const cvae_config& cfg,
                                     const sim::step_record& rec) {
  const auto& w = rec.world;
  std::vector<double> f;
  f.reserve(static_cast<std::size_t>(cfg.feat_dim()));
  f.push_back((w.human.px - w.robot.px) / k_pos_scale);
  f.push_back((w.human.py - w.robot.py) / k_pos_scale);
  f.push_back(w.robot.vx / k_vel_scale);
  f.push_back(w.robot.vy / k_vel_scale);
  f.push_back(w.human.vx / k_vel_scale);
  f.push_back(w.human.vy / k_vel_scale);
  f.push_back(norm_thr(rec.controls.robot.throttle));
  f.push_back(norm_steer(rec.controls.robot.steering));
  f.push_back(norm_thr(rec.controls.human.throttle));
  f.push_back(norm_steer(rec.controls.human.steering));
  if (cfg.scene == sim::scenario::lane_change) {
    if (!w.third_car)
      throw contract_error("history_features: lane-change record lacks the gray car");
    f.push_back((w.third_car->px - w.robot.px) / k_pos_scale);
    f.push_back((w.third_car->py - w.robot.py) / k_pos_scale);
    f.push_back(w.third_car->vx / k_vel_scale);
    f.push_back(w.third_car->vy / k_vel_scale);
  }
  return f;
}

void validate_sample(const cvae_config& cfg, const sequence_sample& s) {
  if (s.history.size() != static_cast<std::size_t>(cfg.window))
    throw contract_error("sequence_sample: history length != window");
  if (s.candidate.size() != static_cast<std::size_t>(cfg.horizon) ||
      s.target.size() != static_cast<std::size_t>(cfg.horizon))
    throw contract_error("sequence_sample: candidate/target length != horizon");
  for (const auto& c : s.candidate)
    if (!sim::is_legal(c)) throw contract_error("sequence_sample: illegal candidate control");
  for (const auto& c : s.target)
    if (!sim::is_legal(c)) throw contract_error("sequence_sample: illegal target control");
  if (cfg.scene == sim::scenario::lane_change) {
    for (const auto& rec : s.history)
      if (!rec.world.third_car)
        throw contract_error("sequence_sample: lane-change history lacks the gray car");
  }
}

std::vector<group_spec> cvae_group_spec(const cvae_config& cfg) {
  const std::size_t h = static_cast<std::size_t>(cfg.hidden);
  const std::size_t l = static_cast<std::size_t>(cfg.latent);
  const std::size_t de = static_cast<std::size_t>(cfg.enc_input());
  const std::size_t dd = static_cast<std::size_t>(cfg.dec_input());
  std::vector<group_spec> spec;
  auto gru = [&](const std::string& prefix, std::size_t in) {
    for (const char* gate : {"z", "r", "h"}) {
      spec.push_back({prefix + "." + gate + ".w", h * in});
      spec.push_back({prefix + "." + gate + ".u", h * h});
      spec.push_back({prefix + "." + gate + ".b", h});
    }
  };
  gru("enc", de);
  spec.push_back({"mu.w", l * h});
  spec.push_back({"mu.b", l});
  spec.push_back({"logvar.w", l * h});
  spec.push_back({"logvar.b", l});
  gru("dec", dd);
  spec.push_back({"out.w", 2 * h});
  spec.push_back({"out.b", 2});
  return spec;
}

param_vector init_cvae_params(const cvae_config& cfg, std::uint64_t seed,
                              double scale) {
  if (cfg.hidden < 1 || cfg.latent < 1 || cfg.window < 1 || cfg.horizon < 1)
    throw contract_error("cvae_config: all dimensions must be positive");
  return init_params(cvae_group_spec(cfg), seed, scale);
}

namespace {

struct gru_weights {
  std::span<const double> wz, uz, bz, wr, ur, br, wh, uh, bh;
};

gru_weights gru_view(const param_vector& p, const std::string& prefix) {
  gru_weights g;
  g.wz = p.group_span(prefix + ".z.w");
  g.uz = p.group_span(prefix + ".z.u");
  g.bz = p.group_span(prefix + ".z.b");
  g.wr = p.group_span(prefix + ".r.w");
  g.ur = p.group_span(prefix + ".r.u");
  g.br = p.group_span(prefix + ".r.b");
  g.wh = p.group_span(prefix + ".h.w");
  g.uh = p.group_span(prefix + ".h.u");
  g.bh = p.group_span(prefix + ".h.b");
  return g;
}

double row_dot(std::span<const double> w, std::size_t row, std::size_t cols,
               std::span<const double> x) {
  double acc = 0.0;
  for (std::size_t c = 0; c < cols; ++c) acc += w[row * cols + c] * x[c];
  return acc;
}

// Plain-forward gated recurrent step.  Arithmetic order deliberately mirrors
// the tape version so the two stay numerically interchangeable.
std::vector<double> gru_step(const gru_weights& g, std::span<const double> x,
                             std::span<const double> h, std::size_t hidden) {
  const std::size_t in = x.size();
  std::vector<double> z(hidden), r(hidden), ht(hidden), hn(hidden);
  for (std::size_t i = 0; i < hidden; ++i) {
    double pre = row_dot(g.wz, i, in, x) + row_dot(g.uz, i, hidden, h);
    pre = pre + g.bz[i];
    z[i] = 1.0 / (1.0 + std::exp(-pre));
  }
  for (std::size_t i = 0; i < hidden; ++i) {
    double pre = row_dot(g.wr, i, in, x) + row_dot(g.ur, i, hidden, h);
    pre = pre + g.br[i];
    r[i] = 1.0 / (1.0 + std::exp(-pre));
  }
  std::vector<double> rh(hidden);
  for (std::size_t i = 0; i < hidden; ++i) rh[i] = r[i] * h[i];
  for (std::size_t i = 0; i < hidden; ++i) {
    double pre = row_dot(g.wh, i, in, x) + row_dot(g.uh, i, hidden, rh);
    pre = pre + g.bh[i];
    ht[i] = std::tanh(pre);
  }
  for (std::size_t i = 0; i < hidden; ++i)
    hn[i] = (1.0 - z[i]) * h[i] + z[i] * ht[i];
  return hn;
}

// Encoder input sequence: history || candidate || target, each row
// enc_input() wide.  Control rows occupy the first two slots and set a
// segment flag; history rows get flag (0, 0).
std::vector<std::vector<double>> encoder_inputs(const cvae_config& cfg,
                                                const sequence_sample& s) {
  const std::size_t de = static_cast<std::size_t>(cfg.enc_input());
  std::vector<std::vector<double>> rows;
  rows.reserve(s.history.size() + s.candidate.size() + s.target.size());
  for (const auto& rec : s.history) {
    std::vector<double> row = history_features(cfg, rec);
    row.resize(de, 0.0);  // two zero flags
    rows.push_back(std::move(row));
  }
  for (const auto& c : s.candidate) {
    std::vector<double> row(de, 0.0);
    row[0] = norm_thr(c.throttle);
    row[1] = norm_steer(c.steering);
    row[de - 2] = 1.0;
    rows.push_back(std::move(row));
  }
  for (const auto& c : s.target) {
    std::vector<double> row(de, 0.0);
    row[0] = norm_thr(c.throttle);
    row[1] = norm_steer(c.steering);
    row[de - 1] = 1.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> decoder_input(const cvae_config& cfg,
                                  const sim::control& cand, int context,
                                  std::span<const double> z) {
  std::vector<double> row;
  row.reserve(static_cast<std::size_t>(cfg.dec_input()));
  row.push_back(norm_thr(cand.throttle));
  row.push_back(norm_steer(cand.steering));
  row.push_back(static_cast<double>(context));
  row.insert(row.end(), z.begin(), z.end());
  return row;
}

}  // namespace

latent_stats encode(const cvae_config& cfg, const param_vector& params,
                    const sequence_sample& s) {
  validate_sample(cfg, s);
  const std::size_t hidden = static_cast<std::size_t>(cfg.hidden);
  const gru_weights enc = gru_view(params, "enc");
  std::vector<double> h(hidden, 0.0);
  for (const auto& row : encoder_inputs(cfg, s)) h = gru_step(enc, row, h, hidden);

  const std::size_t lat = static_cast<std::size_t>(cfg.latent);
  const auto wmu = params.group_span("mu.w");
  const auto bmu = params.group_span("mu.b");
  const auto wlv = params.group_span("logvar.w");
  const auto blv = params.group_span("logvar.b");
  latent_stats out;
  out.mu.resize(lat);
  out.logvar.resize(lat);
  for (std::size_t i = 0; i < lat; ++i)
    out.mu[i] = row_dot(wmu, i, hidden, h) + bmu[i];
  for (std::size_t i = 0; i < lat; ++i)
    out.logvar[i] = row_dot(wlv, i, hidden, h) + blv[i];
  return out;
}

std::vector<double> reparameterize(std::span<const double> mu,
                                   std::span<const double> logvar,
                                   std::uint64_t seed) {
  if (mu.size() != logvar.size())
    throw contract_error("reparameterize: mu/logvar size mismatch");
  rng r(seed);
  std::vector<double> z(mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double eps = r.gaussian();
    // logvar <= -20 is the documented zero-variance clamp.
    const double stddev = logvar[i] <= -20.0 ? 0.0 : std::exp(0.5 * logvar[i]);
    z[i] = mu[i] + stddev * eps;
  }
  return z;
}

std::vector<std::array<double, 2>> decode(const cvae_config& cfg,
                                          const param_vector& params,
                                          std::span<const double> z,
                                          std::span<const sim::control> candidate,
                                          int context) {
  if (z.size() != static_cast<std::size_t>(cfg.latent))
    throw contract_error("decode: z dimension != configured latent size");
  if (candidate.empty()) throw contract_error("decode: empty candidate");

  const std::size_t hidden = static_cast<std::size_t>(cfg.hidden);
  const gru_weights dec = gru_view(params, "dec");
  const auto wo = params.group_span("out.w");
  const auto bo = params.group_span("out.b");

  std::vector<double> h(hidden, 0.0);
  std::vector<std::array<double, 2>> out;
  out.reserve(static_cast<std::size_t>(cfg.horizon));
  for (int t = 0; t < cfg.horizon; ++t) {
    const std::size_t ci =
        std::min(static_cast<std::size_t>(t), candidate.size() - 1);
    h = gru_step(dec, decoder_input(cfg, candidate[ci], context, z), h, hidden);
    const double o0 = row_dot(wo, 0, hidden, h) + bo[0];
    const double o1 = row_dot(wo, 1, hidden, h) + bo[1];
    out.push_back({o0 * k_thr_scale, o1 * k_steer_scale});
  }
  return out;
}

namespace {

// Forward pass of the per-sample ELBO, mirroring the tape graph.
double sample_elbo(const cvae_config& cfg, const param_vector& params,
                   const sequence_sample& s, std::uint64_t eps_seed) {
  const std::size_t hidden = static_cast<std::size_t>(cfg.hidden);
  const std::size_t lat = static_cast<std::size_t>(cfg.latent);

  const latent_stats ls = encode(cfg, params, s);

  rng r(eps_seed);
  std::vector<double> z(lat);
  for (std::size_t i = 0; i < lat; ++i) {
    const double eps = r.gaussian();
    z[i] = ls.mu[i] + std::exp(0.5 * ls.logvar[i]) * eps;
  }

  const gru_weights dec = gru_view(params, "dec");
  const auto wo = params.group_span("out.w");
  const auto bo = params.group_span("out.b");
  std::vector<double> h(hidden, 0.0);
  double recon_acc = 0.0;
  for (int t = 0; t < cfg.horizon; ++t) {
    h = gru_step(dec, decoder_input(cfg, s.candidate[static_cast<std::size_t>(t)],
                                    s.context, z),
                 h, hidden);
    const double o0 = row_dot(wo, 0, hidden, h) + bo[0];
    const double o1 = row_dot(wo, 1, hidden, h) + bo[1];
    const double d0 = o0 - norm_thr(s.target[static_cast<std::size_t>(t)].throttle);
    const double d1 = o1 - norm_steer(s.target[static_cast<std::size_t>(t)].steering);
    recon_acc += d0 * d0 + d1 * d1;
  }
  const double recon =
      recon_acc * (1.0 / (2.0 * static_cast<double>(cfg.horizon)));

  double kl_acc = 0.0;
  for (std::size_t i = 0; i < lat; ++i)
    kl_acc += (std::exp(ls.logvar[i]) + ls.mu[i] * ls.mu[i]) - (1.0 + ls.logvar[i]);
  const double kl = cfg.beta_kl * 0.5 * kl_acc;
  return recon + kl;
}

struct cvae_tape_vars {
  ad::var loss;
  std::vector<ad::var> weights;  // one leaf per group, group order
};

// Tape version of sample_elbo; one differentiable leaf per parameter group.
cvae_tape_vars build_sample_graph(ad::tape& tp, const cvae_config& cfg,
                                  const param_vector& params,
                                  const sequence_sample& s,
                                  std::uint64_t eps_seed) {
  const std::size_t hidden = static_cast<std::size_t>(cfg.hidden);
  const std::size_t lat = static_cast<std::size_t>(cfg.latent);
  const std::size_t de = static_cast<std::size_t>(cfg.enc_input());
  const std::size_t dd = static_cast<std::size_t>(cfg.dec_input());

  cvae_tape_vars out;
  out.weights.reserve(params.group_count());
  for (std::size_t g = 0; g < params.group_count(); ++g)
    out.weights.push_back(tp.leaf(params.group_span(g)));
  auto wv = [&](const std::string& name) {
    return out.weights[params.group_index(name)];
  };

  const std::vector<double> zero_h(hidden, 0.0);
  const std::vector<double> ones_h(hidden, 1.0);
  const ad::var ones_h_c = tp.constant(ones_h);

  auto gru_tape_step = [&](const std::string& prefix, std::size_t in,
                           ad::var x, ad::var h) {
    const ad::var z = tp.sigmoid(tp.add(
        tp.add(tp.matvec(wv(prefix + ".z.w"), hidden, in, x),
               tp.matvec(wv(prefix + ".z.u"), hidden, hidden, h)),
        wv(prefix + ".z.b")));
    const ad::var r = tp.sigmoid(tp.add(
        tp.add(tp.matvec(wv(prefix + ".r.w"), hidden, in, x),
               tp.matvec(wv(prefix + ".r.u"), hidden, hidden, h)),
        wv(prefix + ".r.b")));
    const ad::var ht = tp.tanh(tp.add(
        tp.add(tp.matvec(wv(prefix + ".h.w"), hidden, in, x),
               tp.matvec(wv(prefix + ".h.u"), hidden, hidden, tp.mul(r, h))),
        wv(prefix + ".h.b")));
    return tp.add(tp.mul(tp.sub(ones_h_c, z), h), tp.mul(z, ht));
  };

  ad::var h = tp.constant(zero_h);
  for (const auto& row : encoder_inputs(cfg, s))
    h = gru_tape_step("enc", de, tp.constant(row), h);

  const ad::var mu =
      tp.add(tp.matvec(wv("mu.w"), lat, hidden, h), wv("mu.b"));
  const ad::var lv =
      tp.add(tp.matvec(wv("logvar.w"), lat, hidden, h), wv("logvar.b"));

  rng r(eps_seed);
  std::vector<double> eps(lat);
  for (double& e : eps) e = r.gaussian();
  const std::vector<double> half(lat, 0.5);
  const ad::var z = tp.add(
      mu, tp.mul(tp.exp(tp.mul(tp.constant(half), lv)), tp.constant(eps)));

  ad::var hd = tp.constant(zero_h);
  ad::var recon_acc{};
  bool first = true;
  for (int t = 0; t < cfg.horizon; ++t) {
    const std::vector<double> prefix_in{
        norm_thr(s.candidate[static_cast<std::size_t>(t)].throttle),
        norm_steer(s.candidate[static_cast<std::size_t>(t)].steering),
        static_cast<double>(s.context)};
    const std::array<ad::var, 2> parts{tp.constant(prefix_in), z};
    hd = gru_tape_step("dec", dd, tp.concat(parts), hd);
    const ad::var o = tp.add(tp.matvec(wv("out.w"), 2, hidden, hd), wv("out.b"));
    const std::vector<double> tgt{
        norm_thr(s.target[static_cast<std::size_t>(t)].throttle),
        norm_steer(s.target[static_cast<std::size_t>(t)].steering)};
    const ad::var sq = tp.sum(tp.square(tp.sub(o, tp.constant(tgt))));
    recon_acc = first ? sq : tp.add(recon_acc, sq);
    first = false;
  }
  const ad::var recon = tp.mul(
      tp.constant(1.0 / (2.0 * static_cast<double>(cfg.horizon))), recon_acc);

  const std::vector<double> ones_l(lat, 1.0);
  const ad::var klvec = tp.sub(tp.add(tp.exp(lv), tp.square(mu)),
                               tp.add(tp.constant(ones_l), lv));
  const ad::var kl = tp.mul(tp.constant(cfg.beta_kl * 0.5), tp.sum(klvec));
  out.loss = tp.add(recon, kl);
  return out;
}

}  // namespace

double elbo_loss(const cvae_config& cfg, const param_vector& params,
                 std::span<const sequence_sample> batch, std::uint64_t seed) {
  if (batch.empty()) throw contract_error("elbo_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    acc += sample_elbo(cfg, params, batch[i], derive_seed(seed, i));
  const double loss = acc / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw numeric_error("elbo_loss: non-finite loss");
  return loss;
}

loss_grad elbo_grad(const cvae_config& cfg, const param_vector& params,
                    std::span<const sequence_sample> batch, std::uint64_t seed,
                    bool parallel) {
  if (batch.empty()) throw contract_error("elbo_grad: empty batch");
  const std::size_t b = batch.size();
  std::vector<double> losses(b, 0.0);
  std::vector<std::vector<double>> grads(b);
  std::exception_ptr failure;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
  for (long long i = 0; i < static_cast<long long>(b); ++i) {
    try {
      const std::size_t si = static_cast<std::size_t>(i);
      ad::tape tp;
      const cvae_tape_vars g =
          build_sample_graph(tp, cfg, params, batch[si], derive_seed(seed, si));
      losses[si] = tp.scalar(g.loss);
      const auto table = tp.backward(g.loss);
      std::vector<double> flat(params.size(), 0.0);
      for (std::size_t gi = 0; gi < params.group_count(); ++gi) {
        const auto& gg = table[static_cast<std::size_t>(g.weights[gi].id)];
        const auto& grp = params.groups[gi];
        for (std::size_t k = 0; k < grp.size; ++k)
          flat[grp.offset + k] = gg[k];
      }
      grads[si] = std::move(flat);
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

  // Batch-order reduction: result independent of thread scheduling.
  loss_grad out;
  out.grad.assign(params.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    acc += losses[i];
    for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += grads[i][k];
  }
  const double inv = 1.0 / static_cast<double>(b);
  out.loss = acc * inv;
  for (double& gv : out.grad) gv *= inv;
  if (!std::isfinite(out.loss) || !all_finite(out.grad))
    throw numeric_error("elbo_grad: non-finite result");
  return out;
}

std::vector<std::vector<std::array<double, 2>>> sample_predictions(
    const cvae_config& cfg, const param_vector& params,
    const sequence_sample& conditioning, int n, std::uint64_t seed) {
  if (n < 1) throw contract_error("sample_predictions: n must be >= 1");
  validate_sample(cfg, conditioning);
  std::vector<std::vector<std::array<double, 2>>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    rng r(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::vector<double> z(static_cast<std::size_t>(cfg.latent));
    for (double& zi : z) zi = r.gaussian();  // prior draw
    out.push_back(decode(cfg, params, z, conditioning.candidate,
                         conditioning.context));
  }
  return out;
}

cvae_forecaster::cvae_forecaster(cvae_config cfg, param_vector params)
    : cfg_(cfg), params_(std::move(params)) {
  const auto spec = cvae_group_spec(cfg_);
  const param_vector want = make_param_vector(spec);
  if (!same_layout(want, params_))
    throw contract_error("cvae_forecaster: params do not match the architecture");
}

std::vector<std::vector<sim::control>> cvae_forecaster::sample(
    const sim::world_state& w, std::span<const sim::step_record> history,
    std::span<const sim::control> candidate, int horizon, int n,
    std::uint64_t seed) const {
  if (n < 1) throw contract_error("forecaster: n must be >= 1");
  if (candidate.empty()) throw contract_error("forecaster: empty candidate");
  (void)horizon;  // the planner holds our last control past cfg_.horizon

  sequence_sample s;
  s.history.reserve(static_cast<std::size_t>(cfg_.window));
  if (history.empty()) {
    // Episode start: condition on the initial state at rest.
    sim::step_record rec;
    rec.t = w.t;
    rec.world = w;
    s.history.assign(static_cast<std::size_t>(cfg_.window), rec);
  } else {
    const std::size_t want = static_cast<std::size_t>(cfg_.window);
    const std::size_t have = history.size();
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t idx = have >= want ? have - want + i
                                           : (i < want - have ? 0 : i - (want - have));
      s.history.push_back(history[idx]);
    }
  }
  for (int t = 0; t < cfg_.horizon; ++t) {
    const std::size_t ci =
        std::min(static_cast<std::size_t>(t), candidate.size() - 1);
    s.candidate.push_back(candidate[ci]);
  }
  s.target.assign(static_cast<std::size_t>(cfg_.horizon), sim::control{});

  const auto preds = sample_predictions(cfg_, params_, s, n, seed);
  std::vector<std::vector<sim::control>> out;
  out.reserve(preds.size());
  for (const auto& seq : preds) {
    std::vector<sim::control> ctrls;
    ctrls.reserve(seq.size());
    for (const auto& p : seq) ctrls.push_back(sim::control{p[0], p[1]});
    out.push_back(std::move(ctrls));
  }
  return out;
}

std::vector<sequence_sample> extract_samples(const sim::episode& ep,
                                             const cvae_config& cfg,
                                             int stride, int context) {
  if (stride < 1) throw contract_error("extract_samples: stride must be >= 1");
  const std::size_t len = ep.trace.size();
  const std::size_t h = static_cast<std::size_t>(cfg.horizon);
  const std::size_t w = static_cast<std::size_t>(cfg.window);
  std::vector<sequence_sample> out;
  if (len < h) return out;
  for (std::size_t a = 0; a + h <= len; a += static_cast<std::size_t>(stride)) {
    sequence_sample s;
    s.context = context;
    for (std::size_t i = 0; i < w; ++i) {
      // History is the w records before the anchor, front-padded with the
      // first record when the episode is younger than the window.
      const std::size_t back = w - i;  // how far before the anchor
      s.history.push_back(a >= back ? ep.trace[a - back] : ep.trace[0]);
    }
    for (std::size_t t = 0; t < h; ++t) {
      s.candidate.push_back(ep.trace[a + t].controls.robot);
      s.target.push_back(ep.trace[a + t].controls.human);
    }
    validate_sample(cfg, s);
    out.push_back(std::move(s));
  }
  return out;
}

void save_cvae_checkpoint(const std::string& path, const cvae_config& cfg,
                          const param_vector& params, const adam_state* adam) {
  json arch;
  arch["hidden"] = cfg.hidden;
  arch["latent"] = cfg.latent;
  arch["window"] = cfg.window;
  arch["horizon"] = cfg.horizon;
  arch["beta_kl"] = cfg.beta_kl;
  arch["scenario"] = sim::to_string(cfg.scene);
  json meta;
  meta["arch"] = arch;
  save_checkpoint(path, params, adam, meta.dump());
}

cvae_checkpoint load_cvae_checkpoint(const std::string& path) {
  const checkpoint raw = load_checkpoint(path);
  json meta;
  try {
    meta = json::parse(raw.meta_json);
  } catch (const std::exception& e) {
    throw io_error(std::string("load_cvae_checkpoint: bad meta: ") + e.what());
  }
  if (!meta.contains("arch"))
    throw io_error("load_cvae_checkpoint: checkpoint has no architecture descriptor");
  const json& arch = meta.at("arch");
  cvae_checkpoint out;
  out.cfg.hidden = arch.at("hidden").get<int>();
  out.cfg.latent = arch.at("latent").get<int>();
  out.cfg.window = arch.at("window").get<int>();
  out.cfg.horizon = arch.at("horizon").get<int>();
  out.cfg.beta_kl = arch.at("beta_kl").get<double>();
  out.cfg.scene = sim::scenario_from_string(arch.at("scenario").get<std::string>());
  const param_vector want = make_param_vector(cvae_group_spec(out.cfg));
  if (!same_layout(want, raw.params))
    throw io_error("load_cvae_checkpoint: parameter layout does not match architecture");
  out.params = raw.params;
  return out;
}

}  // namespace fedfleet::cvae
