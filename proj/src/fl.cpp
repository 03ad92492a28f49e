#include "fedfleet/fl.hpp"

#include <cmath>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"

namespace fedfleet::fl {

using json = nlohmann::ordered_json;

scheme scheme_from_string(const std::string& s) {
  if (s == "local") return scheme::local;
  if (s == "cloud") return scheme::cloud;
  if (s == "sfl") return scheme::sfl;
  if (s == "spfl") return scheme::spfl;
  if (s == "apfl") return scheme::apfl;
  throw config_error("unknown training scheme '" + s + "'");
}

std::string to_string(scheme s) {
  switch (s) {
    case scheme::local: return "local";
    case scheme::cloud: return "cloud";
    case scheme::sfl: return "sfl";
    case scheme::spfl: return "spfl";
    case scheme::apfl: return "apfl";
  }
  throw contract_error("to_string: bad scheme value");
}

std::string round_report_to_json(const round_report& r) {
  json j;
  j["round"] = r.round;
  j["train_loss"] = r.train_loss;
  j["test_loss"] = r.test_loss;
  j["sigma_groups"] = r.sigma_groups;
  j["lr"] = r.lr;
  return j.dump();
}

void save_round_reports(const std::string& path,
                        std::span<const round_report> reports) {
  std::ofstream out(path);
  if (!out) throw io_error("save_round_reports: cannot open '" + path + "'");
  for (const auto& r : reports) out << round_report_to_json(r) << "\n";
  if (!out) throw io_error("save_round_reports: write failed for '" + path + "'");
}

std::vector<round_report> load_round_reports(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_round_reports: cannot open '" + path + "'");
  std::vector<round_report> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw io_error("load_round_reports: bad JSON at " + path + ":" +
                     std::to_string(lineno) + ": " + e.what());
    }
    round_report r;
    r.round = j.at("round").get<int>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.test_loss = j.at("test_loss").get<std::vector<double>>();
    r.sigma_groups = j.at("sigma_groups").get<std::vector<double>>();
    r.lr = j.at("lr").get<std::vector<double>>();
    out.push_back(std::move(r));
  }
  return out;
}

param_vector train_pass(const param_vector& start, client_model& client,
                        const lr_vector& rates, int epochs,
                        const engine_config& cfg, rng& r) {
  if (epochs < 1) throw contract_error("train_pass: epochs must be >= 1");
  param_vector p = start;
  // Fresh optimizer state on every reset: Adam moments carried over from a
  // different starting point would be stale.
  adam_state adam =
      make_adam_state(p.size(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  for (int e = 0; e < epochs; ++e) {
    client.begin_epoch(r);
    const std::size_t nb = client.batch_count();
    for (std::size_t b = 0; b < nb; ++b) {
      const std::vector<double> g = client.gradient(p, b, r);
      try {
        adam_step(p, g, adam, rates);
      } catch (const numeric_error& err) {
        throw numeric_error("train_pass: epoch " + std::to_string(e) +
                            " batch " + std::to_string(b) + ": " + err.what());
      }
    }
  }
  if (!all_finite(p.values))
    throw numeric_error("train_pass: non-finite parameters after training");
  return p;
}

param_vector personalize(client_model& client, const param_vector& global,
                         const lr_vector& rates, int epochs,
                         const engine_config& cfg, rng& r) {
  return train_pass(global, client, rates, epochs, cfg, r);
}

param_vector contribute(client_model& client, const param_vector& global,
                        int epochs, const engine_config& cfg, rng& r) {
  return train_pass(global, client, uniform_lr(global, cfg.base_lr), epochs,
                    cfg, r);
}

fleet_state make_fleet_state(const param_vector& init, std::size_t n_clients,
                             const engine_config& cfg) {
  if (n_clients == 0) throw contract_error("make_fleet_state: no clients");
  fleet_state st;
  st.server.global = init;
  st.server.sigma.values.assign(init.size(), 0.0);
  st.server.lr = uniform_lr(init, cfg.base_lr);
  st.server.base_lr = cfg.base_lr;
  st.server.round = 0;
  st.personalized.assign(n_clients, init);
  st.client_rngs.reserve(n_clients);
  for (std::size_t k = 0; k < n_clients; ++k)
    st.client_rngs.emplace_back(derive_seed(cfg.master_seed, 1000 + k));
  return st;
}

namespace {

std::vector<double> group_means(const sigma_vector& sigma,
                                const param_vector& layout) {
  std::vector<double> out(layout.group_count(), 0.0);
  for (std::size_t g = 0; g < layout.group_count(); ++g) {
    const auto& grp = layout.groups[g];
    double acc = 0.0;
    for (std::size_t i = grp.offset; i < grp.offset + grp.size; ++i)
      acc += sigma.values[i];
    out[g] = acc / static_cast<double>(grp.size);
  }
  return out;
}

void check_report_finite(const round_report& rep) {
  for (double v : rep.train_loss)
    if (!std::isfinite(v)) throw numeric_error("round_report: non-finite train loss");
  for (double v : rep.test_loss)
    if (!std::isfinite(v)) throw numeric_error("round_report: non-finite test loss");
}

}  // namespace

round_report run_round(fleet_state& state,
                       std::span<client_model* const> clients,
                       const engine_config& cfg) {
  const scheme sch = cfg.training_scheme;
  if (sch != scheme::sfl && sch != scheme::spfl && sch != scheme::apfl)
    throw config_error("run_round: scheme has no federated rounds");
  if (clients.empty()) throw config_error("run_round: no clients");
  if (sch == scheme::apfl && clients.size() < 2)
    throw config_error("run_round: adaptive rates need at least 2 clients");
  if (clients.size() != state.personalized.size() ||
      clients.size() != state.client_rngs.size())
    throw contract_error("run_round: fleet state size mismatch");

  const std::size_t n = clients.size();
  std::vector<param_vector> contributed(n);
  std::vector<param_vector> personalized(n);
  std::exception_ptr failure;

  // Dispatch barrier: every client starts from the same global snapshot and
  // the same personalization rates; nothing below mutates server state until
  // the collection barrier.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (cfg.parallel)
#endif
  for (long long ki = 0; ki < static_cast<long long>(n); ++ki) {
    const std::size_t k = static_cast<std::size_t>(ki);
    try {
      rng& r = state.client_rngs[k];
      if (sch == scheme::apfl) {
        personalized[k] = personalize(*clients[k], state.server.global,
                                      state.server.lr, cfg.epochs, cfg, r);
      } else if (sch == scheme::spfl) {
        personalized[k] = personalize(
            *clients[k], state.server.global,
            uniform_lr(state.server.global, cfg.base_lr), cfg.epochs, cfg, r);
      }
      contributed[k] =
          contribute(*clients[k], state.server.global, cfg.epochs, cfg, r);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      {
        if (!failure) failure = std::current_exception();
      }
    }
  }
  if (failure) {
    try {
      std::rethrow_exception(failure);
    } catch (const numeric_error& e) {
      throw numeric_error("round " + std::to_string(state.server.round) + ": " +
                          e.what());
    }
  }

  // Collection barrier; sequential server-side reduction in client order.
  state.server.global = mean_params(contributed);
  if (n >= 2) state.server.sigma = sum_sq_dev(contributed);
  if (sch == scheme::apfl)
    state.server.lr =
        lrs_from_sigma(state.server.sigma, cfg.base_lr, state.server.global);

  if (sch == scheme::sfl) {
    // No personalization: every client adopts the fresh global model.
    for (std::size_t k = 0; k < n; ++k) personalized[k] = state.server.global;
  }
  state.personalized = personalized;
  state.server.round += 1;

  round_report rep;
  rep.round = state.server.round;
  rep.train_loss.resize(n);
  rep.test_loss.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    rep.train_loss[k] = clients[k]->train_loss(state.personalized[k]);
    rep.test_loss[k] = clients[k]->test_loss(state.personalized[k]);
  }
  if (n >= 2) rep.sigma_groups = group_means(state.server.sigma, state.server.global);
  rep.lr = state.server.lr.rates;
  check_report_finite(rep);
  return rep;
}

namespace {

double max_rel_change(const param_vector& now, const param_vector& before) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < now.size(); ++i) {
    num = std::max(num, std::abs(now.values[i] - before.values[i]));
    den = std::max(den, std::abs(before.values[i]));
  }
  return num / (1.0 + den);
}

round_report standalone_report(std::span<client_model* const> clients,
                               const std::vector<param_vector>& models) {
  round_report rep;
  rep.round = 1;
  rep.train_loss.resize(clients.size());
  rep.test_loss.resize(clients.size());
  for (std::size_t k = 0; k < clients.size(); ++k) {
    rep.train_loss[k] = clients[k]->train_loss(models[k]);
    rep.test_loss[k] = clients[k]->test_loss(models[k]);
  }
  check_report_finite(rep);
  return rep;
}

}  // namespace

scheme_result run_scheme(const engine_config& cfg, const param_vector& init,
                         std::span<client_model* const> clients,
                         client_model* pooled) {
  if (clients.empty()) throw config_error("run_scheme: no clients");
  if (cfg.rounds < 1) throw config_error("run_scheme: rounds must be >= 1");
  if (cfg.epochs < 1) throw config_error("run_scheme: epochs must be >= 1");
  if (!(cfg.base_lr > 0)) throw config_error("run_scheme: base_lr must be positive");
  validate_layout(init);

  const int alone_epochs =
      cfg.standalone_epochs > 0 ? cfg.standalone_epochs : cfg.epochs;
  const std::size_t n = clients.size();
  scheme_result res;

  switch (cfg.training_scheme) {
    case scheme::local: {
      // Per-client training only; no communication at all.
      res.personalized.assign(n, init);
      std::exception_ptr failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (cfg.parallel)
#endif
      for (long long ki = 0; ki < static_cast<long long>(n); ++ki) {
        const std::size_t k = static_cast<std::size_t>(ki);
        try {
          rng r(derive_seed(cfg.master_seed, 1000 + k));
          res.personalized[k] =
              train_pass(init, *clients[k],
                         uniform_lr(init, cfg.base_lr), alone_epochs, cfg, r);
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
      res.global = init;  // never updated: nothing is shared
      res.history.push_back(standalone_report(clients, res.personalized));
      res.rounds_run = 1;
      res.converged = true;
      return res;
    }
    case scheme::cloud: {
      if (pooled == nullptr)
        throw config_error("run_scheme: cloud scheme needs the pooled dataset");
      rng r(derive_seed(cfg.master_seed, 999));
      param_vector theta = train_pass(init, *pooled, uniform_lr(init, cfg.base_lr),
                                      alone_epochs, cfg, r);
      res.personalized.assign(n, theta);
      res.global = theta;
      res.history.push_back(standalone_report(clients, res.personalized));
      res.rounds_run = 1;
      res.converged = true;
      return res;
    }
    case scheme::sfl:
    case scheme::spfl:
    case scheme::apfl: {
      fleet_state st = make_fleet_state(init, n, cfg);
      for (int round = 0; round < cfg.rounds; ++round) {
        const std::vector<param_vector> before = st.personalized;
        res.history.push_back(run_round(st, clients, cfg));
        res.rounds_run = round + 1;
        double change = 0.0;
        for (std::size_t k = 0; k < n; ++k)
          change = std::max(change,
                            max_rel_change(st.personalized[k], before[k]));
        if (round > 0 && change < cfg.convergence_tol) {
          res.converged = true;
          break;
        }
      }
      res.personalized = st.personalized;
      res.global = st.server.global;
      return res;
    }
  }
  throw config_error("run_scheme: unknown scheme");
}

}  // namespace fedfleet::fl
