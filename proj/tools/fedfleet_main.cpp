// fedfleet CLI: dataset generation, federated training, closed-loop
// simulation, checkpoint evaluation, paired statistics, and record export.
// Every command takes --config (JSON) and --seed (overrides the config's
// master seed).  Errors print one machine-readable JSON record on stderr and
// exit nonzero (2 config/usage, 3 io, 4 numeric, 5 contract, 1 other).

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fedfleet/experiment.hpp"

namespace ff = fedfleet;
using nlohmann::ordered_json;

namespace {

struct common_opts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, common_opts& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config_path, "experiment config (JSON)");
  if (config_required) c->required();
  cmd->add_option("--seed", o.seed, "override the config's master seed");
}

ff::ex::experiment_config load_cfg(const common_opts& o) {
  auto cfg = o.config_path.empty() ? ff::ex::experiment_config{}
                                   : ff::ex::load_experiment_config(o.config_path);
  if (o.seed) cfg.master_seed = *o.seed;
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ff::io_error("cannot create directory " + dir + ": " + ec.message());
}

double median(std::vector<double> v) {
  if (v.empty()) throw ff::contract_error("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- gen-lqr ---

void cmd_gen_lqr(const common_opts& o, const std::string& out_dir) {
  const auto cfg = load_cfg(o);
  ensure_dir(out_dir);
  const auto fleet = ff::tasks::make_lqr_fleet(
      cfg.lqr, ff::ex::trial_seed(cfg.master_seed, 0));

  ordered_json truths;
  truths["version"] = ff::version_string();
  truths["master_seed"] = cfg.master_seed;
  truths["config_hash"] = ff::ex::config_hash_hex(cfg.canonical_json);
  truths["robots"] = ordered_json::array();
  for (std::size_t k = 0; k < fleet.clients.size(); ++k) {
    ff::lqr::save_transitions(out_dir + "/robot" + std::to_string(k) + "_train.jsonl",
                              fleet.clients[k]->train_set());
    ff::lqr::save_transitions(out_dir + "/robot" + std::to_string(k) + "_test.jsonl",
                              fleet.clients[k]->test_set());
    ordered_json r;
    r["robot"] = k;
    r["r_cost"] = cfg.lqr.r_costs[k];
    r["k_opt"] = fleet.truths[k].k;
    r["train_transitions"] = fleet.clients[k]->train_set().size();
    r["test_transitions"] = fleet.clients[k]->test_set().size();
    truths["robots"].push_back(std::move(r));
  }
  std::ofstream tf(out_dir + "/truths.json", std::ios::binary);
  if (!tf) throw ff::io_error("cannot open for writing: " + out_dir + "/truths.json");
  tf << truths.dump(2) << '\n';

  ordered_json summary;
  summary["command"] = "gen-lqr";
  summary["out_dir"] = out_dir;
  summary["robots"] = fleet.clients.size();
  std::cout << summary.dump() << '\n';
}

// ------------------------------------------------------------ gen-driving ---

void cmd_gen_driving(const common_opts& o, const std::string& out_dir) {
  auto cfg = load_cfg(o);
  if (cfg.task == "lqr")
    throw ff::config_error("gen-driving: config task must be lane-swap or lane-change");
  ensure_dir(out_dir);
  const auto fleet = ff::tasks::make_driving_fleet(
      cfg.driving, ff::ex::trial_seed(cfg.master_seed, 0));

  ordered_json summary;
  summary["command"] = "gen-driving";
  summary["out_dir"] = out_dir;
  summary["drivers"] = ordered_json::array();
  for (std::size_t k = 0; k < fleet.sessions.size(); ++k) {
    for (std::size_t s = 0; s < fleet.sessions[k].size(); ++s)
      ff::sim::save_episode(out_dir + "/driver" + std::to_string(k) + "_session" +
                                std::to_string(s) + ".jsonl",
                            fleet.sessions[k][s]);
    ordered_json d;
    d["driver"] = k;
    d["gamma"] = cfg.driving.gammas[k];
    d["sessions"] = fleet.sessions[k].size();
    d["train_samples"] = fleet.clients[k]->train_size();
    summary["drivers"].push_back(std::move(d));
  }
  std::cout << summary.dump() << '\n';
}

// ------------------------------------------------------------------ train ---

void cmd_train(const common_opts& o, const std::string& out_override) {
  auto cfg = load_cfg(o);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (cfg.out_dir.empty())
    throw ff::config_error("train: no output directory (config out_dir or --out)");
  ensure_dir(cfg.out_dir);

  const auto records = ff::ex::run_experiment(cfg);
  const auto prov = ff::ex::make_provenance(cfg);
  ff::ex::save_records_jsonl(cfg.out_dir + "/records.jsonl", records, prov);
  ff::ex::save_records_csv(cfg.out_dir + "/records.csv", records, prov);

  std::vector<std::string> metric_rows =
      cfg.task == "lqr"
          ? std::vector<std::string>{"state_loss", "control_loss", "total_loss"}
          : std::vector<std::string>{"test_elbo"};
  std::vector<std::string> scheme_cols;
  for (auto s : cfg.schemes) scheme_cols.push_back(ff::fl::to_string(s));
  ff::ex::save_table_csv(cfg.out_dir + "/table.csv", records, metric_rows,
                         scheme_cols, prov);

  ordered_json summary;
  summary["command"] = "train";
  summary["out_dir"] = cfg.out_dir;
  summary["records"] = records.size();
  ordered_json table = ordered_json::object();
  for (const auto& m : metric_rows) {
    ordered_json row = ordered_json::object();
    for (const auto& s : scheme_cols) row[s] = ff::ex::mean_metric(records, s, m);
    table[m] = std::move(row);
  }
  summary["means"] = std::move(table);
  std::cout << summary.dump() << '\n';
}

// -------------------------------------------------------------------- sim ---

void cmd_sim(const common_opts& o, const std::string& out_dir,
             const std::string& models_dir, const std::string& scheme_label,
             std::size_t episodes) {
  auto cfg = load_cfg(o);
  if (cfg.task == "lqr")
    throw ff::config_error("sim: config task must be lane-swap or lane-change");
  ensure_dir(out_dir);

  ff::sim::naive_forecaster naive;
  std::vector<std::unique_ptr<ff::cvae::cvae_forecaster>> owned;
  std::vector<const ff::sim::forecaster*> arms;
  std::string label = scheme_label;
  if (models_dir.empty()) {
    arms.push_back(&naive);
    if (label.empty()) label = "naive";
  } else {
    if (label.empty()) label = "apfl";
    for (std::size_t k = 0; k < cfg.driving.gammas.size(); ++k) {
      auto ck = ff::cvae::load_cvae_checkpoint(models_dir + "/" + label + "_robot" +
                                               std::to_string(k) + ".json");
      owned.push_back(std::make_unique<ff::cvae::cvae_forecaster>(
          ck.cfg, std::move(ck.params)));
      arms.push_back(owned.back().get());
    }
  }

  const auto res = ff::ex::run_controller_eval(cfg.task, label, arms, cfg.driving,
                                               episodes, cfg.master_seed);
  const auto prov = ff::ex::make_provenance(cfg);
  ff::ex::save_records_jsonl(out_dir + "/eval_records.jsonl", res.records, prov);
  ff::ex::save_records_csv(out_dir + "/eval_records.csv", res.records, prov);
  for (std::size_t i = 0; i < res.episodes.size(); ++i)
    ff::sim::save_episode(out_dir + "/episode" + std::to_string(i) + ".jsonl",
                          res.episodes[i]);

  std::vector<double> costs;
  std::size_t collisions = 0;
  for (const auto& ep : res.episodes) {
    costs.push_back(ep.mean_cost);
    collisions += ep.collided ? 1 : 0;
  }
  ordered_json summary;
  summary["command"] = "sim";
  summary["label"] = label;
  summary["episodes"] = episodes;
  summary["median_mean_cost"] = median(costs);
  summary["collisions"] = collisions;
  std::cout << summary.dump() << '\n';
}

// ------------------------------------------------------------------- eval ---

void cmd_eval(const common_opts& o, const std::string& model_path, int robot) {
  const auto cfg = load_cfg(o);
  const auto tseed = ff::ex::trial_seed(cfg.master_seed, 0);
  ordered_json out;
  out["command"] = "eval";
  out["model"] = model_path;
  out["robot"] = robot;
  if (cfg.task == "lqr") {
    const auto fleet = ff::tasks::make_lqr_fleet(cfg.lqr, tseed);
    if (robot < 0 || static_cast<std::size_t>(robot) >= fleet.clients.size())
      throw ff::config_error("eval: robot index out of range");
    const auto ck = ff::load_checkpoint(model_path);
    const auto loss =
        ff::lqr::lqr_loss(ck.params, fleet.clients[robot]->test_set());
    const auto dist = ff::lqr::distance_to_truth(ck.params, fleet.system,
                                                 fleet.truths[robot].k);
    out["state_loss"] = loss.state_loss;
    out["control_loss"] = loss.control_loss;
    out["total_loss"] = loss.total;
    out["dyn_distance"] = dist.dynamics;
    out["ctl_distance"] = dist.control;
  } else {
    const auto fleet = ff::tasks::make_driving_fleet(cfg.driving, tseed);
    if (robot < 0 || static_cast<std::size_t>(robot) >= fleet.clients.size())
      throw ff::config_error("eval: robot index out of range");
    const auto ck = ff::cvae::load_cvae_checkpoint(model_path);
    out["test_elbo"] = fleet.clients[robot]->test_loss(ck.params);
    out["train_elbo"] = fleet.clients[robot]->train_loss(ck.params);
  }
  std::cout << out.dump() << '\n';
}

// ------------------------------------------------------------------ stats ---

void cmd_stats(const std::string& records_path, const std::string& scheme_a,
               const std::string& scheme_b, const std::string& metric) {
  const auto records = ff::ex::load_records_jsonl(records_path);
  // Pair by (trial, robot); records are sorted on export but don't rely on it.
  auto collect = [&](const std::string& scheme) {
    std::vector<std::pair<std::pair<int, int>, double>> got;
    for (const auto& r : records) {
      if (r.scheme != scheme) continue;
      auto it = r.metrics.find(metric);
      if (it == r.metrics.end())
        throw ff::config_error("stats: metric " + metric + " missing from a " +
                               scheme + " record");
      got.push_back({{r.trial, r.robot}, it->second});
    }
    std::sort(got.begin(), got.end());
    return got;
  };
  const auto a = collect(scheme_a);
  const auto b = collect(scheme_b);
  if (a.empty() || b.empty())
    throw ff::config_error("stats: no records for scheme " +
                           (a.empty() ? scheme_a : scheme_b));
  if (a.size() != b.size())
    throw ff::config_error("stats: unpaired schemes (" + std::to_string(a.size()) +
                           " vs " + std::to_string(b.size()) + " records)");
  std::vector<double> va, vb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first)
      throw ff::config_error("stats: trial/robot keys do not pair up");
    va.push_back(a[i].second);
    vb.push_back(b[i].second);
  }
  const auto w = ff::stats::wilcoxon_signed_rank(va, vb);
  ordered_json out;
  out["command"] = "stats";
  out["metric"] = metric;
  out["scheme_a"] = scheme_a;
  out["scheme_b"] = scheme_b;
  out["n"] = w.n;
  out["w"] = w.w;
  out["w_plus"] = w.w_plus;
  out["p"] = w.p;
  out["exact"] = w.exact;
  std::cout << out.dump() << '\n';
}

// ----------------------------------------------------------------- export ---

void cmd_export(const std::string& records_path, const std::string& format,
                const std::string& out_path, std::vector<std::string> metrics,
                std::vector<std::string> schemes) {
  const auto records = ff::ex::load_records_jsonl(records_path);
  const auto prov = ff::ex::load_provenance_jsonl(records_path);
  if (format == "jsonl") {
    ff::ex::save_records_jsonl(out_path, records, prov);
  } else if (format == "csv") {
    ff::ex::save_records_csv(out_path, records, prov);
  } else if (format == "table") {
    if (schemes.empty()) {
      for (const auto& r : records)
        if (std::find(schemes.begin(), schemes.end(), r.scheme) == schemes.end())
          schemes.push_back(r.scheme);
      std::sort(schemes.begin(), schemes.end());
    }
    if (metrics.empty()) {
      if (records.empty()) throw ff::config_error("export: empty records, pass --metrics");
      for (const auto& [k, v] : records.front().metrics) metrics.push_back(k);
    }
    ff::ex::save_table_csv(out_path, records, metrics, schemes, prov);
  } else {
    throw ff::config_error("export: unknown format " + format +
                           " (expected csv, jsonl, or table)");
  }
  ordered_json summary;
  summary["command"] = "export";
  summary["out"] = out_path;
  summary["records"] = records.size();
  std::cout << summary.dump() << '\n';
}

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const ff::config_error*>(&e)) return "config";
  if (dynamic_cast<const ff::io_error*>(&e)) return "io";
  if (dynamic_cast<const ff::numeric_error*>(&e)) return "numeric";
  if (dynamic_cast<const ff::contract_error*>(&e)) return "contract";
  return "internal";
}

int error_code(const std::string& type) {
  if (type == "config") return 2;
  if (type == "io") return 3;
  if (type == "numeric") return 4;
  if (type == "contract") return 5;
  return 1;
}

void print_error(const std::string& type, const std::string& message) {
  ordered_json j;
  j["error"] = ordered_json{{"type", type}, {"message", message}};
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated fleet learning toolkit"};
  app.set_version_flag("--version", ff::version_string());
  app.require_subcommand(1);

  common_opts gen_lqr_o, gen_drv_o, train_o, sim_o, eval_o;
  std::string gen_lqr_out, gen_drv_out, train_out, sim_out;
  std::string sim_models, sim_label;
  std::size_t sim_episodes = 9;
  std::string eval_model;
  int eval_robot = 0;
  std::string stats_records, stats_a, stats_b, stats_metric;
  std::string exp_records, exp_format, exp_out;
  std::vector<std::string> exp_metrics, exp_schemes;

  auto* gl = app.add_subcommand("gen-lqr", "generate expert rollout datasets");
  add_common(gl, gen_lqr_o, false);
  gl->add_option("--out", gen_lqr_out, "output directory")->required();
  gl->callback([&] { cmd_gen_lqr(gen_lqr_o, gen_lqr_out); });

  auto* gd = app.add_subcommand("gen-driving", "generate bootstrap driving sessions");
  add_common(gd, gen_drv_o, true);
  gd->add_option("--out", gen_drv_out, "output directory")->required();
  gd->callback([&] { cmd_gen_driving(gen_drv_o, gen_drv_out); });

  auto* tr = app.add_subcommand("train", "run the scheme x trial experiment");
  add_common(tr, train_o, true);
  tr->add_option("--out", train_out, "output directory (overrides config out_dir)");
  tr->callback([&] { cmd_train(train_o, train_out); });

  auto* sm = app.add_subcommand("sim", "closed-loop controller evaluation");
  add_common(sm, sim_o, true);
  sm->add_option("--out", sim_out, "output directory")->required();
  sm->add_option("--models", sim_models,
                 "directory with <scheme>_robot<k>.json checkpoints; "
                 "omit for the naive-forecast controller");
  sm->add_option("--label", sim_label, "scheme label for records (default: "
                 "apfl with --models, naive without)");
  sm->add_option("--episodes", sim_episodes, "evaluation episode count");
  sm->callback([&] { cmd_sim(sim_o, sim_out, sim_models, sim_label, sim_episodes); });

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on held-out data");
  add_common(ev, eval_o, true);
  ev->add_option("--model", eval_model, "checkpoint path")->required();
  ev->add_option("--robot", eval_robot, "robot whose test split to use");
  ev->callback([&] { cmd_eval(eval_o, eval_model, eval_robot); });

  auto* st = app.add_subcommand("stats", "paired Wilcoxon test between schemes");
  st->add_option("--records", stats_records, "records JSONL path")->required();
  st->add_option("--scheme-a", stats_a, "first scheme label")->required();
  st->add_option("--scheme-b", stats_b, "second scheme label")->required();
  st->add_option("--metric", stats_metric, "metric to compare")->required();
  st->callback([&] { cmd_stats(stats_records, stats_a, stats_b, stats_metric); });

  auto* xp = app.add_subcommand("export", "re-export records (csv | jsonl | table)");
  xp->add_option("--records", exp_records, "records JSONL path")->required();
  xp->add_option("--format", exp_format, "csv | jsonl | table")->required();
  xp->add_option("--out", exp_out, "output path")->required();
  xp->add_option("--metrics", exp_metrics, "table row metrics")->delimiter(',');
  xp->add_option("--schemes", exp_schemes, "table column schemes")->delimiter(',');
  xp->callback([&] { cmd_export(exp_records, exp_format, exp_out, exp_metrics,
                                exp_schemes); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const std::exception& e) {
    const auto type = error_type(e);
    print_error(type, e.what());
    return error_code(type);
  }
  return 0;
}
