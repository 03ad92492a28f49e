#include "fedfleet/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <tuple>

#include "json.hpp"

namespace fedfleet::ex {

namespace {

using nlohmann::ordered_json;

// Shortest round-trip formatting; reruns with the same seed must produce
// byte-identical exports, so all doubles funnel through here.
std::string fmt_double(double v) { return ordered_json(v).dump(); }

ordered_json record_to_json(const metrics_record& r) {
  ordered_json j;
  j["task"] = r.task;
  j["scheme"] = r.scheme;
  j["trial"] = r.trial;
  j["robot"] = r.robot;
  ordered_json m = ordered_json::object();
  for (const auto& [k, v] : r.metrics) m[k] = v;  // std::map: sorted keys
  j["metrics"] = m;
  return j;
}

metrics_record record_from_json(const ordered_json& j) {
  metrics_record r;
  r.task = j.at("task").get<std::string>();
  r.scheme = j.at("scheme").get<std::string>();
  r.trial = j.at("trial").get<int>();
  r.robot = j.at("robot").get<int>();
  for (const auto& [k, v] : j.at("metrics").items())
    r.metrics[k] = v.get<double>();
  return r;
}

std::string provenance_comment(const provenance& prov) {
  std::ostringstream os;
  os << "# fedfleet " << prov.version << " master_seed=" << prov.master_seed
     << " config_hash=" << prov.config_hash;
  return os.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: no newline surprises
  if (!out) throw io_error("cannot open for writing: " + path);
  return out;
}

void finish_out(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw io_error("write failed: " + path);
}

bool record_less(const metrics_record& a, const metrics_record& b) {
  return std::tie(a.task, a.scheme, a.trial, a.robot) <
         std::tie(b.task, b.scheme, b.trial, b.robot);
}

}  // namespace

std::string config_hash_hex(const std::string& canonical_json) {
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a 64-bit offset basis
  for (unsigned char c : canonical_json) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void save_records_jsonl(const std::string& path,
                        std::span<const metrics_record> records,
                        const provenance& prov) {
  auto out = open_out(path);
  ordered_json meta;
  meta["meta"] = true;
  meta["version"] = prov.version;
  meta["master_seed"] = prov.master_seed;
  meta["config_hash"] = prov.config_hash;
  out << meta.dump() << '\n';
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  finish_out(out, path);
}

std::vector<metrics_record> load_records_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path);
  std::vector<metrics_record> out;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
      if (j.contains("meta") && j.at("meta").get<bool>()) continue;
      out.push_back(record_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw io_error(path + ":" + std::to_string(ln) + ": " + e.what());
    }
  }
  return out;
}

provenance load_provenance_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = ordered_json::parse(line);
      if (!(j.contains("meta") && j.at("meta").get<bool>()))
        throw io_error(path + ": first record is not a meta line");
      provenance p;
      p.version = j.at("version").get<std::string>();
      p.master_seed = j.at("master_seed").get<std::uint64_t>();
      p.config_hash = j.at("config_hash").get<std::string>();
      return p;
    } catch (const nlohmann::json::exception& e) {
      throw io_error(path + ": meta line: " + e.what());
    }
  }
  throw io_error(path + ": empty file, no meta line");
}

void save_records_csv(const std::string& path,
                      std::span<const metrics_record> records,
                      const provenance& prov) {
  auto out = open_out(path);
  out << provenance_comment(prov) << '\n';
  out << "task,scheme,trial,robot,metric,value\n";
  for (const auto& r : records)
    for (const auto& [k, v] : r.metrics)
      out << r.task << ',' << r.scheme << ',' << r.trial << ',' << r.robot
          << ',' << k << ',' << fmt_double(v) << '\n';
  finish_out(out, path);
}

double mean_metric(std::span<const metrics_record> records,
                   const std::string& scheme, const std::string& metric) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.scheme != scheme) continue;
    auto it = r.metrics.find(metric);
    if (it == r.metrics.end()) continue;
    sum += it->second;
    ++n;
  }
  if (n == 0)
    throw contract_error("mean_metric: no records for scheme=" + scheme +
                         " metric=" + metric);
  return sum / static_cast<double>(n);
}

void save_table_csv(const std::string& path,
                    std::span<const metrics_record> records,
                    std::span<const std::string> metric_rows,
                    std::span<const std::string> scheme_cols,
                    const provenance& prov) {
  auto out = open_out(path);
  out << provenance_comment(prov) << '\n';
  out << "metric";
  for (const auto& s : scheme_cols) out << ',' << s;
  out << '\n';
  for (const auto& m : metric_rows) {
    out << m;
    for (const auto& s : scheme_cols) out << ',' << fmt_double(mean_metric(records, s, m));
    out << '\n';
  }
  finish_out(out, path);
}

// ------------------------------------------------------------- config ---

namespace {

using nlohmann::json;  // sorts object keys; dump() is the canonical form

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

fl::engine_config parse_engine(const json& j, fl::engine_config c) {
  get_if(j, "rounds", c.rounds);
  get_if(j, "epochs", c.epochs);
  get_if(j, "standalone_epochs", c.standalone_epochs);
  get_if(j, "base_lr", c.base_lr);
  get_if(j, "beta1", c.beta1);
  get_if(j, "beta2", c.beta2);
  get_if(j, "adam_eps", c.adam_eps);
  get_if(j, "convergence_tol", c.convergence_tol);
  get_if(j, "parallel", c.parallel);
  return c;
}

tasks::lqr_task_config parse_lqr(const json& j, tasks::lqr_task_config c) {
  get_if(j, "r_costs", c.r_costs);
  get_if(j, "rollouts", c.rollouts);
  get_if(j, "horizon", c.horizon);
  get_if(j, "noise_var", c.noise_var);
  get_if(j, "test_fraction", c.test_fraction);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "init_range", c.init_range);
  get_if(j, "init_scale", c.init_scale);
  return c;
}

sim::mpc_config parse_mpc(const json& j, sim::mpc_config c) {
  get_if(j, "alpha", c.alpha);
  get_if(j, "beta", c.beta);
  get_if(j, "tau", c.tau);
  get_if(j, "horizon", c.horizon);
  get_if(j, "n_samples", c.n_samples);
  get_if(j, "parallel", c.parallel);
  if (j.contains("cost_floor")) {
    if (j.at("cost_floor").is_null())
      c.cost_floor.reset();
    else
      c.cost_floor = j.at("cost_floor").get<double>();
  }
  return c;
}

sim::episode_config parse_episode(const json& j, sim::episode_config c) {
  get_if(j, "dt", c.dt);
  get_if(j, "max_steps", c.max_steps);
  get_if(j, "phase2_gap", c.phase2_gap);
  get_if(j, "lane_width", c.lane_width);
  get_if(j, "collision_dist", c.collision_dist);
  get_if(j, "lane_done_tol", c.lane_done_tol);
  get_if(j, "heading_done_tol", c.heading_done_tol);
  return c;
}

sim::init_ranges parse_ranges(const json& j, sim::init_ranges c) {
  get_if(j, "human_dy_min", c.human_dy_min);
  get_if(j, "human_dy_max", c.human_dy_max);
  get_if(j, "robot_v_min", c.robot_v_min);
  get_if(j, "robot_v_max", c.robot_v_max);
  get_if(j, "human_v_min", c.human_v_min);
  get_if(j, "human_v_max", c.human_v_max);
  get_if(j, "gray_gap_min", c.gray_gap_min);
  get_if(j, "gray_gap_max", c.gray_gap_max);
  get_if(j, "gray_v", c.gray_v);
  get_if(j, "lane_width", c.lane_width);
  return c;
}

sim::synthetic_driver_params parse_driver(const json& j,
                                          sim::synthetic_driver_params c) {
  get_if(j, "v_high", c.v_high);
  get_if(j, "v_low", c.v_low);
  get_if(j, "d_safe", c.d_safe);
  if (j.contains("pid")) {
    const auto& p = j.at("pid");
    get_if(p, "kp", c.pid.kp);
    get_if(p, "ki", c.pid.ki);
    get_if(p, "kd", c.pid.kd);
  }
  return c;
}

cvae::cvae_config parse_model(const json& j, cvae::cvae_config c) {
  get_if(j, "hidden", c.hidden);
  get_if(j, "latent", c.latent);
  get_if(j, "window", c.window);
  get_if(j, "horizon", c.horizon);
  get_if(j, "beta_kl", c.beta_kl);
  return c;
}

tasks::driving_task_config parse_driving(const json& j,
                                         tasks::driving_task_config c) {
  get_if(j, "gammas", c.gammas);
  get_if(j, "train_sessions", c.train_sessions);
  get_if(j, "test_sessions", c.test_sessions);
  get_if(j, "session_max_steps", c.session_max_steps);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "init_scale", c.init_scale);
  if (j.contains("model")) c.model = parse_model(j.at("model"), c.model);
  if (j.contains("mpc")) c.bootstrap_mpc = parse_mpc(j.at("mpc"), c.bootstrap_mpc);
  if (j.contains("episode")) c.episode = parse_episode(j.at("episode"), c.episode);
  if (j.contains("ranges")) c.ranges = parse_ranges(j.at("ranges"), c.ranges);
  if (j.contains("driver")) c.driver = parse_driver(j.at("driver"), c.driver);
  return c;
}

}  // namespace

experiment_config parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config parse: ") + e.what());
  }
  if (!j.is_object()) throw config_error("config root must be a JSON object");

  experiment_config cfg;
  try {
    get_if(j, "task", cfg.task);
    if (cfg.task != "lqr" && cfg.task != "lane-swap" && cfg.task != "lane-change")
      throw config_error("unknown task: " + cfg.task);
    if (j.contains("schemes")) {
      cfg.schemes.clear();
      for (const auto& s : j.at("schemes"))
        cfg.schemes.push_back(fl::scheme_from_string(s.get<std::string>()));
      if (cfg.schemes.empty()) throw config_error("schemes list is empty");
    }
    get_if(j, "trials", cfg.trials);
    if (cfg.trials < 1) throw config_error("trials must be >= 1");
    get_if(j, "master_seed", cfg.master_seed);
    get_if(j, "out_dir", cfg.out_dir);
    if (j.contains("engine")) cfg.engine = parse_engine(j.at("engine"), cfg.engine);
    if (j.contains("lqr")) cfg.lqr = parse_lqr(j.at("lqr"), cfg.lqr);
    if (j.contains("driving"))
      cfg.driving = parse_driving(j.at("driving"), cfg.driving);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config field: ") + e.what());
  }

  if (cfg.task != "lqr") {
    const auto sc = sim::scenario_from_string(cfg.task);
    cfg.driving.model.scene = sc;
    cfg.driving.episode.scene = sc;
    // The lane-change planner runs on the floored cost J' = max(C_low, J)
    // with C_low = 0 unless the config says otherwise.
    if (sc == sim::scenario::lane_change &&
        !cfg.driving.bootstrap_mpc.cost_floor)
      cfg.driving.bootstrap_mpc.cost_floor = 0.0;
  }
  cfg.canonical_json = j.dump();
  return cfg;
}

experiment_config load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

provenance make_provenance(const experiment_config& cfg) {
  return provenance{version_string(), cfg.master_seed,
                    config_hash_hex(cfg.canonical_json)};
}

std::uint64_t trial_seed(std::uint64_t master_seed, int trial) {
  return derive_seed(master_seed, 5000 + static_cast<std::uint64_t>(trial));
}

// --------------------------------------------------------------- runs ---

namespace {

// Per-robot evaluation records for one finished scheme run.
void append_lqr_records(const experiment_config& cfg, fl::scheme s, int trial,
                        const tasks::lqr_fleet& fleet,
                        const fl::scheme_result& res,
                        std::vector<metrics_record>& out) {
  for (std::size_t k = 0; k < fleet.clients.size(); ++k) {
    const auto& model = res.personalized.at(k);
    const auto loss = lqr::lqr_loss(model, fleet.clients[k]->test_set());
    const auto dist =
        lqr::distance_to_truth(model, fleet.system, fleet.truths.at(k).k);
    metrics_record r;
    r.task = cfg.task;
    r.scheme = fl::to_string(s);
    r.trial = trial;
    r.robot = static_cast<int>(k);
    r.metrics = {{"state_loss", loss.state_loss},
                 {"control_loss", loss.control_loss},
                 {"total_loss", loss.total},
                 {"dyn_distance", dist.dynamics},
                 {"ctl_distance", dist.control},
                 {"rounds", static_cast<double>(res.rounds_run)}};
    out.push_back(std::move(r));
  }
}

void append_driving_records(const experiment_config& cfg, fl::scheme s,
                            int trial, const tasks::driving_fleet& fleet,
                            const fl::scheme_result& res,
                            std::vector<metrics_record>& out) {
  for (std::size_t k = 0; k < fleet.clients.size(); ++k) {
    const auto& model = res.personalized.at(k);
    metrics_record r;
    r.task = cfg.task;
    r.scheme = fl::to_string(s);
    r.trial = trial;
    r.robot = static_cast<int>(k);
    r.metrics = {{"test_elbo", fleet.clients[k]->test_loss(model)},
                 {"train_elbo", fleet.clients[k]->train_loss(model)},
                 {"rounds", static_cast<double>(res.rounds_run)}};
    out.push_back(std::move(r));
  }
}

fl::scheme_result run_one(const fl::engine_config& ecfg,
                          const param_vector& init,
                          std::span<fl::client_model* const> clients,
                          fl::client_model* pooled, int trial) {
  try {
    return fl::run_scheme(ecfg, init, clients, pooled);
  } catch (const numeric_error& e) {
    throw numeric_error("scheme " + fl::to_string(ecfg.training_scheme) +
                        " trial " + std::to_string(trial) + ": " + e.what());
  }
}

// Final per-robot models of the first trial go to <out_dir>/models so the
// sim/eval commands can reload them without retraining.
void save_trial0_models(const experiment_config& cfg, fl::scheme s,
                        const fl::scheme_result& res) {
  if (cfg.out_dir.empty()) return;
  std::filesystem::create_directories(cfg.out_dir + "/models");
  for (std::size_t k = 0; k < res.personalized.size(); ++k) {
    const std::string path = cfg.out_dir + "/models/" + fl::to_string(s) +
                             "_robot" + std::to_string(k) + ".json";
    if (cfg.task == "lqr") {
      ordered_json meta;
      meta["task"] = cfg.task;
      meta["scheme"] = fl::to_string(s);
      meta["robot"] = k;
      save_checkpoint(path, res.personalized[k], nullptr, meta.dump());
    } else {
      cvae::save_cvae_checkpoint(path, cfg.driving.model, res.personalized[k]);
    }
  }
}

void flush_partial(const experiment_config& cfg,
                   std::vector<metrics_record>& records) {
  if (cfg.out_dir.empty()) return;
  std::sort(records.begin(), records.end(), record_less);
  try {
    std::filesystem::create_directories(cfg.out_dir);
    save_records_jsonl(cfg.out_dir + "/partial.jsonl", records,
                       make_provenance(cfg));
  } catch (...) {
    // best effort; the original error is the one worth reporting
  }
}

}  // namespace

std::vector<metrics_record> run_experiment(const experiment_config& cfg) {
  if (cfg.schemes.empty()) throw config_error("run_experiment: no schemes");
  std::vector<metrics_record> records;
  try {
    for (int trial = 0; trial < cfg.trials; ++trial) {
      // Fresh data / init / client streams each trial; schemes inside a
      // trial share them so cross-scheme comparisons are paired.
      const std::uint64_t tseed = trial_seed(cfg.master_seed, trial);
      if (cfg.task == "lqr") {
        const auto fleet = tasks::make_lqr_fleet(cfg.lqr, tseed);
        const auto init =
            lqr::init_lqr_model(derive_seed(tseed, 1), cfg.lqr.init_scale);
        const auto clients = tasks::client_ptrs(fleet);
        for (fl::scheme s : cfg.schemes) {
          fl::engine_config ecfg = cfg.engine;
          ecfg.training_scheme = s;
          ecfg.master_seed = tseed;
          const auto res = run_one(ecfg, init, clients, fleet.pooled.get(), trial);
          append_lqr_records(cfg, s, trial, fleet, res, records);
          if (trial == 0) save_trial0_models(cfg, s, res);
        }
      } else {
        const auto fleet = tasks::make_driving_fleet(cfg.driving, tseed);
        const auto init = cvae::init_cvae_params(
            cfg.driving.model, derive_seed(tseed, 1), cfg.driving.init_scale);
        const auto clients = tasks::client_ptrs(fleet);
        for (fl::scheme s : cfg.schemes) {
          fl::engine_config ecfg = cfg.engine;
          ecfg.training_scheme = s;
          ecfg.master_seed = tseed;
          const auto res = run_one(ecfg, init, clients, fleet.pooled.get(), trial);
          append_driving_records(cfg, s, trial, fleet, res, records);
          if (trial == 0) save_trial0_models(cfg, s, res);
        }
      }
    }
  } catch (...) {
    flush_partial(cfg, records);
    throw;
  }
  std::sort(records.begin(), records.end(), record_less);
  return records;
}

controller_eval_result run_controller_eval(
    const std::string& task, const std::string& scheme_label,
    std::span<const sim::forecaster* const> per_driver,
    const tasks::driving_task_config& cfg, std::size_t n_inits,
    std::uint64_t seed) {
  if (per_driver.empty())
    throw contract_error("run_controller_eval: no forecasters");
  if (per_driver.size() != 1 && per_driver.size() != cfg.gammas.size())
    throw contract_error(
        "run_controller_eval: forecaster count must be 1 or one per driver");

  sim::episode_config epcfg = cfg.episode;
  epcfg.mpc = cfg.bootstrap_mpc;
  const auto inits = sim::generate_initial_states(n_inits, epcfg.scene,
                                                  cfg.ranges, derive_seed(seed, 7));
  controller_eval_result out;
  for (std::size_t i = 0; i < n_inits; ++i) {
    const std::size_t g = i % cfg.gammas.size();
    sim::synthetic_driver_params driver = cfg.driver;
    driver.gamma = cfg.gammas[g];
    const sim::forecaster& fc =
        *(per_driver.size() == 1 ? per_driver[0] : per_driver[g]);
    auto ep = sim::run_episode(epcfg, fc, driver, inits[i],
                               derive_seed(seed, 100 + i));
    metrics_record r;
    r.task = task;
    r.scheme = scheme_label;
    r.trial = static_cast<int>(i);
    r.robot = static_cast<int>(g);
    r.metrics = {{"mean_cost", ep.mean_cost},
                 {"commence_step", static_cast<double>(ep.commence_step)},
                 {"commence_distance", ep.commence_distance},
                 {"collided", ep.collided ? 1.0 : 0.0},
                 {"completed", ep.lane_change_completed ? 1.0 : 0.0},
                 {"steps", static_cast<double>(ep.trace.size())}};
    out.records.push_back(std::move(r));
    out.episodes.push_back(std::move(ep));
  }
  return out;
}

}  // namespace fedfleet::ex
