#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedfleet/fl.hpp"
#include "fedfleet/sim.hpp"
#include "fedfleet/stats.hpp"
#include "fedfleet/tasks.hpp"

namespace fedfleet::ex {

// One evaluated (scheme, trial, robot) cell.  The metric set depends on the
// task: the linear task emits state/control/total losses plus parameter
// distances; the driving task emits ELBO losses, and controller evaluation
// emits per-episode cost/commencement metrics.
struct metrics_record {
  std::string task;
  std::string scheme;
  int trial = 0;
  int robot = 0;
  std::map<std::string, double> metrics;
};

struct provenance {
  std::string version;
  std::uint64_t master_seed = 0;
  std::string config_hash;
};

// FNV-1a over the canonical (key-sorted) JSON dump.
std::string config_hash_hex(const std::string& canonical_json);

// JSON Lines: first line is a meta record carrying the provenance triple,
// then one record per line.  Reload skips the meta line.
void save_records_jsonl(const std::string& path,
                        std::span<const metrics_record> records,
                        const provenance& prov);
std::vector<metrics_record> load_records_jsonl(const std::string& path);

// Provenance triple from the meta line of a records file.
provenance load_provenance_jsonl(const std::string& path);

// Long format: "# fedfleet <version> ..." comment, then
// task,scheme,trial,robot,metric,value — one metric per row, plot-ready.
void save_records_csv(const std::string& path,
                      std::span<const metrics_record> records,
                      const provenance& prov);

// Pivoted summary: one row per metric, one column per scheme, cells are the
// mean over trials and robots (the loss-table layout).
void save_table_csv(const std::string& path,
                    std::span<const metrics_record> records,
                    std::span<const std::string> metric_rows,
                    std::span<const std::string> scheme_cols,
                    const provenance& prov);

// Mean of one metric over every record matching (scheme); NaN-free records
// are a schema invariant, so this throws if nothing matches.
double mean_metric(std::span<const metrics_record> records,
                   const std::string& scheme, const std::string& metric);

struct experiment_config {
  std::string task = "lqr";  // lqr | lane-swap | lane-change
  std::vector<fl::scheme> schemes{fl::scheme::local, fl::scheme::cloud,
                                  fl::scheme::sfl, fl::scheme::spfl,
                                  fl::scheme::apfl};
  int trials = 1;
  std::uint64_t master_seed = 1;
  std::string out_dir;
  fl::engine_config engine;
  tasks::lqr_task_config lqr;
  tasks::driving_task_config driving;
  std::string canonical_json = "{}";  // key-sorted dump used for hashing
};

experiment_config parse_experiment_config(const std::string& json_text);
experiment_config load_experiment_config(const std::string& path);
provenance make_provenance(const experiment_config& cfg);

// Documented seed-splitting rule: everything in trial t (data, init, client
// streams) derives from derive_seed(master, 5000 + t).  The CLI data
// generators use trial 0 so generated files match the first training trial.
std::uint64_t trial_seed(std::uint64_t master_seed, int trial);

// Scheme x trial sweep.  Each trial reseeds data, init, and client streams
// from derive_seed(master_seed, 5000 + trial); schemes within a trial share
// the same data and seed schedule, which is what makes paired tests across
// schemes meaningful.  Records come back sorted by (scheme, trial, robot).
// On failure, whatever finished is flushed to <out_dir>/partial.jsonl before
// the error (with scheme/trial context) propagates.  When out_dir is set,
// the first trial's final per-robot models are also saved under
// <out_dir>/models/<scheme>_robot<k>.json for later sim/eval use.
std::vector<metrics_record> run_experiment(const experiment_config& cfg);

// Rolls the evaluation suite: episode i draws its initial state from the
// shared suite and its driver gamma cyclically from cfg.driving.gammas;
// the forecaster for episode i is per_driver[gamma index] (or the single
// shared entry).  Emits one record per episode under the given scheme label.
struct controller_eval_result {
  std::vector<metrics_record> records;
  std::vector<sim::episode> episodes;
};

controller_eval_result run_controller_eval(
    const std::string& task, const std::string& scheme_label,
    std::span<const sim::forecaster* const> per_driver,
    const tasks::driving_task_config& cfg, std::size_t n_inits,
    std::uint64_t seed);

}  // namespace fedfleet::ex
