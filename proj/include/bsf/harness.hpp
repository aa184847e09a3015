#pragma once

// Experiment orchestration: data collection, matched-seed evaluation of the
// base, filtered and offline-filtered controllers, metrics and reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsf/bcbf.hpp"
#include "bsf/dataset.hpp"
#include "bsf/fno.hpp"
#include "bsf/fno_train.hpp"
#include "bsf/safety_filter.hpp"
#include "bsf/task.hpp"

namespace bsf {

inline constexpr const char* kVersion = "0.1.0";

struct RolloutScore {
  bool safe = false;
  int convergence_step = 0;  // first k with Y_j in S0 for all j >= k; M if none
  int unsafe_count = 0;
};

// Pure function of the recorded outputs.
RolloutScore score_trajectory(const Trajectory& traj, const SafeSet& safe_set);

struct EvalMetrics {
  double safe_traj_rate = 0.0;
  double avg_convergence_step = 0.0;
  double mean_unsafe_count = 0.0;
  int n_rollouts = 0;
  std::vector<std::uint64_t> seeds;
};

EvalMetrics aggregate(const std::vector<RolloutScore>& scores, const std::vector<std::uint64_t>& seeds);

enum class Variant { Base, Filtered, Offline };
const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct EvalModels {
  const FnoModel* online = nullptr;
  const FnoModel* offline = nullptr;
  const BarrierModel* bcbf = nullptr;
  FilterConfig filter;
};

struct EvalResult {
  std::string task_id;
  Variant variant = Variant::Base;
  EvalMetrics metrics;
  std::vector<RolloutScore> scores;
  std::vector<Trajectory> trajectories;
  std::vector<std::vector<StepDiagnostics>> diagnostics;  // filtered variants only
  double mean_filter_ms = 0.0;                            // mean controller wall time per step
};

// Rollout k uses seed rollout_seed(master_seed, k) for every variant, so the
// policy-noise streams match across variants.
EvalResult evaluate(const TaskSpec& spec, Variant variant, const EvalModels& models, int n,
                    std::uint64_t master_seed);

// Base-policy rollouts for training data.
std::vector<Trajectory> collect(const TaskSpec& spec, int n, std::uint64_t master_seed);

// Fixed-horizon operator: prefix sampling disabled (min = max = M).
NoTrainResult offline_baseline_build(const std::vector<Trajectory>& train,
                                     const std::vector<Trajectory>& test, FnoConfig cfg,
                                     const NoTrainOptions& opt);

// Writes trajectories, per-rollout scores, diagnostics and metrics.json into `dir`.
void write_eval(const EvalResult& r, const std::filesystem::path& dir);

// Rebuilds metrics from a directory written by write_eval and a safe set.
EvalResult read_eval(const std::filesystem::path& dir, const SafeSet& safe_set);

nlohmann::json metrics_json(const EvalMetrics& m);

// Markdown table with one row per (task, variant) result.
std::string summary_table(const std::vector<EvalResult>& results);

// summary.md plus, when `plots` is set, SVG plots of outputs and phi over time.
void report(const std::vector<EvalResult>& results, const std::filesystem::path& out_dir,
            bool plots = true);

// Line plot of several series sharing an x axis.
struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};
void write_svg_plot(const std::vector<PlotSeries>& series, const std::string& title,
                    const std::filesystem::path& path);

// Training recipe for the reference checkpoints of one task.
struct Recipe {
  int n_collect = 320;  // base rollouts, split into train and test
  int n_test = 64;
  FnoConfig fno;
  NoTrainOptions no;
  BarrierConfig barrier;
  BarrierTrainOptions barrier_opt;
};

// Settings used for the shipped experiments: 20 operator epochs, and a
// barrier trained with L2-coupled decay 0.01, margin 0.3 and no decrease term.
Recipe reference_recipe();

nlohmann::json recipe_json(const Recipe& r);

// Every task field, for cache stamps and manifests.
nlohmann::json task_json(const TaskSpec& spec);

struct ReferenceModels {
  FnoModel online;
  FnoModel offline;
  BarrierModel bcbf;
  Split data;
  std::vector<std::filesystem::path> files;  // online, offline, barrier checkpoints
};

// Collects data and trains the online operator, the fixed-horizon operator
// and the barrier. Checkpoints are cached in `cache_dir` under the task id and
// reused when the stored recipe stamp matches.
ReferenceModels reference_models(const TaskSpec& spec, const Recipe& recipe,
                                 const std::filesystem::path& cache_dir, std::uint64_t seed,
                                 std::ostream* log = nullptr);

// Run manifest: config, seeds, checkpoint digests and version.
void write_manifest(const std::filesystem::path& dir, const nlohmann::json& config,
                    std::uint64_t master_seed, const std::vector<std::filesystem::path>& checkpoints);

}  // namespace bsf
