#ifndef TEMPO_RUNNER_HPP_
#define TEMPO_RUNNER_HPP_

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tempo/emloop.hpp"
#include "tempo/metrics.hpp"
#include "tempo/runconfig.hpp"

namespace tempo::bench {

struct RunResult {
  std::string dir;
  std::vector<EvalRecord> records;
  emloop::MethodOutcome outcome;
  std::uint64_t sealed_training_reads = 0;  // audit delta over the whole run
};

// Stage 1 -> configured method's Stage 2 -> final evaluation. Writes into
// config.out_dir: config snapshot, task dumps, stage-1 and final checkpoints
// (+ optimizer sidecars), metrics.jsonl, timing.jsonl, summary.{json,txt}.
// init_from, when non-empty, points at a previous run directory whose
// stage-1 checkpoints are loaded instead of retraining.
RunResult run_experiment(const RunConfig& config,
                         const std::string& init_from = "");

// Stage 1 only (the `init` subcommand): trains, evaluates once, writes the
// same directory layout without a Stage-2 section.
RunResult run_stage1_only(const RunConfig& config);

// Evaluate a saved policy checkpoint on the config's splits.
std::vector<EvalRecord> evaluate_checkpoint(const RunConfig& config,
                                            const std::string& policy_path);

// Paired multi-run summary from the metric logs of the given directories.
nlohmann::json compare_runs(std::span<const std::string> dirs);
std::string comparison_table(const nlohmann::json& comparison);

}  // namespace tempo::bench

#endif  // TEMPO_RUNNER_HPP_
