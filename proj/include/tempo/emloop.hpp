#ifndef TEMPO_EMLOOP_HPP_
#define TEMPO_EMLOOP_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tempo/nnet.hpp"
#include "tempo/oracle.hpp"
#include "tempo/rlcore.hpp"
#include "tempo/rng.hpp"
#include "tempo/taskgen.hpp"

namespace tempo::emloop {

enum class Method { tempo, ttrl, empo, frozen_critic, supervised_ppo };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct TTTConfig {
  Method method = Method::tempo;
  int iterations = 300;  // N
  int e_step_period = 1;
  int prompts_per_step = 32;
  int rollouts_per_prompt = 8;  // G
  int max_len = 6;
  double lr_actor = 0.02;
  double lr_critic = 0.05;
  rlcore::PolicyLossConfig policy_loss;
  double temperature = 1.0;
  int eval_every = 10;
  std::uint64_t seed = 0;
  int e_step_prompts = 32;
  int e_step_rollouts = 8;
  // When set, the E-step resamples labeled items from a rollout buffer built
  // once from the initial policy instead of generating fresh responses.
  bool e_step_replay = false;
  rlcore::OptimizerState::Scheme scheme = rlcore::OptimizerState::Scheme::adam;

  void validate() const;
};

struct IterationDiag {
  int iteration = 0;
  double policy_loss = 0.0;
  double critic_loss = 0.0;
  double mean_reward = 0.0;
};

struct MethodOutcome {
  nnet::PolicyParams policy;
  std::optional<nnet::CriticParams> critic;
  int e_step_calls = 0;
  int m_step_calls = 0;
  std::vector<IterationDiag> diags;
  std::vector<double> elbo_timeline;  // one entry per iteration when probed
};

struct RunHooks {
  // Invoked at iteration 0 (the untouched starting point), every eval_every
  // iterations, and at the final iteration. The critic pointer is null for
  // methods that do not carry one.
  std::function<void(int iteration, const nnet::PolicyParams& policy,
                     const nnet::CriticParams* critic, const IterationDiag& diag)>
      on_eval;
  // Optional per-iteration probe (tiny instances only).
  std::function<double(const nnet::PolicyParams&, const nnet::CriticParams&)>
      elbo_probe;
};

struct ReplayBuffer {
  std::vector<rlcore::Trajectory> items;  // correctness filled
};

ReplayBuffer build_replay_buffer(const nnet::PolicyParams& policy,
                                 const taskgen::Vocab& vocab,
                                 std::span<const taskgen::Task> labeled,
                                 const TTTConfig& config, Rng& rng);

// Critic recalibration on labeled data: fresh responses from the current
// policy (or replay items), verifier labels, one MSE update. The policy is
// never touched. Returns the critic loss.
double e_step(nnet::CriticParams& critic, rlcore::OptimizerState& critic_opt,
              const nnet::PolicyParams& policy, const taskgen::Vocab& vocab,
              std::span<const taskgen::Task> labeled, const TTTConfig& config,
              Rng& rng, const ReplayBuffer* replay = nullptr);

struct MStepDiag {
  double policy_loss = 0.0;
  double mean_reward = 0.0;
};

// Policy refinement on unlabeled data: critic-scored rollouts, advantages
// R - V_t, one policy update. Never reads gold answers or calls the
// verifier.
MStepDiag m_step(nnet::PolicyParams& policy, rlcore::OptimizerState& policy_opt,
                 const nnet::CriticParams& critic, const taskgen::Vocab& vocab,
                 std::span<const taskgen::Task> unlabeled,
                 const TTTConfig& config, Rng& rng);

// Majority-consensus rewards: 1 for responses whose extracted answer matches
// the group majority (ties toward the smallest answer value), else 0. An
// all-malformed group earns all zeros.
std::vector<double> ttrl_rewards(std::span<const std::optional<int>> answers);

// Answer-cluster frequency weights in [0, 1]; malformed responses weigh 0.
std::vector<double> empo_rewards(std::span<const std::optional<int>> answers);

// Full alternating loop (Stage 2): every e_step_period-th iteration runs an
// E-step, every iteration runs an M-step.
MethodOutcome tempo_run(const taskgen::DatasetSplit& data,
                        const nnet::PolicyParams& theta0,
                        const nnet::CriticParams& phi0, const TTTConfig& config,
                        const RunHooks& hooks = {});

// TTRL / EMPO: group-relative advantages, no critic, no E-step.
MethodOutcome baseline_run(Method method, const taskgen::DatasetSplit& data,
                           const nnet::PolicyParams& theta0,
                           const TTTConfig& config, const RunHooks& hooks = {});

// frozen_critic: the alternating loop with the E-step disabled.
// supervised_ppo: continued RLVR on the labeled split only.
MethodOutcome ablation_run(Method method, const taskgen::DatasetSplit& data,
                           const nnet::PolicyParams& theta0,
                           const nnet::CriticParams& phi0,
                           const TTTConfig& config, const RunHooks& hooks = {});

// Dispatch by config.method.
MethodOutcome run_method(const taskgen::DatasetSplit& data,
                         const nnet::PolicyParams& theta0,
                         const nnet::CriticParams& phi0, const TTTConfig& config,
                         const RunHooks& hooks = {});

// ---------------------------------------------------------------------------
// Oracle-mode EM on enumerable tabular instances: exact posterior E-step and
// a full-batch M-step, used to test the monotone-improvement guarantee.

enum class OracleMStepMode {
  // Exact weighted-MLE maximizer: per-context normalized posterior counts.
  closed_form,
  // Expected policy-gradient step with exact prefix-value baselines,
  // optionally backtracking on the EM surrogate.
  expected_policy_gradient,
};

struct OracleEmOptions {
  int iterations = 50;
  OracleMStepMode mode = OracleMStepMode::closed_form;
  double learning_rate = 0.5;
  bool backtrack = true;
  int max_halvings = 40;
};

struct OracleEmResult {
  nnet::PolicyParams policy;
  std::vector<double> objective;  // exact J(theta_k) for k = 0..iterations
};

OracleEmResult oracle_em_run(const nnet::PolicyParams& theta0,
                             std::span<const taskgen::Task> tasks,
                             const oracle::ResponseSpace& space,
                             const OracleEmOptions& options);

}  // namespace tempo::emloop

#endif  // TEMPO_EMLOOP_HPP_
