#ifndef TEMPO_RLCORE_HPP_
#define TEMPO_RLCORE_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "tempo/nnet.hpp"
#include "tempo/rng.hpp"
#include "tempo/taskgen.hpp"
#include "tempo/types.hpp"

namespace tempo::rlcore {

// One sampled response with everything the losses need. Per-token vectors
// (behavior log-probs, critic values, advantages) all have length T =
// response length.
struct Trajectory {
  std::int64_t task_id = 0;
  TokenSeq prompt;
  TokenSeq response;
  std::vector<double> behavior_logprobs;
  std::vector<double> values;
  double reward = 0.0;
  std::optional<int> correctness;  // present only for verifier rewards
  std::optional<std::vector<double>> advantages;

  void validate() const;  // length agreement; advantages == reward - values
};

struct OptimizerState {
  enum class Scheme { sgd, adam };
  Scheme scheme = Scheme::adam;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> m;  // first moment (adam)
  std::vector<double> v;  // second moment (adam)

  static OptimizerState sgd(double lr);
  static OptimizerState adam(double lr);
};

// Options for the policy objective. Token-level ratio clipping is the
// default; the sequence-level mask is a simplified stand-in for a
// sequence-clip mechanism and drops a whole trajectory whose sequence
// importance ratio leaves [1 - seq_clip_low, 1 + seq_clip_high]. Entropy
// bonus and reference-KL penalty default to off.
struct PolicyLossConfig {
  bool clip_enabled = true;
  double clip_epsilon = 0.2;
  bool seq_clip_enabled = false;
  double seq_clip_low = 3e-4;
  double seq_clip_high = 5e-4;
  double entropy_bonus = 0.0;
  double kl_ref_weight = 0.0;
};

// R = verify(task, response); training access, so calling this on a sealed
// task is a contract violation.
int reward_verifiable(const taskgen::Task& task, const taskgen::Vocab& vocab,
                      std::span<const TokenId> response,
                      taskgen::Access access = taskgen::Access::training);

// R = terminal critic value V(x, y_T) in (0, 1).
double reward_critic(const nnet::CriticParams& critic,
                     std::span<const TokenId> prompt,
                     std::span<const TokenId> response);

// A_t = R - V_t, elementwise and exact.
std::vector<double> advantages(std::span<const double> values, double reward);

// Token-mean squared error of critic values against the binary correctness
// target, over every prefix position. Gradients accumulate into grad.
double critic_loss_and_grad(const nnet::CriticParams& critic,
                            std::span<const Trajectory> batch,
                            nnet::GradBuffer& grad);

// Clip-weighted negative log-likelihood:
//   loss = -mean_t [ cw(ratio_t) * A_t * log pi(y_t | .) ]
// where ratio_t = exp(log pi - behavior log pi) and cw clamps the ratio to
// [1 - eps, 1 + eps] (cw = 1 with clipping disabled). With clipping off and
// behavior == current params this is exactly the advantage-weighted NLL.
// The gradient is the exact derivative of this objective. `reference` is
// only read when kl_ref_weight > 0.
double policy_loss_and_grad(const nnet::PolicyParams& policy,
                            std::span<const Trajectory> batch,
                            const PolicyLossConfig& config,
                            nnet::GradBuffer& grad,
                            const nnet::PolicyParams* reference = nullptr);

// Applies one optimizer update in place. Rejects the step (params and state
// untouched) with NumericalError when the gradient is not finite.
void optimizer_step(nnet::Params& params, const nnet::GradBuffer& grad,
                    OptimizerState& state);

// Byte-stable optimizer-state round-trip, the companion of the parameter
// checkpoint for resumable runs.
void save_optimizer(std::ostream& out, const OptimizerState& state);
OptimizerState load_optimizer(std::istream& in);

struct Stage1Config {
  int steps = 300;
  int prompts_per_step = 32;
  int rollouts_per_prompt = 8;
  int max_len = 6;
  double lr_actor = 0.05;
  double lr_critic = 0.05;
  double temperature = 1.0;
  OptimizerState::Scheme scheme = OptimizerState::Scheme::adam;
  PolicyLossConfig policy_loss;

  void validate() const;
};

struct StepDiag {
  int step = 0;
  double mean_reward = 0.0;
  double policy_loss = 0.0;
  double critic_loss = 0.0;
};

struct Stage1Result {
  nnet::PolicyParams policy;
  nnet::CriticParams critic;
  OptimizerState policy_opt;
  OptimizerState critic_opt;
  std::vector<StepDiag> diags;
};

// Stage-1 RLVR on the labeled split: rollout groups per prompt, verifier
// rewards, advantages against critic values, then one policy and one critic
// update per step. Deterministic for a fixed rng state.
Stage1Result rlvr_init(const nnet::PolicyParams& policy0,
                       const nnet::CriticParams& critic0,
                       const taskgen::Vocab& vocab,
                       std::span<const taskgen::Task> labeled,
                       const Stage1Config& config, Rng& rng);

// Shared rollout helper: samples a group of responses for one task and
// fills behavior log-probs. Values/reward/advantages are left to the caller.
std::vector<Trajectory> rollout_group(const nnet::PolicyParams& policy,
                                      const taskgen::Task& task, int group_size,
                                      int max_len, double temperature,
                                      TokenId eos_id, Rng& rng);

}  // namespace tempo::rlcore

#endif  // TEMPO_RLCORE_HPP_
