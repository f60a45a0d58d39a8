#include "tempo/emloop.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "tempo/errors.hpp"
#include "tempo/mathutil.hpp"

namespace tempo::emloop {

std::string to_string(Method method) {
  switch (method) {
    case Method::tempo: return "tempo";
    case Method::ttrl: return "ttrl";
    case Method::empo: return "empo";
    case Method::frozen_critic: return "frozen_critic";
    case Method::supervised_ppo: return "supervised_ppo";
  }
  throw ContractViolation("unknown method");
}

Method method_from_string(const std::string& name) {
  if (name == "tempo") return Method::tempo;
  if (name == "ttrl") return Method::ttrl;
  if (name == "empo") return Method::empo;
  if (name == "frozen_critic") return Method::frozen_critic;
  if (name == "supervised_ppo") return Method::supervised_ppo;
  throw ConfigError("unknown method '" + name + "'");
}

void TTTConfig::validate() const {
  if (iterations < 0) throw ConfigError("ttt: iterations must be >= 0");
  if (e_step_period < 1) throw ConfigError("ttt: e_step_period must be >= 1");
  if (prompts_per_step < 1) throw ConfigError("ttt: prompts_per_step must be >= 1");
  if (rollouts_per_prompt < 1) throw ConfigError("ttt: rollouts_per_prompt must be >= 1");
  if ((method == Method::ttrl || method == Method::empo) && rollouts_per_prompt < 2) {
    throw ConfigError("ttt: voting methods need rollouts_per_prompt >= 2");
  }
  if (max_len < 1) throw ConfigError("ttt: max_len must be >= 1");
  if (!(lr_actor > 0.0) || !(lr_critic > 0.0)) {
    throw ConfigError("ttt: learning rates must be > 0");
  }
  if (!(temperature > 0.0)) throw ConfigError("ttt: temperature must be > 0");
  if (eval_every < 1) throw ConfigError("ttt: eval_every must be >= 1");
  if (e_step_prompts < 1 || e_step_rollouts < 1) {
    throw ConfigError("ttt: e-step batch shape must be >= 1");
  }
}

ReplayBuffer build_replay_buffer(const nnet::PolicyParams& policy,
                                 const taskgen::Vocab& vocab,
                                 std::span<const taskgen::Task> labeled,
                                 const TTTConfig& config, Rng& rng) {
  if (labeled.empty()) throw ContractViolation("replay buffer: labeled split is empty");
  ReplayBuffer buffer;
  for (const taskgen::Task& task : labeled) {
    std::vector<rlcore::Trajectory> group = rlcore::rollout_group(
        policy, task, config.e_step_rollouts, config.max_len, config.temperature,
        vocab.eos_id, rng);
    for (rlcore::Trajectory& traj : group) {
      traj.correctness = rlcore::reward_verifiable(task, vocab, traj.response);
      traj.reward = static_cast<double>(*traj.correctness);
      buffer.items.push_back(std::move(traj));
    }
  }
  return buffer;
}

double e_step(nnet::CriticParams& critic, rlcore::OptimizerState& critic_opt,
              const nnet::PolicyParams& policy, const taskgen::Vocab& vocab,
              std::span<const taskgen::Task> labeled, const TTTConfig& config,
              Rng& rng, const ReplayBuffer* replay) {
  if (labeled.empty()) throw ContractViolation("e_step: labeled split is empty");

  std::vector<rlcore::Trajectory> batch;
  if (config.e_step_replay) {
    if (replay == nullptr || replay->items.empty()) {
      throw ContractViolation("e_step: replay mode without a replay buffer");
    }
    const int want = config.e_step_prompts * config.e_step_rollouts;
    batch.reserve(want);
    for (int i = 0; i < want; ++i) {
      batch.push_back(replay->items[rng.uniform_int(replay->items.size())]);
    }
  } else {
    batch.reserve(static_cast<std::size_t>(config.e_step_prompts) *
                  config.e_step_rollouts);
    for (int p = 0; p < config.e_step_prompts; ++p) {
      const taskgen::Task& task = labeled[rng.uniform_int(labeled.size())];
      std::vector<rlcore::Trajectory> group = rlcore::rollout_group(
          policy, task, config.e_step_rollouts, config.max_len,
          config.temperature, vocab.eos_id, rng);
      for (rlcore::Trajectory& traj : group) {
        traj.correctness = rlcore::reward_verifiable(task, vocab, traj.response);
        traj.reward = static_cast<double>(*traj.correctness);
        batch.push_back(std::move(traj));
      }
    }
  }

  nnet::GradBuffer grad(critic.core.shape);
  const double loss = rlcore::critic_loss_and_grad(critic, batch, grad);
  rlcore::optimizer_step(critic.core, grad, critic_opt);
  return loss;
}

MStepDiag m_step(nnet::PolicyParams& policy, rlcore::OptimizerState& policy_opt,
                 const nnet::CriticParams& critic, const taskgen::Vocab& vocab,
                 std::span<const taskgen::Task> unlabeled,
                 const TTTConfig& config, Rng& rng) {
  if (unlabeled.empty()) throw ContractViolation("m_step: unlabeled split is empty");

  std::vector<rlcore::Trajectory> batch;
  batch.reserve(static_cast<std::size_t>(config.prompts_per_step) *
                config.rollouts_per_prompt);
  double reward_sum = 0.0;
  for (int p = 0; p < config.prompts_per_step; ++p) {
    const taskgen::Task& task = unlabeled[rng.uniform_int(unlabeled.size())];
    std::vector<rlcore::Trajectory> group = rlcore::rollout_group(
        policy, task, config.rollouts_per_prompt, config.max_len,
        config.temperature, vocab.eos_id, rng);
    for (rlcore::Trajectory& traj : group) {
      traj.values = nnet::critic_values(critic, traj.prompt, traj.response);
      traj.reward = traj.values.back();  // R = V(x, y_T)
      traj.advantages = rlcore::advantages(traj.values, traj.reward);
      reward_sum += traj.reward;
      batch.push_back(std::move(traj));
    }
  }

  nnet::GradBuffer grad(policy.core.shape);
  MStepDiag diag;
  diag.policy_loss =
      rlcore::policy_loss_and_grad(policy, batch, config.policy_loss, grad);
  rlcore::optimizer_step(policy.core, grad, policy_opt);
  diag.mean_reward = reward_sum / static_cast<double>(batch.size());
  return diag;
}

std::vector<double> ttrl_rewards(std::span<const std::optional<int>> answers) {
  if (answers.size() < 2) {
    throw ContractViolation("ttrl_rewards: needs a group of at least 2");
  }
  std::map<int, int> counts;
  for (const auto& a : answers) {
    if (a) counts[*a] += 1;
  }
  std::vector<double> rewards(answers.size(), 0.0);
  if (counts.empty()) return rewards;  // all malformed

  // Majority answer; ties resolved toward the smallest answer value (the
  // ascending map order makes the first maximum the smallest).
  int majority = counts.begin()->first;
  int best = 0;
  for (const auto& [answer, count] : counts) {
    if (count > best) {
      best = count;
      majority = answer;
    }
  }
  for (std::size_t i = 0; i < answers.size(); ++i) {
    rewards[i] = (answers[i] && *answers[i] == majority) ? 1.0 : 0.0;
  }
  return rewards;
}

std::vector<double> empo_rewards(std::span<const std::optional<int>> answers) {
  if (answers.size() < 2) {
    throw ContractViolation("empo_rewards: needs a group of at least 2");
  }
  std::map<int, int> counts;
  for (const auto& a : answers) {
    if (a) counts[*a] += 1;
  }
  std::vector<double> weights(answers.size(), 0.0);
  const double group = static_cast<double>(answers.size());
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (answers[i]) weights[i] = counts[*answers[i]] / group;
  }
  return weights;
}

namespace {

// One group-relative policy step on unlabeled prompts for TTRL / EMPO. The
// group mean acts as the per-token baseline, so A_t = r_i - mean(r).
MStepDiag baseline_m_step(nnet::PolicyParams& policy,
                          rlcore::OptimizerState& policy_opt, Method method,
                          const taskgen::Vocab& vocab,
                          std::span<const taskgen::Task> unlabeled,
                          const TTTConfig& config, Rng& rng) {
  std::vector<rlcore::Trajectory> batch;
  batch.reserve(static_cast<std::size_t>(config.prompts_per_step) *
                config.rollouts_per_prompt);
  double reward_sum = 0.0;
  for (int p = 0; p < config.prompts_per_step; ++p) {
    const taskgen::Task& task = unlabeled[rng.uniform_int(unlabeled.size())];
    std::vector<rlcore::Trajectory> group = rlcore::rollout_group(
        policy, task, config.rollouts_per_prompt, config.max_len,
        config.temperature, vocab.eos_id, rng);

    std::vector<std::optional<int>> answers;
    answers.reserve(group.size());
    for (const rlcore::Trajectory& traj : group) {
      answers.push_back(taskgen::extract_answer(vocab, task.modulus(), traj.response));
    }
    const std::vector<double> rewards = method == Method::ttrl
                                            ? ttrl_rewards(answers)
                                            : empo_rewards(answers);
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());

    for (std::size_t g = 0; g < group.size(); ++g) {
      rlcore::Trajectory& traj = group[g];
      traj.reward = rewards[g];
      traj.values.assign(traj.response.size(), mean);
      traj.advantages = rlcore::advantages(traj.values, traj.reward);
      reward_sum += traj.reward;
      batch.push_back(std::move(traj));
    }
  }

  nnet::GradBuffer grad(policy.core.shape);
  MStepDiag diag;
  diag.policy_loss =
      rlcore::policy_loss_and_grad(policy, batch, config.policy_loss, grad);
  rlcore::optimizer_step(policy.core, grad, policy_opt);
  diag.mean_reward = reward_sum / static_cast<double>(batch.size());
  return diag;
}

// One continued-RLVR step on the labeled split (supervised_ppo ablation).
IterationDiag supervised_step(nnet::PolicyParams& policy,
                              rlcore::OptimizerState& policy_opt,
                              nnet::CriticParams& critic,
                              rlcore::OptimizerState& critic_opt,
                              const taskgen::Vocab& vocab,
                              std::span<const taskgen::Task> labeled,
                              const TTTConfig& config, Rng& rng) {
  std::vector<rlcore::Trajectory> batch;
  batch.reserve(static_cast<std::size_t>(config.prompts_per_step) *
                config.rollouts_per_prompt);
  double reward_sum = 0.0;
  for (int p = 0; p < config.prompts_per_step; ++p) {
    const taskgen::Task& task = labeled[rng.uniform_int(labeled.size())];
    std::vector<rlcore::Trajectory> group = rlcore::rollout_group(
        policy, task, config.rollouts_per_prompt, config.max_len,
        config.temperature, vocab.eos_id, rng);
    for (rlcore::Trajectory& traj : group) {
      traj.correctness = rlcore::reward_verifiable(task, vocab, traj.response);
      traj.reward = static_cast<double>(*traj.correctness);
      traj.values = nnet::critic_values(critic, traj.prompt, traj.response);
      traj.advantages = rlcore::advantages(traj.values, traj.reward);
      reward_sum += traj.reward;
      batch.push_back(std::move(traj));
    }
  }

  IterationDiag diag;
  nnet::GradBuffer policy_grad(policy.core.shape);
  diag.policy_loss =
      rlcore::policy_loss_and_grad(policy, batch, config.policy_loss, policy_grad);
  rlcore::optimizer_step(policy.core, policy_grad, policy_opt);

  nnet::GradBuffer critic_grad(critic.core.shape);
  diag.critic_loss = rlcore::critic_loss_and_grad(critic, batch, critic_grad);
  rlcore::optimizer_step(critic.core, critic_grad, critic_opt);

  diag.mean_reward = reward_sum / static_cast<double>(batch.size());
  return diag;
}

MethodOutcome run_loop(Method method, const taskgen::DatasetSplit& data,
                       const nnet::PolicyParams& theta0,
                       const nnet::CriticParams* phi0, const TTTConfig& config,
                       const RunHooks& hooks) {
  config.validate();
  const bool has_critic = phi0 != nullptr;

  MethodOutcome out;
  out.policy = theta0;
  if (has_critic) out.critic = *phi0;

  rlcore::OptimizerState policy_opt;
  policy_opt.scheme = config.scheme;
  policy_opt.learning_rate = config.lr_actor;
  rlcore::OptimizerState critic_opt;
  critic_opt.scheme = config.scheme;
  critic_opt.learning_rate = config.lr_critic;

  Rng rng(config.seed);
  ReplayBuffer replay;
  if (method == Method::tempo && config.e_step_replay) {
    replay = build_replay_buffer(out.policy, data.vocab, data.labeled, config, rng);
  }

  const auto eval_now = [&](int iteration, const IterationDiag& diag) {
    if (hooks.on_eval) {
      hooks.on_eval(iteration, out.policy,
                    out.critic ? &*out.critic : nullptr, diag);
    }
  };

  eval_now(0, IterationDiag{});
  for (int k = 1; k <= config.iterations; ++k) {
    IterationDiag diag;
    diag.iteration = k;
    switch (method) {
      case Method::tempo: {
        if ((k - 1) % config.e_step_period == 0) {
          diag.critic_loss = e_step(*out.critic, critic_opt, out.policy,
                                    data.vocab, data.labeled, config, rng,
                                    config.e_step_replay ? &replay : nullptr);
          out.e_step_calls += 1;
        }
        const MStepDiag m = m_step(out.policy, policy_opt, *out.critic,
                                   data.vocab, data.unlabeled, config, rng);
        diag.policy_loss = m.policy_loss;
        diag.mean_reward = m.mean_reward;
        out.m_step_calls += 1;
        break;
      }
      case Method::frozen_critic: {
        const MStepDiag m = m_step(out.policy, policy_opt, *out.critic,
                                   data.vocab, data.unlabeled, config, rng);
        diag.policy_loss = m.policy_loss;
        diag.mean_reward = m.mean_reward;
        out.m_step_calls += 1;
        break;
      }
      case Method::ttrl:
      case Method::empo: {
        const MStepDiag m = baseline_m_step(out.policy, policy_opt, method,
                                            data.vocab, data.unlabeled, config,
                                            rng);
        diag.policy_loss = m.policy_loss;
        diag.mean_reward = m.mean_reward;
        out.m_step_calls += 1;
        break;
      }
      case Method::supervised_ppo: {
        diag = supervised_step(out.policy, policy_opt, *out.critic, critic_opt,
                               data.vocab, data.labeled, config, rng);
        diag.iteration = k;
        break;
      }
    }

    if (hooks.elbo_probe && out.critic) {
      out.elbo_timeline.push_back(hooks.elbo_probe(out.policy, *out.critic));
    }
    if (k % config.eval_every == 0 || k == config.iterations) eval_now(k, diag);
    out.diags.push_back(diag);
  }
  return out;
}

}  // namespace

MethodOutcome tempo_run(const taskgen::DatasetSplit& data,
                        const nnet::PolicyParams& theta0,
                        const nnet::CriticParams& phi0, const TTTConfig& config,
                        const RunHooks& hooks) {
  if (config.method != Method::tempo) {
    throw ContractViolation("tempo_run: wrong entry point for method " +
                            to_string(config.method));
  }
  return run_loop(Method::tempo, data, theta0, &phi0, config, hooks);
}

MethodOutcome baseline_run(Method method, const taskgen::DatasetSplit& data,
                           const nnet::PolicyParams& theta0,
                           const TTTConfig& config, const RunHooks& hooks) {
  if (method != Method::ttrl && method != Method::empo) {
    throw ContractViolation("baseline_run: wrong entry point for method " +
                            to_string(method));
  }
  return run_loop(method, data, theta0, nullptr, config, hooks);
}

MethodOutcome ablation_run(Method method, const taskgen::DatasetSplit& data,
                           const nnet::PolicyParams& theta0,
                           const nnet::CriticParams& phi0,
                           const TTTConfig& config, const RunHooks& hooks) {
  if (method != Method::frozen_critic && method != Method::supervised_ppo) {
    throw ContractViolation("ablation_run: wrong entry point for method " +
                            to_string(method));
  }
  return run_loop(method, data, theta0, &phi0, config, hooks);
}

MethodOutcome run_method(const taskgen::DatasetSplit& data,
                         const nnet::PolicyParams& theta0,
                         const nnet::CriticParams& phi0, const TTTConfig& config,
                         const RunHooks& hooks) {
  switch (config.method) {
    case Method::tempo:
      return tempo_run(data, theta0, phi0, config, hooks);
    case Method::ttrl:
    case Method::empo:
      return baseline_run(config.method, data, theta0, config, hooks);
    case Method::frozen_critic:
    case Method::supervised_ppo:
      return ablation_run(config.method, data, theta0, phi0, config, hooks);
  }
  throw ContractViolation("run_method: unknown method");
}

// ---------------------------------------------------------------------------
// Oracle-mode EM.

namespace {

// Exact maximizer of sum_x sum_y q_x(y) log pi(y | x): per-context softmax
// logits set to log of the aggregated posterior transition counts. Rows no
// posterior mass passes through are left unchanged; they cannot affect any
// task's marginal.
void closed_form_m_step(nnet::PolicyParams& policy,
                        std::span<const taskgen::Task> tasks,
                        const oracle::ResponseSpace& space) {
  const nnet::BackboneShape& s = policy.core.shape;
  const std::size_t rows = s.table_rows();
  std::vector<double> counts(rows * static_cast<std::size_t>(s.output_dim), 0.0);

  for (const taskgen::Task& task : tasks) {
    const oracle::QDistribution q = oracle::exact_posterior(policy, task, space);
    for (std::size_t i = 0; i < space.size(); ++i) {
      if (q.probs[i] == 0.0) continue;
      const TokenSeq& y = space.sequences[i];
      for (int t = 0; t < static_cast<int>(y.size()); ++t) {
        const TokenSeq ctx = nnet::context_window(task.prompt(), y, t,
                                                  s.context_window, s.pad_id);
        std::size_t idx = 0, stride = 1;
        for (int j = 0; j < s.context_window; ++j) {
          idx += static_cast<std::size_t>(ctx[j]) * stride;
          stride *= static_cast<std::size_t>(s.vocab_size);
        }
        counts[idx * s.output_dim + y[t]] += q.probs[i];
      }
    }
  }

  for (std::size_t row = 0; row < rows; ++row) {
    double row_total = 0.0;
    double row_max = 0.0;
    for (int k = 0; k < s.output_dim; ++k) {
      row_total += counts[row * s.output_dim + k];
      row_max = std::max(row_max, counts[row * s.output_dim + k]);
    }
    if (row_total == 0.0) continue;
    // Zero-count tokens get a logit far enough below the row maximum that
    // their softmax mass underflows to exactly zero.
    const double floor = std::log(row_max) - 1400.0;
    for (int k = 0; k < s.output_dim; ++k) {
      const double c = counts[row * s.output_dim + k];
      policy.core.values[row * s.output_dim + k] = c > 0.0 ? std::log(c) : floor;
    }
  }
}

// Expected policy-gradient M-step with exact prefix-value baselines:
// direction = sum_x sum_y pi(y|x) sum_t (I(y) - P(Correct|prefix_t)) grad log pi.
void expected_pg_m_step(nnet::PolicyParams& policy,
                        std::span<const taskgen::Task> tasks,
                        const oracle::ResponseSpace& space,
                        const OracleEmOptions& options, double j_old) {
  nnet::GradBuffer grad(policy.core.shape);
  for (const taskgen::Task& task : tasks) {
    std::map<TokenSeq, double> prefix_value;
    for (const oracle::PrefixStat& stat :
         oracle::prefix_correctness(policy, task, space)) {
      prefix_value[stat.prefix] = stat.p_correct;
    }
    const std::vector<double> probs = oracle::policy_probs(policy, task.prompt(), space);
    const std::vector<int> mask = oracle::correctness_mask(task, space);
    for (std::size_t i = 0; i < space.size(); ++i) {
      if (probs[i] == 0.0) continue;
      const TokenSeq& y = space.sequences[i];
      std::vector<double> coeff(y.size());
      for (std::size_t t = 0; t < y.size(); ++t) {
        const double baseline = prefix_value.at(TokenSeq(y.begin(), y.begin() + t + 1));
        coeff[t] = probs[i] * (static_cast<double>(mask[i]) - baseline) /
                   static_cast<double>(tasks.size());
      }
      nnet::accumulate_weighted_logprob_grad(policy, task.prompt(), y, coeff, grad);
    }
  }

  double lr = options.learning_rate;
  const std::vector<double> base = policy.core.values;
  for (int attempt = 0; attempt <= options.max_halvings; ++attempt) {
    for (std::size_t i = 0; i < base.size(); ++i) {
      policy.core.values[i] = base[i] + lr * grad.values[i];
    }
    if (!options.backtrack) return;
    const double j_try = oracle::exact_objective(policy, tasks, space).value;
    if (j_try >= j_old - 1e-12) return;
    lr *= 0.5;
  }
  policy.core.values = base;  // no improving step found; keep the iterate
}

}  // namespace

OracleEmResult oracle_em_run(const nnet::PolicyParams& theta0,
                             std::span<const taskgen::Task> tasks,
                             const oracle::ResponseSpace& space,
                             const OracleEmOptions& options) {
  if (theta0.core.shape.backend != nnet::Backend::tabular) {
    throw ContractViolation("oracle_em_run: requires the tabular backend");
  }
  if (tasks.empty()) throw ContractViolation("oracle_em_run: no tasks");

  OracleEmResult result;
  result.policy = theta0;
  result.objective.reserve(options.iterations + 1);
  result.objective.push_back(
      oracle::exact_objective(result.policy, tasks, space).value);

  for (int k = 0; k < options.iterations; ++k) {
    if (options.mode == OracleMStepMode::closed_form) {
      closed_form_m_step(result.policy, tasks, space);
    } else {
      expected_pg_m_step(result.policy, tasks, space, options,
                         result.objective.back());
    }
    result.objective.push_back(
        oracle::exact_objective(result.policy, tasks, space).value);
  }
  return result;
}

}  // namespace tempo::emloop
