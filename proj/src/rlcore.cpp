#include "tempo/rlcore.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "tempo/errors.hpp"
#include "tempo/mathutil.hpp"

namespace tempo::rlcore {

void Trajectory::validate() const {
  const std::size_t t = response.size();
  if (t == 0) throw ContractViolation("trajectory: empty response");
  if (behavior_logprobs.size() != t || values.size() != t) {
    throw ContractViolation("trajectory: per-token vector length mismatch");
  }
  if (advantages) {
    if (advantages->size() != t) {
      throw ContractViolation("trajectory: advantage length mismatch");
    }
    for (std::size_t i = 0; i < t; ++i) {
      if ((*advantages)[i] != reward - values[i]) {
        throw ContractViolation("trajectory: advantages are not reward - values");
      }
    }
  }
}

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.scheme = Scheme::sgd;
  s.learning_rate = lr;
  return s;
}

OptimizerState OptimizerState::adam(double lr) {
  OptimizerState s;
  s.scheme = Scheme::adam;
  s.learning_rate = lr;
  return s;
}

int reward_verifiable(const taskgen::Task& task, const taskgen::Vocab& vocab,
                      std::span<const TokenId> response, taskgen::Access access) {
  return taskgen::verify(task, vocab, response, access);
}

double reward_critic(const nnet::CriticParams& critic,
                     std::span<const TokenId> prompt,
                     std::span<const TokenId> response) {
  return nnet::critic_values(critic, prompt, response).back();
}

std::vector<double> advantages(std::span<const double> values, double reward) {
  if (values.empty()) throw ContractViolation("advantages: empty value vector");
  std::vector<double> advs(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) advs[i] = reward - values[i];
  return advs;
}

double critic_loss_and_grad(const nnet::CriticParams& critic,
                            std::span<const Trajectory> batch,
                            nnet::GradBuffer& grad) {
  std::size_t total_tokens = 0;
  for (const Trajectory& traj : batch) {
    if (!traj.correctness) {
      throw ContractViolation("critic loss: trajectory lacks verifier correctness");
    }
    if (traj.response.empty()) throw ContractViolation("critic loss: empty response");
    total_tokens += traj.response.size();
  }
  if (total_tokens == 0) throw ContractViolation("critic loss: empty batch");

  const nnet::BackboneShape& s = critic.core.shape;
  const double inv_n = 1.0 / static_cast<double>(total_tokens);
  double loss = 0.0;
  double d_raw[1];
  for (const Trajectory& traj : batch) {
    const double target = static_cast<double>(*traj.correctness);
    const std::vector<double> values =
        nnet::critic_values(critic, traj.prompt, traj.response);
    for (std::size_t t = 0; t < values.size(); ++t) {
      const double v = values[t];
      const double err = v - target;
      loss += err * err * inv_n;
      d_raw[0] = 2.0 * err * inv_n * v * (1.0 - v);
      const TokenSeq ctx = nnet::context_window(
          traj.prompt, traj.response, static_cast<int>(t) + 1, s.context_window,
          s.pad_id);
      nnet::backward_position(critic.core, grad, ctx, d_raw);
    }
  }
  grad.accum_count += 1;
  return loss;
}

double policy_loss_and_grad(const nnet::PolicyParams& policy,
                            std::span<const Trajectory> batch,
                            const PolicyLossConfig& config,
                            nnet::GradBuffer& grad,
                            const nnet::PolicyParams* reference) {
  if (config.kl_ref_weight != 0.0 && reference == nullptr) {
    throw ContractViolation("policy loss: kl_ref_weight set without a reference policy");
  }
  std::size_t total_tokens = 0;
  for (const Trajectory& traj : batch) {
    if (!traj.advantages) {
      throw ContractViolation("policy loss: trajectory lacks advantages");
    }
    traj.validate();
    total_tokens += traj.response.size();
  }
  if (total_tokens == 0) throw ContractViolation("policy loss: empty batch");

  const nnet::BackboneShape& s = policy.core.shape;
  const double inv_n = 1.0 / static_cast<double>(total_tokens);
  const double lo = 1.0 - config.clip_epsilon;
  const double hi = 1.0 + config.clip_epsilon;

  double loss = 0.0;
  std::vector<double> d_raw(static_cast<std::size_t>(s.output_dim));
  std::vector<double> ref_logp;
  for (const Trajectory& traj : batch) {
    const std::vector<double>& adv = *traj.advantages;
    const int t_len = static_cast<int>(traj.response.size());

    // Current per-token log-probs (and softmax) under the live parameters.
    std::vector<TokenSeq> contexts(t_len);
    std::vector<std::vector<double>> probs(t_len);
    std::vector<double> logp(t_len);
    double seq_logp = 0.0, seq_logp_behavior = 0.0;
    for (int t = 0; t < t_len; ++t) {
      contexts[t] = nnet::context_window(traj.prompt, traj.response, t,
                                         s.context_window, s.pad_id);
      probs[t] = nnet::policy_logits(policy, contexts[t]);
      const double lse = log_sum_exp(probs[t]);
      logp[t] = probs[t][traj.response[t]] - lse;
      softmax_inplace(probs[t]);
      seq_logp += logp[t];
      seq_logp_behavior += traj.behavior_logprobs[t];
    }

    // Simplified sequence-clip: drop the trajectory when its sequence-level
    // importance ratio leaves the configured band.
    double seq_mask = 1.0;
    if (config.seq_clip_enabled) {
      const double seq_ratio = std::exp(seq_logp - seq_logp_behavior);
      if (seq_ratio < 1.0 - config.seq_clip_low ||
          seq_ratio > 1.0 + config.seq_clip_high) {
        seq_mask = 0.0;
      }
    }

    for (int t = 0; t < t_len; ++t) {
      const TokenId y = traj.response[t];
      const double ratio = std::exp(logp[t] - traj.behavior_logprobs[t]);
      double cw = 1.0, cw_prime = 0.0;
      if (config.clip_enabled) {
        if (ratio <= lo) {
          cw = lo;
        } else if (ratio >= hi) {
          cw = hi;
        } else {
          cw = ratio;
          cw_prime = 1.0;
        }
      }

      loss -= seq_mask * cw * adv[t] * logp[t] * inv_n;
      // d(loss)/d(logp_t); the clip weight depends on theta through the ratio.
      const double d_logp =
          -seq_mask * adv[t] * (cw + cw_prime * ratio * logp[t]) * inv_n;

      const std::vector<double>& p = probs[t];
      for (int k = 0; k < s.output_dim; ++k) {
        d_raw[k] = d_logp * ((k == y ? 1.0 : 0.0) - p[k]);
      }

      if (config.entropy_bonus != 0.0) {
        double entropy = 0.0;
        for (double pk : p) {
          if (pk > 0.0) entropy -= pk * std::log(pk);
        }
        loss -= config.entropy_bonus * entropy * inv_n;
        for (int k = 0; k < s.output_dim; ++k) {
          const double logpk = p[k] > 0.0 ? std::log(p[k]) : 0.0;
          d_raw[k] += config.entropy_bonus * p[k] * (logpk + entropy) * inv_n;
        }
      }

      if (config.kl_ref_weight != 0.0) {
        std::vector<double> ref_logits = nnet::policy_logits(*reference, contexts[t]);
        const std::vector<double> ref_lsm = log_softmax(ref_logits);
        double kl = 0.0;
        for (int k = 0; k < s.output_dim; ++k) {
          if (p[k] > 0.0) kl += p[k] * (std::log(p[k]) - ref_lsm[k]);
        }
        loss += config.kl_ref_weight * kl * inv_n;
        for (int k = 0; k < s.output_dim; ++k) {
          const double logpk = p[k] > 0.0 ? std::log(p[k]) : 0.0;
          d_raw[k] += config.kl_ref_weight * p[k] * (logpk - ref_lsm[k] - kl) * inv_n;
        }
      }

      nnet::backward_position(policy.core, grad, contexts[t], d_raw);
    }
  }
  grad.accum_count += 1;
  return loss;
}

void optimizer_step(nnet::Params& params, const nnet::GradBuffer& grad,
                    OptimizerState& state) {
  const std::size_t n = params.values.size();
  if (grad.values.size() != n) {
    throw ContractViolation("optimizer_step: gradient shape mismatch");
  }
  for (double g : grad.values) {
    if (!std::isfinite(g)) {
      throw NumericalError("optimizer_step: non-finite gradient, step rejected");
    }
  }

  if (state.scheme == OptimizerState::Scheme::sgd) {
    state.step += 1;
    for (std::size_t i = 0; i < n; ++i) {
      params.values[i] -= state.learning_rate * grad.values[i];
    }
    return;
  }

  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw ContractViolation("optimizer_step: adam moment shape mismatch");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad.values[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params.values[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

namespace {

constexpr char kOptMagic[8] = {'T', 'O', 'P', 'T', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ConfigError("optimizer checkpoint: truncated stream");
  return value;
}

void write_blob(std::ostream& out, const std::vector<double>& v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_blob(std::istream& in) {
  const std::uint64_t n = read_pod<std::uint64_t>(in);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ConfigError("optimizer checkpoint: truncated blob");
  return v;
}

}  // namespace

void save_optimizer(std::ostream& out, const OptimizerState& state) {
  out.write(kOptMagic, sizeof(kOptMagic));
  write_pod<std::int32_t>(out, state.scheme == OptimizerState::Scheme::sgd ? 0 : 1);
  write_pod<double>(out, state.learning_rate);
  write_pod<double>(out, state.beta1);
  write_pod<double>(out, state.beta2);
  write_pod<double>(out, state.epsilon);
  write_pod<std::uint64_t>(out, state.step);
  write_blob(out, state.m);
  write_blob(out, state.v);
}

OptimizerState load_optimizer(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kOptMagic, sizeof(kOptMagic)) != 0) {
    throw ConfigError("optimizer checkpoint: bad magic");
  }
  OptimizerState state;
  state.scheme = read_pod<std::int32_t>(in) == 0 ? OptimizerState::Scheme::sgd
                                                 : OptimizerState::Scheme::adam;
  state.learning_rate = read_pod<double>(in);
  state.beta1 = read_pod<double>(in);
  state.beta2 = read_pod<double>(in);
  state.epsilon = read_pod<double>(in);
  state.step = read_pod<std::uint64_t>(in);
  state.m = read_blob(in);
  state.v = read_blob(in);
  return state;
}

void Stage1Config::validate() const {
  if (steps < 0) throw ConfigError("stage1: steps must be >= 0");
  if (prompts_per_step < 1) throw ConfigError("stage1: prompts_per_step must be >= 1");
  if (rollouts_per_prompt < 1) throw ConfigError("stage1: rollouts_per_prompt must be >= 1");
  if (max_len < 1) throw ConfigError("stage1: max_len must be >= 1");
  if (!(lr_actor > 0.0) || !(lr_critic > 0.0)) throw ConfigError("stage1: learning rates must be > 0");
  if (!(temperature > 0.0)) throw ConfigError("stage1: temperature must be > 0");
}

std::vector<Trajectory> rollout_group(const nnet::PolicyParams& policy,
                                      const taskgen::Task& task, int group_size,
                                      int max_len, double temperature,
                                      TokenId eos_id, Rng& rng) {
  std::vector<Trajectory> group;
  group.reserve(group_size);
  for (int g = 0; g < group_size; ++g) {
    Trajectory traj;
    traj.task_id = task.id();
    traj.prompt = task.prompt();
    traj.response = nnet::sample_response(policy, traj.prompt, max_len,
                                          temperature, eos_id, rng);
    traj.behavior_logprobs =
        nnet::sequence_logprob(policy, traj.prompt, traj.response).per_token;
    group.push_back(std::move(traj));
  }
  return group;
}

Stage1Result rlvr_init(const nnet::PolicyParams& policy0,
                       const nnet::CriticParams& critic0,
                       const taskgen::Vocab& vocab,
                       std::span<const taskgen::Task> labeled,
                       const Stage1Config& config, Rng& rng) {
  config.validate();
  if (labeled.empty()) throw ContractViolation("rlvr_init: labeled split is empty");

  Stage1Result result{policy0, critic0,
                      OptimizerState{}, OptimizerState{}, {}};
  result.policy_opt.scheme = config.scheme;
  result.policy_opt.learning_rate = config.lr_actor;
  result.critic_opt.scheme = config.scheme;
  result.critic_opt.learning_rate = config.lr_critic;

  nnet::GradBuffer policy_grad(result.policy.core.shape);
  nnet::GradBuffer critic_grad(result.critic.core.shape);

  for (int step = 0; step < config.steps; ++step) {
    std::vector<Trajectory> batch;
    batch.reserve(static_cast<std::size_t>(config.prompts_per_step) *
                  config.rollouts_per_prompt);
    double reward_sum = 0.0;
    for (int p = 0; p < config.prompts_per_step; ++p) {
      const taskgen::Task& task = labeled[rng.uniform_int(labeled.size())];
      std::vector<Trajectory> group =
          rollout_group(result.policy, task, config.rollouts_per_prompt,
                        config.max_len, config.temperature, vocab.eos_id, rng);
      for (Trajectory& traj : group) {
        const int correct = reward_verifiable(task, vocab, traj.response);
        traj.correctness = correct;
        traj.reward = static_cast<double>(correct);
        traj.values = nnet::critic_values(result.critic, traj.prompt, traj.response);
        traj.advantages = advantages(traj.values, traj.reward);
        reward_sum += traj.reward;
        batch.push_back(std::move(traj));
      }
    }

    policy_grad.reset();
    const double policy_loss = policy_loss_and_grad(
        result.policy, batch, config.policy_loss, policy_grad);
    optimizer_step(result.policy.core, policy_grad, result.policy_opt);

    critic_grad.reset();
    const double critic_loss =
        critic_loss_and_grad(result.critic, batch, critic_grad);
    optimizer_step(result.critic.core, critic_grad, result.critic_opt);

    result.diags.push_back({step,
                            reward_sum / static_cast<double>(batch.size()),
                            policy_loss, critic_loss});
  }
  return result;
}

}  // namespace tempo::rlcore
