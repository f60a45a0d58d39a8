#include "tempo/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "tempo/errors.hpp"

namespace tempo::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

ResponseSpace ResponseSpace::enumerate(const taskgen::Vocab& vocab, int max_len,
                                       std::size_t cap) {
  if (max_len < 1) throw ConfigError("response space: max_len must be >= 1");
  vocab.validate();

  std::vector<TokenId> non_eos;
  for (TokenId t = 0; t < vocab.size(); ++t) {
    if (t != vocab.eos_id) non_eos.push_back(t);
  }
  const std::size_t b = non_eos.size();

  // count = sum_{len=1..L} b^(len-1) (terminated) + b^L (tails)
  std::size_t count = 0;
  std::size_t pow = 1;
  for (int len = 1; len <= max_len; ++len) {
    if (count > cap - pow) {
      throw ConfigError("response space: enumeration exceeds cap of " +
                        std::to_string(cap) + " sequences");
    }
    count += pow;
    if (pow > cap / b) {
      throw ConfigError("response space: enumeration exceeds cap of " +
                        std::to_string(cap) + " sequences");
    }
    pow *= b;
  }
  if (count > cap - pow) {
    throw ConfigError("response space: enumeration exceeds cap of " +
                      std::to_string(cap) + " sequences (needs " +
                      std::to_string(count + pow) + ")");
  }
  count += pow;

  ResponseSpace space;
  space.vocab = vocab;
  space.max_len = max_len;
  space.sequences.reserve(count);

  // Ordered by length, then lexicographically over prefix token ids.
  for (int len = 1; len <= max_len; ++len) {
    const int prefix_len = len - 1;
    std::vector<std::size_t> odo(static_cast<std::size_t>(prefix_len), 0);
    while (true) {
      TokenSeq seq(static_cast<std::size_t>(len));
      for (int i = 0; i < prefix_len; ++i) seq[i] = non_eos[odo[i]];
      seq[prefix_len] = vocab.eos_id;
      space.sequences.push_back(std::move(seq));
      int pos = prefix_len - 1;
      while (pos >= 0 && odo[pos] + 1 == b) odo[pos--] = 0;
      if (pos < 0) break;
      ++odo[pos];
    }
  }
  {
    std::vector<std::size_t> odo(static_cast<std::size_t>(max_len), 0);
    while (true) {
      TokenSeq seq(static_cast<std::size_t>(max_len));
      for (int i = 0; i < max_len; ++i) seq[i] = non_eos[odo[i]];
      space.sequences.push_back(std::move(seq));
      int pos = max_len - 1;
      while (pos >= 0 && odo[pos] + 1 == b) odo[pos--] = 0;
      if (pos < 0) break;
      ++odo[pos];
    }
  }
  return space;
}

void QDistribution::validate() const {
  if (space == nullptr) throw ContractViolation("q distribution: no space attached");
  if (probs.size() != space->size()) {
    throw ContractViolation("q distribution: mass vector does not match the space");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ContractViolation("q distribution: negative or NaN mass");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-10) {
    throw ContractViolation("q distribution: mass sums to " + std::to_string(sum));
  }
}

std::vector<double> policy_probs(const nnet::PolicyParams& policy,
                                 std::span<const TokenId> prompt,
                                 const ResponseSpace& space) {
  std::vector<double> probs;
  probs.reserve(space.size());
  for (const TokenSeq& y : space.sequences) {
    probs.push_back(std::exp(nnet::sequence_logprob(policy, prompt, y).total));
  }
  return probs;
}

std::vector<int> correctness_mask(const taskgen::Task& task,
                                  const ResponseSpace& space) {
  std::vector<int> mask;
  mask.reserve(space.size());
  for (const TokenSeq& y : space.sequences) {
    mask.push_back(taskgen::verify(task, space.vocab, y, taskgen::Access::evaluation));
  }
  return mask;
}

double exact_marginal(const nnet::PolicyParams& policy,
                      const taskgen::Task& task, const ResponseSpace& space) {
  const std::vector<int> mask = correctness_mask(task, space);
  double total = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (mask[i] != 0) {
      total += std::exp(
          nnet::sequence_logprob(policy, task.prompt(), space.sequences[i]).total);
    }
  }
  return total;
}

ExactObjective exact_objective(const nnet::PolicyParams& policy,
                               std::span<const taskgen::Task> tasks,
                               const ResponseSpace& space) {
  if (tasks.empty()) throw ContractViolation("exact_objective: no tasks");
  ExactObjective out;
  double sum = 0.0;
  for (const taskgen::Task& task : tasks) {
    const double marginal = exact_marginal(policy, task, space);
    if (marginal <= 0.0) {
      out.value = -kInf;
      out.zero_marginal_task = task.id();
      return out;
    }
    sum += std::log(marginal);
  }
  out.value = sum / static_cast<double>(tasks.size());
  return out;
}

QDistribution exact_posterior(const nnet::PolicyParams& policy,
                              const taskgen::Task& task,
                              const ResponseSpace& space) {
  const std::vector<int> mask = correctness_mask(task, space);
  QDistribution q;
  q.space = &space;
  q.probs.assign(space.size(), 0.0);
  double marginal = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (mask[i] != 0) {
      q.probs[i] = std::exp(
          nnet::sequence_logprob(policy, task.prompt(), space.sequences[i]).total);
      marginal += q.probs[i];
    }
  }
  if (marginal <= 0.0) {
    throw NumericalError("exact_posterior: undefined, task " +
                         std::to_string(task.id()) + " has zero marginal");
  }
  for (double& p : q.probs) p /= marginal;
  return q;
}

double elbo(const QDistribution& q, const nnet::PolicyParams& policy,
            const taskgen::Task& task) {
  q.validate();
  const ResponseSpace& space = *q.space;
  const std::vector<int> mask = correctness_mask(task, space);
  double bound = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const double qi = q.probs[i];
    if (qi == 0.0) continue;  // 0 * log(0/0) = 0
    if (mask[i] == 0) return -kInf;
    const double log_pi =
        nnet::sequence_logprob(policy, task.prompt(), space.sequences[i]).total;
    if (!std::isfinite(log_pi)) return -kInf;
    bound += qi * (log_pi - std::log(qi));
  }
  return bound;
}

double kl_q_posterior(const QDistribution& q, const nnet::PolicyParams& policy,
                      const taskgen::Task& task) {
  const QDistribution posterior = exact_posterior(policy, task, *q.space);
  return kl_divergence(q, posterior);
}

double kl_divergence(const QDistribution& q, const QDistribution& p) {
  q.validate();
  p.validate();
  if (q.space != p.space) {
    throw ContractViolation("kl_divergence: distributions live on different spaces");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.probs.size(); ++i) {
    const double qi = q.probs[i];
    if (qi == 0.0) continue;
    if (p.probs[i] == 0.0) return kInf;
    kl += qi * std::log(qi / p.probs[i]);
  }
  return kl;
}

QDistribution critic_q(const nnet::CriticParams& critic,
                       const nnet::PolicyParams& policy,
                       const taskgen::Task& task, const ResponseSpace& space) {
  QDistribution q;
  q.space = &space;
  q.probs.resize(space.size());
  double total = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const TokenSeq& y = space.sequences[i];
    const double pi =
        std::exp(nnet::sequence_logprob(policy, task.prompt(), y).total);
    const double v = nnet::critic_values(critic, task.prompt(), y).back();
    q.probs[i] = v * pi;
    total += q.probs[i];
  }
  if (total <= 0.0) {
    throw NumericalError("critic_q: all critic-weighted masses are zero");
  }
  for (double& p : q.probs) p /= total;
  return q;
}

QDistribution project_to_correct(const QDistribution& q,
                                 const taskgen::Task& task) {
  q.validate();
  const std::vector<int> mask = correctness_mask(task, *q.space);
  QDistribution out;
  out.space = q.space;
  out.probs.assign(q.probs.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < q.probs.size(); ++i) {
    if (mask[i] != 0) {
      out.probs[i] = q.probs[i];
      total += q.probs[i];
    }
  }
  if (total <= 0.0) {
    throw NumericalError("project_to_correct: no mass on correct responses");
  }
  for (double& p : out.probs) p /= total;
  return out;
}

double total_variation(const QDistribution& a, const QDistribution& b) {
  a.validate();
  b.validate();
  if (a.space != b.space) {
    throw ContractViolation("total_variation: distributions live on different spaces");
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < a.probs.size(); ++i) {
    tv += std::abs(a.probs[i] - b.probs[i]);
  }
  return 0.5 * tv;
}

std::vector<PrefixStat> prefix_correctness(const nnet::PolicyParams& policy,
                                           const taskgen::Task& task,
                                           const ResponseSpace& space) {
  const std::vector<int> mask = correctness_mask(task, space);
  std::map<TokenSeq, std::pair<double, double>> acc;  // prefix -> {visit, correct}
  for (std::size_t i = 0; i < space.size(); ++i) {
    const TokenSeq& y = space.sequences[i];
    const double pi =
        std::exp(nnet::sequence_logprob(policy, task.prompt(), y).total);
    if (pi == 0.0) continue;
    for (std::size_t t = 1; t <= y.size(); ++t) {
      auto& entry = acc[TokenSeq(y.begin(), y.begin() + t)];
      entry.first += pi;
      if (mask[i] != 0) entry.second += pi;
    }
  }
  std::vector<PrefixStat> stats;
  stats.reserve(acc.size());
  for (const auto& [prefix, vc] : acc) {
    stats.push_back({prefix, vc.first, vc.first > 0.0 ? vc.second / vc.first : 0.0});
  }
  return stats;
}

void dump_q(std::ostream& out, const QDistribution& q) {
  q.validate();
  for (std::size_t i = 0; i < q.probs.size(); ++i) {
    nlohmann::json j;
    j["tokens"] = q.space->sequences[i];
    j["prob"] = q.probs[i];
    out << j.dump() << "\n";
  }
}

}  // namespace tempo::oracle
