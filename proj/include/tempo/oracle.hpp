#ifndef TEMPO_ORACLE_HPP_
#define TEMPO_ORACLE_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "tempo/nnet.hpp"
#include "tempo/taskgen.hpp"
#include "tempo/types.hpp"

namespace tempo::oracle {

// Every sampling outcome of an autoregressive rollout capped at max_len:
// all eos-terminated sequences of length <= max_len plus all length-max_len
// sequences that never emit eos. Any policy's probability mass sums to 1
// over this set.
struct ResponseSpace {
  taskgen::Vocab vocab;
  int max_len = 0;
  std::vector<TokenSeq> sequences;

  std::size_t size() const { return sequences.size(); }

  // Throws ConfigError with a size report when the enumeration would exceed
  // the cap (default 10^7 sequences).
  static ResponseSpace enumerate(const taskgen::Vocab& vocab, int max_len,
                                 std::size_t cap = 10'000'000);
};

// A distribution over a ResponseSpace, aligned index-for-index with
// space.sequences.
struct QDistribution {
  const ResponseSpace* space = nullptr;
  std::vector<double> probs;

  void validate() const;  // mass >= 0, sums to 1 within 1e-10
};

// pi(y | prompt) for every sequence in the space.
std::vector<double> policy_probs(const nnet::PolicyParams& policy,
                                 std::span<const TokenId> prompt,
                                 const ResponseSpace& space);

// Correctness indicator for every sequence in the space (evaluation access).
std::vector<int> correctness_mask(const taskgen::Task& task,
                                  const ResponseSpace& space);

// P(Correct | x; theta): total policy mass on verifier-correct responses.
double exact_marginal(const nnet::PolicyParams& policy,
                      const taskgen::Task& task, const ResponseSpace& space);

struct ExactObjective {
  double value = 0.0;  // mean over tasks of log marginal; -inf when any is 0
  std::optional<std::int64_t> zero_marginal_task;
};

ExactObjective exact_objective(const nnet::PolicyParams& policy,
                               std::span<const taskgen::Task> tasks,
                               const ResponseSpace& space);

// q*(y|x) = correctness * pi / marginal. Throws NumericalError when the
// marginal is zero (posterior undefined).
QDistribution exact_posterior(const nnet::PolicyParams& policy,
                              const taskgen::Task& task,
                              const ResponseSpace& space);

// sum_y q(y) log [ I(y) pi(y) / q(y) ], with the 0 * log(0/0) = 0
// convention. Returns -inf when q puts mass on an incorrect or
// zero-probability response.
double elbo(const QDistribution& q, const nnet::PolicyParams& policy,
            const taskgen::Task& task);

// KL(q || posterior). Returns +inf on support mismatch. Satisfies
// elbo(q) + kl(q) = log marginal whenever both are finite.
double kl_q_posterior(const QDistribution& q, const nnet::PolicyParams& policy,
                      const taskgen::Task& task);

double kl_divergence(const QDistribution& q, const QDistribution& p);

// q(y|x) proportional to V(x, y_T) * pi(y|x), normalized over the space.
// Throws NumericalError when all weights vanish.
QDistribution critic_q(const nnet::CriticParams& critic,
                       const nnet::PolicyParams& policy,
                       const taskgen::Task& task, const ResponseSpace& space);

// Restriction of q to the verifier-correct subset, renormalized. Throws
// NumericalError when q has no mass there.
QDistribution project_to_correct(const QDistribution& q,
                                 const taskgen::Task& task);

double total_variation(const QDistribution& a, const QDistribution& b);

// Exact prefix statistics under the policy: visitation probability of each
// response prefix and the conditional probability that a rollout through it
// ends correct.
struct PrefixStat {
  TokenSeq prefix;
  double visitation = 0.0;
  double p_correct = 0.0;
};

std::vector<PrefixStat> prefix_correctness(const nnet::PolicyParams& policy,
                                           const taskgen::Task& task,
                                           const ResponseSpace& space);

// Debug dump: one {tokens, prob} record per line.
void dump_q(std::ostream& out, const QDistribution& q);

}  // namespace tempo::oracle

#endif  // TEMPO_ORACLE_HPP_
