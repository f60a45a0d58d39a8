#ifndef TEMPO_NNET_HPP_
#define TEMPO_NNET_HPP_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "tempo/rng.hpp"
#include "tempo/types.hpp"

namespace tempo::nnet {

enum class Backend { tabular, mlp };

// Shape metadata shared by policy and critic. The tabular backend is a dense
// table over all context-window tuples; the mlp backend is
// embed -> tanh hidden layer -> linear head.
struct BackboneShape {
  Backend backend = Backend::tabular;
  int context_window = 4;
  int vocab_size = 0;
  int embed_dim = 0;   // mlp only
  int hidden_dim = 0;  // mlp only
  int output_dim = 0;  // vocab_size for a policy head, 1 for a critic head
  TokenId pad_id = 0;

  std::size_t table_rows() const;  // tabular: vocab_size^context_window
  std::size_t param_count() const;
  void validate() const;

  // Flat-layout offsets (mlp): [embed | w1 | b1 | w2 | b2].
  std::size_t embed_offset() const { return 0; }
  std::size_t w1_offset() const;
  std::size_t b1_offset() const;
  std::size_t w2_offset() const;
  std::size_t b2_offset() const;
};

struct Params {
  BackboneShape shape;
  std::vector<double> values;
};

struct PolicyParams {
  Params core;
  int vocab_size() const { return core.shape.vocab_size; }
};

struct CriticParams {
  Params core;
};

// Gradient accumulator, shape-matched to the params it mirrors.
struct GradBuffer {
  explicit GradBuffer(const BackboneShape& shape);
  BackboneShape shape;
  std::vector<double> values;
  std::uint64_t accum_count = 0;

  void reset();
};

// Upstream gradient for one forward position: d(loss)/d(raw head output)
// evaluated at the given context. Raw means pre-softmax logits for a policy
// and the pre-squash score for a critic.
struct OutputGrad {
  TokenSeq context;
  std::vector<double> d_raw;
};

PolicyParams make_policy(const BackboneShape& shape, Rng& rng);
CriticParams make_critic(const BackboneShape& shape, Rng& rng);
// mlp: uniform(-0.08, 0.08) scaled by 1/sqrt(fan-in), biases zero;
// tabular: zeros (uniform policy / 0.5 critic).
void init_params(Params& params, Rng& rng);

// The trailing window of (prompt, response[0:t_exclusive)), left-padded with
// pad_id to exactly `window` tokens.
TokenSeq context_window(std::span<const TokenId> prompt,
                        std::span<const TokenId> response, int t_exclusive,
                        int window, TokenId pad_id);

// Raw head outputs for one context. Context must have at most
// context_window tokens (shorter contexts are left-padded).
std::vector<double> forward_raw(const Params& params,
                                std::span<const TokenId> context);

// Pre-softmax logits defining pi(. | context).
std::vector<double> policy_logits(const PolicyParams& policy,
                                  std::span<const TokenId> context);

struct SequenceLogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

// log pi(response | prompt) summed over response tokens, plus the per-token
// decomposition. Response must be non-empty.
SequenceLogProb sequence_logprob(const PolicyParams& policy,
                                 std::span<const TokenId> prompt,
                                 std::span<const TokenId> response);

// Ancestral sampling at the given temperature (> 0). Stops after emitting
// eos or at max_len tokens. Deterministic for a fixed rng state.
TokenSeq sample_response(const PolicyParams& policy,
                         std::span<const TokenId> prompt, int max_len,
                         double temperature, TokenId eos_id, Rng& rng);

// Argmax decoding (ties toward the lowest token id); consumes no randomness.
TokenSeq greedy_response(const PolicyParams& policy,
                         std::span<const TokenId> prompt, int max_len,
                         TokenId eos_id);

// V(prompt, response[0:t]) for t = 1..T, each squashed into (0, 1). The
// window for position t ends at response token t, so values are causal.
std::vector<double> critic_values(const CriticParams& critic,
                                  std::span<const TokenId> prompt,
                                  std::span<const TokenId> response);

// Accumulates analytic parameter gradients for the given upstream output
// gradients. Gradients add onto whatever the buffer already holds.
void backward(const Params& params, GradBuffer& grad,
              std::span<const OutputGrad> upstream);

// Single-position variant; does not advance the accumulation counter.
void backward_position(const Params& params, GradBuffer& grad,
                       std::span<const TokenId> context,
                       std::span<const double> d_raw);

// Convenience: accumulate d/dparams of sum_t coeff[t] * log pi(response[t] |
// context_t) into grad. Returns the weighted log-prob sum.
double accumulate_weighted_logprob_grad(const PolicyParams& policy,
                                        std::span<const TokenId> prompt,
                                        std::span<const TokenId> response,
                                        std::span<const double> coeff,
                                        GradBuffer& grad);

// Versioned binary checkpoint: backbone metadata plus raw 64-bit floats.
// Round-trips byte-stably.
void save_params(std::ostream& out, const Params& params);
Params load_params(std::istream& in);

}  // namespace tempo::nnet

#endif  // TEMPO_NNET_HPP_
